//! Sample-metadata ingestion: tab-separated tables in, per-sample node-spec
//! trees out.
//!
//! A [`MetadataManifest`] drives everything: which columns identify the file
//! and collection, which eight columns describe the source organism, and a
//! per-column rule — `Reused` (literal or direct ontology-term edge),
//! `Mapped` (shared named individual in the schema namespace), or `Skip` —
//! optionally routed through a compositional parser first (solvent mixtures,
//! multi-step method phrases).
//!
//! Organism descriptions are deduplicated before emission: each distinct
//! 8-field combination becomes one minted individual every matching sample
//! points at with `prov:wasDerivedFrom`. Mapped values go through a
//! two-pass [`MappingDictionary`] so the same `(class, value)` pair resolves
//! to the same individual IRI in every row and batch; the dictionary is also
//! exported as a JSON sidecar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::align::{match_term, requires_curation, CurationChoice, CurationFile, TermIndex};
use crate::emit::locator_to_url;
use crate::ident::{IdentError, Uai, UriMinter, UriSpec};
use crate::node::{ModelError, NodeSpec, TypedLiteral, XSD_STRING};
use crate::vocab::{terms, NamespaceRegistry, OntologyTermRef, VocabError};

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("failed to read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("metadata table has no header row")]
    MissingHeader,
    #[error("duplicate column `{0}` in header")]
    DuplicateColumn(String),
    #[error("required column `{0}` is not in the header")]
    MissingColumn(String),
    #[error("no records to process")]
    EmptyInput,
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: column `{column}` has no mapping rule")]
    UnmappedColumn { row: usize, column: String },
    #[error("cannot parse `{raw}` as a solvent mixture: {reason}")]
    UnparseableMixture { raw: String, reason: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("failed to parse manifest TOML: {0}")]
    ManifestToml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ident(#[from] IdentError),
}

// ---------------------------------------------------------------------------
// Manifest

/// How one metadata column reaches the graph.
#[derive(Debug, Clone)]
pub enum Strategy {
    /// Keep the value: as a typed literal, or — with `ontology_match` — as a
    /// direct edge to an ontology term when curation/matching resolves one.
    Reused { datatype: String, ontology_match: bool },
    /// Replace the value with a shared named individual typed `target_class`,
    /// minted once per distinct value under the schema namespace with the
    /// given IRI stem.
    Mapped { target_class: OntologyTermRef, stem: String },
    /// Emit nothing.
    Skip,
}

/// Pre-processing applied to a column's raw value before its strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueParser {
    None,
    SolventMixture,
    MethodPhrase,
}

#[derive(Debug, Clone)]
pub struct ColumnRule {
    pub predicate: OntologyTermRef,
    pub strategy: Strategy,
    pub parser: ValueParser,
}

/// The two columns that identify each row, plus the markers meaning
/// "missing". Marker comparison is case-insensitive.
#[derive(Debug, Clone)]
pub struct TableConfig {
    pub filename_column: String,
    pub collection_column: String,
    pub missing_markers: Vec<String>,
}

/// The eight columns that together describe a source organism.
#[derive(Debug, Clone)]
pub struct OrganismConfig {
    pub taxonomy_column: String,
    pub country_column: String,
    pub biome_column: String,
    pub material_column: String,
    pub sex_column: String,
    pub life_stage_column: String,
    pub health_status_column: String,
    pub age_column: String,
}

impl OrganismConfig {
    /// Column names in the fixed organism-key field order.
    pub fn columns(&self) -> [&str; 8] {
        [
            &self.taxonomy_column,
            &self.country_column,
            &self.biome_column,
            &self.material_column,
            &self.sex_column,
            &self.life_stage_column,
            &self.health_status_column,
            &self.age_column,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct MetadataManifest {
    pub table: TableConfig,
    pub organism: OrganismConfig,
    rules: BTreeMap<String, ColumnRule>,
}

#[derive(Debug, Deserialize)]
struct RawManifest {
    table: RawTable,
    organism: Option<RawOrganism>,
    #[serde(default, rename = "column")]
    columns: Vec<RawColumn>,
}

#[derive(Debug, Deserialize)]
struct RawTable {
    filename_column: String,
    collection_column: String,
    #[serde(default)]
    missing_markers: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
struct RawOrganism {
    taxonomy_column: Option<String>,
    country_column: Option<String>,
    biome_column: Option<String>,
    material_column: Option<String>,
    sex_column: Option<String>,
    life_stage_column: Option<String>,
    health_status_column: Option<String>,
    age_column: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawColumn {
    name: String,
    strategy: String,
    predicate: Option<String>,
    datatype: Option<String>,
    target_class: Option<String>,
    individual_stem: Option<String>,
    parser: Option<String>,
    #[serde(default)]
    ontology_match: bool,
}

const METADATA_MANIFEST_TOML: &str = include_str!("../data/metadata_manifest.toml");

/// Default markers treated as missing values, compared case-insensitively.
pub fn default_missing_markers() -> Vec<String> {
    ["NA", "N/A", "not specified", "not applicable", "ML import: not available", "missing value"]
        .into_iter()
        .map(str::to_owned)
        .collect()
}

fn expand_datatype(raw: &str, reg: &NamespaceRegistry) -> Result<String, MetadataError> {
    if raw.starts_with("http://") || raw.starts_with("https://") {
        Ok(raw.to_owned())
    } else {
        Ok(reg.expand(raw)?)
    }
}

impl MetadataManifest {
    pub fn from_toml_str(text: &str, reg: &NamespaceRegistry) -> Result<Self, MetadataError> {
        let raw: RawManifest = toml::from_str(text)?;
        let org = raw.organism.unwrap_or_default();
        let organism = OrganismConfig {
            taxonomy_column: org.taxonomy_column.unwrap_or_else(|| "NCBITaxonomy".into()),
            country_column: org.country_column.unwrap_or_else(|| "Country".into()),
            biome_column: org.biome_column.unwrap_or_else(|| "ENVOEnvironmentBiome".into()),
            material_column: org.material_column.unwrap_or_else(|| "ENVOEnvironmentMaterial".into()),
            sex_column: org.sex_column.unwrap_or_else(|| "BiologicalSex".into()),
            life_stage_column: org.life_stage_column.unwrap_or_else(|| "LifeStage".into()),
            health_status_column: org.health_status_column.unwrap_or_else(|| "HealthStatus".into()),
            age_column: org.age_column.unwrap_or_else(|| "AgeInYears".into()),
        };
        let mut rules = BTreeMap::new();
        for col in raw.columns {
            if col.name.trim().is_empty() {
                return Err(MetadataError::Manifest("column rule with empty name".into()));
            }
            let predicate = match &col.predicate {
                Some(curie) => OntologyTermRef::parse_curie(curie)?,
                None => terms::sio_has_attribute(),
            };
            let parser = match col.parser.as_deref() {
                None | Some("none") => ValueParser::None,
                Some("solvent_mixture") => ValueParser::SolventMixture,
                Some("method_phrase") => ValueParser::MethodPhrase,
                Some(other) => {
                    return Err(MetadataError::Manifest(format!(
                        "column `{}`: unknown parser `{other}`",
                        col.name
                    )))
                }
            };
            let strategy = match col.strategy.as_str() {
                "reused" => Strategy::Reused {
                    datatype: match &col.datatype {
                        Some(dt) => expand_datatype(dt, reg)?,
                        None => XSD_STRING.to_owned(),
                    },
                    ontology_match: col.ontology_match,
                },
                "mapped" => {
                    let target = col.target_class.as_deref().ok_or_else(|| {
                        MetadataError::Manifest(format!(
                            "column `{}`: mapped strategy requires target_class",
                            col.name
                        ))
                    })?;
                    if parser != ValueParser::None {
                        return Err(MetadataError::Manifest(format!(
                            "column `{}`: parsers apply only to reused columns",
                            col.name
                        )));
                    }
                    Strategy::Mapped {
                        target_class: OntologyTermRef::parse_curie(target)?,
                        stem: col
                            .individual_stem
                            .clone()
                            .unwrap_or_else(|| format!("{}_", slugify(&col.name))),
                    }
                }
                "skip" => Strategy::Skip,
                other => {
                    return Err(MetadataError::Manifest(format!(
                        "column `{}`: unknown strategy `{other}`",
                        col.name
                    )))
                }
            };
            if rules
                .insert(col.name.clone(), ColumnRule { predicate, strategy, parser })
                .is_some()
            {
                return Err(MetadataError::Manifest(format!(
                    "column `{}` has two rules",
                    col.name
                )));
            }
        }
        Ok(Self {
            table: TableConfig {
                filename_column: raw.table.filename_column,
                collection_column: raw.table.collection_column,
                missing_markers: raw.table.missing_markers.unwrap_or_else(default_missing_markers),
            },
            organism,
            rules,
        })
    }

    pub fn from_toml_path(path: impl AsRef<Path>, reg: &NamespaceRegistry) -> Result<Self, MetadataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| MetadataError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text, reg)
    }

    /// The manifest shipped with the crate, tuned to Pan-ReDU column names.
    pub fn builtin(reg: &NamespaceRegistry) -> Result<Self, MetadataError> {
        Self::from_toml_str(METADATA_MANIFEST_TOML, reg)
    }

    pub fn rule(&self, column: &str) -> Option<&ColumnRule> {
        self.rules.get(column)
    }

    pub fn rules(&self) -> impl Iterator<Item = (&String, &ColumnRule)> {
        self.rules.iter()
    }

    fn organism_columns(&self) -> BTreeSet<&str> {
        self.organism.columns().into_iter().collect()
    }
}

// ---------------------------------------------------------------------------
// Table loading

/// One data row: identifying fields plus every other column, with missing
/// cells explicit.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    /// 1-based data-row number (header excluded).
    pub row_id: usize,
    pub filename: String,
    pub collection_id: String,
    pub columns: BTreeMap<String, Option<String>>,
}

impl SampleRecord {
    /// The normalized value of a column, if present and non-missing.
    pub fn value(&self, column: &str) -> Option<&str> {
        self.columns.get(column).and_then(|v| v.as_deref())
    }
}

#[derive(Debug, Clone)]
pub struct SkippedRow {
    pub row: usize,
    pub reason: String,
}

/// A loaded table: records, column order, and what the loader had to flag.
#[derive(Debug, Clone)]
pub struct MetadataTable {
    pub records: Vec<SampleRecord>,
    /// Non-identifier columns in header order.
    pub columns: Vec<String>,
    /// Columns with no manifest rule and no organism role.
    pub unknown_columns: BTreeSet<String>,
    pub skipped_rows: Vec<SkippedRow>,
}

pub(crate) fn normalize_cell(raw: &str, markers: &[String]) -> Option<String> {
    let value: String = raw.nfc().collect::<String>().trim().to_owned();
    if value.is_empty() || markers.iter().any(|m| m.eq_ignore_ascii_case(&value)) {
        None
    } else {
        Some(value)
    }
}

/// Load a tab-separated metadata table. In strict mode a row without its
/// identifying fields is an error; otherwise it is skipped and recorded.
pub fn load_metadata(
    path: impl AsRef<Path>,
    manifest: &MetadataManifest,
    strict: bool,
) -> Result<MetadataTable, MetadataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MetadataError::Io {
        path: path.to_owned(),
        source,
    })?;
    load_metadata_str(&text, manifest, strict)
}

pub fn load_metadata_str(
    text: &str,
    manifest: &MetadataManifest,
    strict: bool,
) -> Result<MetadataTable, MetadataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = {
        let hs = reader.headers()?;
        if hs.is_empty() || hs.iter().all(|h| h.trim().is_empty()) {
            return Err(MetadataError::MissingHeader);
        }
        hs.iter().map(|h| h.trim().to_owned()).collect()
    };
    let mut seen = BTreeSet::new();
    for h in &headers {
        if !seen.insert(h.clone()) {
            return Err(MetadataError::DuplicateColumn(h.clone()));
        }
    }
    let col_index = |name: &str| -> Result<usize, MetadataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MetadataError::MissingColumn(name.to_owned()))
    };
    let filename_idx = col_index(&manifest.table.filename_column)?;
    let collection_idx = col_index(&manifest.table.collection_column)?;

    let organism_columns = manifest.organism_columns();
    let data_columns: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != filename_idx && *i != collection_idx)
        .map(|(i, h)| (i, h.clone()))
        .collect();
    let unknown_columns: BTreeSet<String> = data_columns
        .iter()
        .filter(|(_, name)| manifest.rule(name).is_none() && !organism_columns.contains(name.as_str()))
        .map(|(_, name)| name.clone())
        .collect();

    let markers = &manifest.table.missing_markers;
    let mut records = Vec::new();
    let mut skipped_rows = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_id = idx + 1;
        let row = row?;
        let cell = |i: usize| row.get(i).unwrap_or("");
        let filename = normalize_cell(cell(filename_idx), markers);
        let collection = normalize_cell(cell(collection_idx), markers);
        let (Some(filename), Some(collection_id)) = (filename, collection) else {
            let reason = "missing filename or collection identifier".to_owned();
            if strict {
                return Err(MetadataError::MalformedRow { row: row_id, reason });
            }
            skipped_rows.push(SkippedRow { row: row_id, reason });
            continue;
        };
        let columns = data_columns
            .iter()
            .map(|(i, name)| (name.clone(), normalize_cell(cell(*i), markers)))
            .collect();
        records.push(SampleRecord {
            row_id,
            filename,
            collection_id,
            columns,
        });
    }
    Ok(MetadataTable {
        records,
        columns: data_columns.into_iter().map(|(_, n)| n).collect(),
        unknown_columns,
        skipped_rows,
    })
}

// ---------------------------------------------------------------------------
// Missingness

#[derive(Debug, Clone)]
pub struct MissingnessRow {
    pub column: String,
    pub missing: usize,
    pub total: usize,
    /// `100 × missing / total`.
    pub pct: f64,
    /// Flagged when strictly above 90%.
    pub exceeds_90: bool,
}

#[derive(Debug, Clone)]
pub struct MissingnessReport {
    pub rows: Vec<MissingnessRow>,
}

impl MissingnessReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("column\tmissing\ttotal\tpct_missing\texceeds_90\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.4}\t{}\n",
                r.column, r.missing, r.total, r.pct, r.exceeds_90
            ));
        }
        out
    }
}

/// Per-column missing percentages over the data columns, sorted worst-first
/// with ties broken by column name.
pub fn missingness_report(table: &MetadataTable) -> Result<MissingnessReport, MetadataError> {
    if table.records.is_empty() {
        return Err(MetadataError::EmptyInput);
    }
    let total = table.records.len();
    let mut rows: Vec<MissingnessRow> = table
        .columns
        .iter()
        .map(|column| {
            let missing = table
                .records
                .iter()
                .filter(|r| r.value(column).is_none())
                .count();
            let pct = 100.0 * missing as f64 / total as f64;
            MissingnessRow {
                column: column.clone(),
                missing,
                total,
                pct,
                exceeds_90: pct > 90.0,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.pct.total_cmp(&a.pct).then_with(|| a.column.cmp(&b.column)));
    Ok(MissingnessReport { rows })
}

// ---------------------------------------------------------------------------
// Organisms

/// The fixed 8-field organism description. Missing fields are the empty
/// string — a value no populated cell can carry, since empty cells are
/// treated as missing at load time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct OrganismKey {
    pub taxonomy: String,
    pub country: String,
    pub biome: String,
    pub material: String,
    pub sex: String,
    pub life_stage: String,
    pub health_status: String,
    pub age: String,
}

impl OrganismKey {
    pub fn from_record(record: &SampleRecord, cfg: &OrganismConfig) -> Self {
        let get = |col: &str| record.value(col).unwrap_or("").to_owned();
        Self {
            taxonomy: get(&cfg.taxonomy_column),
            country: get(&cfg.country_column),
            biome: get(&cfg.biome_column),
            material: get(&cfg.material_column),
            sex: get(&cfg.sex_column),
            life_stage: get(&cfg.life_stage_column),
            health_status: get(&cfg.health_status_column),
            age: get(&cfg.age_column),
        }
    }

    /// Identity attributes for URI minting, all 8 fields always present.
    pub fn attrs(&self) -> BTreeMap<String, String> {
        [
            ("taxonomy", &self.taxonomy),
            ("country", &self.country),
            ("biome", &self.biome),
            ("material", &self.material),
            ("sex", &self.sex),
            ("life_stage", &self.life_stage),
            ("health_status", &self.health_status),
            ("age", &self.age),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.clone()))
        .collect()
    }

    /// Numeric NCBI taxon id from a `taxid|name` or bare-taxid cell.
    pub fn taxon_id(&self) -> Option<&str> {
        let digits = self.taxonomy.split('|').next()?.trim();
        (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())).then_some(digits)
    }

    /// Name part of a `taxid|name` cell.
    pub fn taxon_name(&self) -> Option<&str> {
        self.taxonomy
            .split_once('|')
            .map(|(_, name)| name.trim())
            .filter(|n| !n.is_empty())
    }
}

/// Deduplicated organisms for one table.
#[derive(Debug, Clone)]
pub struct OrganismIndex {
    pub organisms: BTreeMap<OrganismKey, UriSpec>,
    /// `(row_id, key)` for every record, in record order.
    pub assignments: Vec<(usize, OrganismKey)>,
    /// `(total − distinct) / total`.
    pub dedup_ratio: f64,
}

impl OrganismIndex {
    pub fn uri_for(&self, key: &OrganismKey) -> Option<&UriSpec> {
        self.organisms.get(key)
    }
}

/// One minted individual per distinct organism key; every record maps to
/// exactly one of them.
pub fn build_organism_individuals(
    table: &MetadataTable,
    manifest: &MetadataManifest,
    minter: &UriMinter,
) -> Result<OrganismIndex, MetadataError> {
    if table.records.is_empty() {
        return Err(MetadataError::EmptyInput);
    }
    let mut organisms = BTreeMap::new();
    let mut assignments = Vec::with_capacity(table.records.len());
    for record in &table.records {
        let key = OrganismKey::from_record(record, &manifest.organism);
        if !organisms.contains_key(&key) {
            let uri = minter.mint("organism", &key.attrs())?;
            organisms.insert(key.clone(), uri);
        }
        assignments.push((record.row_id, key));
    }
    let total = assignments.len();
    let distinct = organisms.len();
    let dedup_ratio = (total - distinct) as f64 / total as f64;
    Ok(OrganismIndex {
        organisms,
        assignments,
        dedup_ratio,
    })
}

/// The node-spec for one organism: typed by its NCBI taxon when known, with
/// the remaining populated fields attached as attribute value nodes.
pub fn organism_spec(key: &OrganismKey, uri: &UriSpec) -> Result<NodeSpec, MetadataError> {
    let mut types = Vec::new();
    if let Some(taxid) = key.taxon_id() {
        types.push(terms::taxon(taxid));
    }
    let mut spec = NodeSpec::prov_entity("organism", types).with_iri(uri.iri());
    if let Some(name) = key.taxon_name() {
        spec = spec.with_label(name);
    }
    let fields = [
        ("Country", &key.country),
        ("EnvironmentBiome", &key.biome),
        ("EnvironmentMaterial", &key.material),
        ("BiologicalSex", &key.sex),
        ("LifeStage", &key.life_stage),
        ("HealthStatus", &key.health_status),
        ("AgeInYears", &key.age),
    ];
    for (class, value) in fields {
        if value.is_empty() {
            continue;
        }
        let node = NodeSpec::value_node(vec![terms::mbs(class)], TypedLiteral::string(value)?)?;
        spec = spec.with_node_edge(terms::sio_has_attribute(), node);
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Compositional parsers

/// A chemical name, resolved to an ontology term or kept as a plain label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChemicalRef {
    Term(OntologyTermRef),
    Unresolved(String),
}

impl ChemicalRef {
    pub fn label(&self) -> &str {
        match self {
            ChemicalRef::Term(t) => t.label.as_deref().unwrap_or(&t.local_id),
            ChemicalRef::Unresolved(s) => s,
        }
    }

    pub fn term(&self) -> Option<&OntologyTermRef> {
        match self {
            ChemicalRef::Term(t) => Some(t),
            ChemicalRef::Unresolved(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixtureComponent {
    pub chemical: ChemicalRef,
    /// Decimal lexical form; all components have one or none do.
    pub proportion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixtureAdditive {
    pub chemical: ChemicalRef,
    pub concentration: String,
    pub unit: String,
}

/// A parsed solvent mixture: `name[-name…] [(a:b[:c…])] [+ n% name]…`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolventMixture {
    pub components: Vec<MixtureComponent>,
    pub additives: Vec<MixtureAdditive>,
}

impl SolventMixture {
    /// Canonical rendering; parsing it back yields the same structure.
    pub fn canonical_string(&self) -> String {
        let names: Vec<&str> = self.components.iter().map(|c| c.chemical.label()).collect();
        let mut out = names.join("-");
        if self.components.iter().all(|c| c.proportion.is_some()) && !self.components.is_empty() {
            let ratio: Vec<&str> = self
                .components
                .iter()
                .map(|c| c.proportion.as_deref().expect("checked above"))
                .collect();
            out.push_str(&format!(" ({})", ratio.join(":")));
        }
        for add in &self.additives {
            out.push_str(&format!(" + {}{} {}", add.concentration, add.unit, add.chemical.label()));
        }
        out
    }
}

impl fmt::Display for SolventMixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

fn is_decimal_token(s: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[0-9]+(\.[0-9]+)?$").expect("static pattern"))
        .is_match(s)
}

/// Split mixture names on `/` always, and on `-` only when the hyphen is not
/// adjacent to a digit — keeping locants intact ("2-propanol", "propan-2-ol").
fn split_component_names(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut names = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let split = c == '/'
            || (c == '-'
                && i > 0
                && i + 1 < chars.len()
                && !chars[i - 1].is_ascii_digit()
                && !chars[i + 1].is_ascii_digit());
        if split {
            names.push(std::mem::take(&mut current));
        } else {
            current.push(c);
        }
    }
    names.push(current);
    names
        .into_iter()
        .map(|n| n.trim().to_owned())
        .filter(|n| !n.is_empty())
        .collect()
}

fn resolve_chemical(name: &str, index: &TermIndex, warnings: &mut Vec<String>) -> ChemicalRef {
    let best = match_term(name, index, 1);
    match best.first() {
        Some(c) if c.score == 1.0 => ChemicalRef::Term(c.term.clone()),
        _ => {
            warnings.push(format!("chemical `{name}` not resolved to an ontology term"));
            ChemicalRef::Unresolved(name.to_owned())
        }
    }
}

/// Parse `"methanol-water (4:1) + 0.1% formic acid"`-style strings. Chemical
/// names resolve through the term index; unresolved names stay labels with a
/// warning. Structural problems (ratio arity mismatch, malformed additive)
/// are errors so callers can fall back to literal emission.
pub fn parse_solvent_mixture(
    raw: &str,
    index: &TermIndex,
) -> Result<(SolventMixture, Vec<String>), MetadataError> {
    let unparseable = |reason: &str| MetadataError::UnparseableMixture {
        raw: raw.to_owned(),
        reason: reason.to_owned(),
    };
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(unparseable("empty input"));
    }
    let mut warnings = Vec::new();
    let mut segments = trimmed.split('+');
    let head = segments.next().expect("split yields at least one segment").trim();

    // Optional trailing "(a:b[:c…])" ratio on the component list.
    static RATIO_RE: OnceLock<Regex> = OnceLock::new();
    let ratio_re = RATIO_RE
        .get_or_init(|| Regex::new(r"^(?s)(.*?)\s*\(([^()]*)\)\s*$").expect("static pattern"));
    let (names_part, ratio) = match ratio_re.captures(head) {
        Some(caps) => {
            let parts: Vec<String> = caps[2].split(':').map(|p| p.trim().to_owned()).collect();
            if parts.iter().any(|p| !is_decimal_token(p)) {
                return Err(unparseable("ratio parts must be decimal numbers"));
            }
            (caps[1].to_string(), Some(parts))
        }
        None => (head.to_owned(), None),
    };
    let names = split_component_names(&names_part);
    if names.is_empty() {
        return Err(unparseable("no component names"));
    }
    if let Some(ratio) = &ratio {
        if ratio.len() != names.len() {
            return Err(unparseable(&format!(
                "ratio has {} parts for {} components",
                ratio.len(),
                names.len()
            )));
        }
    }
    let components = names
        .iter()
        .enumerate()
        .map(|(i, name)| MixtureComponent {
            chemical: resolve_chemical(name, index, &mut warnings),
            proportion: ratio.as_ref().map(|r| r[i].clone()),
        })
        .collect();

    static ADDITIVE_RE: OnceLock<Regex> = OnceLock::new();
    let additive_re = ADDITIVE_RE
        .get_or_init(|| Regex::new(r"^([0-9]+(?:\.[0-9]+)?)\s*%\s*(\S.*)$").expect("static pattern"));
    let mut additives = Vec::new();
    for segment in segments {
        let segment = segment.trim();
        let caps = additive_re
            .captures(segment)
            .ok_or_else(|| unparseable(&format!("additive `{segment}` is not `<number>% <name>`")))?;
        additives.push(MixtureAdditive {
            chemical: resolve_chemical(caps[2].trim(), index, &mut warnings),
            concentration: caps[1].to_owned(),
            unit: "%".to_owned(),
        });
    }
    Ok((SolventMixture { components, additives }, warnings))
}

/// One step of a collection/extraction method phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodStep {
    pub text: String,
    pub term: Option<OntologyTermRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodPhrase {
    pub steps: Vec<MethodStep>,
}

/// Split a free-text method phrase on `;` and `,` into ordered steps, each
/// term-aligned when the index resolves it exactly.
pub fn parse_method_phrase(raw: &str, index: &TermIndex) -> MethodPhrase {
    let steps = raw
        .split([';', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|text| {
            let best = match_term(text, index, 1);
            let term = best
                .first()
                .filter(|c| c.score == 1.0)
                .map(|c| c.term.clone());
            MethodStep {
                text: text.to_owned(),
                term,
            }
        })
        .collect();
    MethodPhrase { steps }
}

// ---------------------------------------------------------------------------
// Mapping dictionary

/// Where a dictionary IRI points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    /// A minted named individual in the schema namespace.
    Individual,
    /// An existing ontology term, used directly.
    OntologyTerm,
}

#[derive(Debug, Clone)]
pub struct DictionaryEntry {
    pub iri: String,
    pub kind: DictionaryKind,
    /// Class of minted individuals; `None` for direct ontology terms.
    pub target_class: Option<OntologyTermRef>,
}

/// The `(column, raw value) → IRI` table built before emission and exported
/// as the JSON sidecar.
#[derive(Debug, Clone, Default)]
pub struct MappingDictionary {
    entries: BTreeMap<String, BTreeMap<String, DictionaryEntry>>,
}

impl MappingDictionary {
    pub fn lookup(&self, column: &str, raw: &str) -> Option<&DictionaryEntry> {
        self.entries.get(column)?.get(raw)
    }

    pub fn insert(&mut self, column: &str, raw: impl Into<String>, entry: DictionaryEntry) {
        self.entries
            .entry(column.to_owned())
            .or_default()
            .insert(raw.into(), entry);
    }

    pub fn column(&self, column: &str) -> Option<&BTreeMap<String, DictionaryEntry>> {
        self.entries.get(column)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nested `{column: {raw value: iri}}` JSON.
    pub fn to_json(&self) -> String {
        let nested: BTreeMap<&String, BTreeMap<&String, &String>> = self
            .entries
            .iter()
            .map(|(col, vals)| (col, vals.iter().map(|(raw, e)| (raw, &e.iri)).collect()))
            .collect();
        serde_json::to_string_pretty(&nested).expect("string maps always serialize")
    }
}

/// Lowercase ASCII-alphanumeric slug; every other character becomes `_`,
/// runs collapse, edges trim.
pub fn slugify(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut last_underscore = true; // suppress leading underscore
    for c in value.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_underscore = false;
        } else if !last_underscore {
            out.push('_');
            last_underscore = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

/// Assign each distinct value a deterministic IRI `{ns}{stem}{slug}`.
/// Distinct values whose slugs collide all take a content-hash suffix, so an
/// IRI never depends on which other values share the batch unless a
/// collision actually occurs; values slugging to nothing share the forced
/// base `value` and are disambiguated by the same rule.
pub fn assign_slug_iris(
    schema_ns: &str,
    stem: &str,
    values: &BTreeSet<&str>,
    column: &str,
    report: &mut RunReport,
) -> BTreeMap<String, String> {
    let mut by_slug: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for value in values {
        let mut slug = slugify(value);
        if slug.is_empty() {
            slug = "value".to_owned();
        }
        by_slug.entry(slug).or_default().push(value);
    }
    let mut out = BTreeMap::new();
    for (slug, members) in by_slug {
        let collided = members.len() > 1;
        for value in members {
            let final_slug = if collided {
                report.push(
                    None,
                    column,
                    "slug-collision",
                    format!("`{value}` shares slug `{slug}`; suffixed"),
                );
                format!("{slug}_{}", crate::ident::hash_identity(value))
            } else {
                slug.clone()
            };
            out.insert(value.to_owned(), format!("{schema_ns}{stem}{final_slug}"));
        }
    }
    out
}

/// A warning or fallback recorded while mapping; collected into the run
/// report TSV.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub row: Option<usize>,
    pub column: String,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn push(&mut self, row: Option<usize>, column: &str, kind: &str, detail: impl Into<String>) {
        self.rows.push(ReportRow {
            row,
            column: column.to_owned(),
            kind: kind.to_owned(),
            detail: detail.into(),
        });
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("row\tcolumn\tkind\tdetail\n");
        for r in &self.rows {
            let row = r.row.map(|n| n.to_string()).unwrap_or_default();
            out.push_str(&format!("{row}\t{}\t{}\t{}\n", r.column, r.kind, r.detail));
        }
        out
    }
}

/// Build the dictionary for every `Mapped` and ontology-matched `Reused`
/// column over the whole table, so individuals are minted once per distinct
/// value and slug collisions are settled before any row is emitted.
///
/// Colliding slugs (distinct values, same slug) all take a short content-hash
/// suffix, so no value's IRI depends on which other values happen to share
/// the batch unless a collision actually occurs.
pub fn build_mapping_dictionary(
    table: &MetadataTable,
    manifest: &MetadataManifest,
    reg: &NamespaceRegistry,
    index: &TermIndex,
    curation: Option<&CurationFile>,
    report: &mut RunReport,
) -> Result<MappingDictionary, MetadataError> {
    let schema_ns = reg
        .namespace("MBS")
        .ok_or_else(|| MetadataError::Manifest("schema prefix MBS is not bound".into()))?
        .to_owned();
    let mut dict = MappingDictionary::default();
    for (column, rule) in manifest.rules() {
        let distinct: BTreeSet<&str> = table
            .records
            .iter()
            .filter_map(|r| r.value(column))
            .collect();
        if distinct.is_empty() {
            continue;
        }
        match &rule.strategy {
            Strategy::Mapped { target_class, stem } => {
                for (value, iri) in assign_slug_iris(&schema_ns, stem, &distinct, column, report) {
                    dict.insert(
                        column,
                        value,
                        DictionaryEntry {
                            iri,
                            kind: DictionaryKind::Individual,
                            target_class: Some(target_class.clone()),
                        },
                    );
                }
            }
            Strategy::Reused { ontology_match: true, .. } => {
                let column_entries = dict.entries.entry(column.clone()).or_default();
                for value in distinct {
                    let curated = curation.and_then(|c| c.lookup(column, value));
                    match curated {
                        Some(CurationChoice::Term(term)) => {
                            column_entries.insert(
                                value.to_owned(),
                                DictionaryEntry {
                                    iri: reg.expand_term(term)?,
                                    kind: DictionaryKind::OntologyTerm,
                                    target_class: None,
                                },
                            );
                        }
                        Some(CurationChoice::Reject) => {
                            report.push(None, column, "curator-rejected", format!("`{value}` kept as literal"));
                        }
                        None if requires_curation(column) => {
                            let suggestions: Vec<String> = match_term(value, index, 3)
                                .into_iter()
                                .map(|c| format!("{} ({:.3})", c.term.curie(), c.score))
                                .collect();
                            report.push(
                                None,
                                column,
                                "uncurated-value",
                                format!("`{value}` needs curation; suggestions: {}", suggestions.join(", ")),
                            );
                        }
                        None => {
                            // Not curation-gated: accept an unambiguous match.
                            let best = match_term(value, index, 1);
                            match best.first() {
                                Some(c) if c.score == 1.0 => {
                                    column_entries.insert(
                                        value.to_owned(),
                                        DictionaryEntry {
                                            iri: reg.expand_term(&c.term)?,
                                            kind: DictionaryKind::OntologyTerm,
                                            target_class: None,
                                        },
                                    );
                                }
                                _ => {
                                    report.push(
                                        None,
                                        column,
                                        "unmatched-value",
                                        format!("`{value}` kept as literal"),
                                    );
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(dict)
}

// ---------------------------------------------------------------------------
// Record → node specs

/// Everything `apply_mapping` needs besides the record itself.
pub struct MappingEngine<'a> {
    pub manifest: &'a MetadataManifest,
    pub dictionary: &'a MappingDictionary,
    pub reg: &'a NamespaceRegistry,
    pub index: &'a TermIndex,
    pub minter: &'a UriMinter,
    pub strict: bool,
}

impl MappingEngine<'_> {
    /// Build the node-spec tree for one record. The returned root is the
    /// sample entity; the collection, run file, UAI, organism link, sampling
    /// activity, and per-column attributes hang off it.
    pub fn apply_mapping(
        &self,
        record: &SampleRecord,
        organism_iri: Option<&str>,
        report: &mut RunReport,
    ) -> Result<NodeSpec, MetadataError> {
        let collection = NodeSpec::prov_entity("collection", vec![terms::dcat_dataset()])
            .with_identity("collection", &record.collection_id)
            .with_label(&record.collection_id)
            .with_literal_edge(terms::dct_title(), TypedLiteral::string(&record.collection_id)?);

        let locator = format!("{}/{}", record.collection_id, record.filename);
        let (url_pred, url) = locator_to_url(&locator);
        let file = NodeSpec::prov_entity("msrun-file", vec![terms::dcat_distribution()])
            .with_identity("collection", &record.collection_id)
            .with_identity("file", &record.filename)
            .with_label(&record.filename)
            .with_literal_edge(terms::dct_title(), TypedLiteral::string(&record.filename)?)
            .with_iri_edge(url_pred, url);

        let uai = Uai::builder()
            .collection_id(&record.collection_id)
            .mzml(&record.filename)
            .build()?;
        let uai_node = NodeSpec::prov_entity("uai", vec![terms::mbs("UAI")])
            .with_identity("uai", uai.serialize())
            .with_label(uai.serialize())
            .with_node_edge(terms::mbs("collectionID"), collection)
            .with_node_edge(terms::mbs("mzML"), file);

        let mut sample = NodeSpec::prov_entity("sample", vec![terms::sio_sample()])
            .with_identity("collection", &record.collection_id)
            .with_identity("file", &record.filename)
            .with_label(&record.filename)
            .with_node_edge(terms::sio_identifier_link(), uai_node);
        if let Some(iri) = organism_iri {
            sample = sample.with_iri_edge(terms::prov_was_derived_from(), iri);
        }

        let mut activity = NodeSpec::prov_activity("sampling", vec![terms::mbs("SamplingProcess")])
            .with_identity("collection", &record.collection_id)
            .with_identity("file", &record.filename);
        let mut protocol_nodes: Vec<NodeSpec> = Vec::new();

        let organism_columns = self.manifest.organism_columns();
        for (column, value) in &record.columns {
            let Some(value) = value else { continue };
            let rule = match self.manifest.rule(column) {
                Some(rule) => rule,
                None if organism_columns.contains(column.as_str()) => continue,
                None => {
                    if self.strict {
                        return Err(MetadataError::UnmappedColumn {
                            row: record.row_id,
                            column: column.clone(),
                        });
                    }
                    report.push(Some(record.row_id), column, "unmapped-column", "no rule; skipped");
                    continue;
                }
            };
            match rule.parser {
                ValueParser::SolventMixture => {
                    match parse_solvent_mixture(value, self.index) {
                        Ok((mixture, warnings)) => {
                            for w in warnings {
                                report.push(Some(record.row_id), column, "unresolved-chemical", w);
                            }
                            let node = self.mixture_spec(&mixture)?;
                            sample = sample.with_node_edge(rule.predicate.clone(), node.clone());
                            protocol_nodes.push(node);
                        }
                        Err(MetadataError::UnparseableMixture { reason, .. }) => {
                            report.push(
                                Some(record.row_id),
                                column,
                                "unparseable-mixture",
                                format!("`{value}`: {reason}; kept as literal"),
                            );
                            sample = sample
                                .with_literal_edge(rule.predicate.clone(), TypedLiteral::string(value)?);
                        }
                        Err(e) => return Err(e),
                    }
                    continue;
                }
                ValueParser::MethodPhrase => {
                    let phrase = parse_method_phrase(value, self.index);
                    let node = self.method_spec(value, &phrase)?;
                    sample = sample.with_node_edge(rule.predicate.clone(), node.clone());
                    protocol_nodes.push(node);
                    continue;
                }
                ValueParser::None => {}
            }
            match &rule.strategy {
                Strategy::Skip => {}
                Strategy::Mapped { target_class, .. } => {
                    let Some(entry) = self.dictionary.lookup(column, value) else {
                        report.push(
                            Some(record.row_id),
                            column,
                            "missing-dictionary-entry",
                            format!("`{value}` not in mapping dictionary; skipped"),
                        );
                        continue;
                    };
                    let individual =
                        NodeSpec::named_individual("attribute", vec![target_class.clone()])?
                            .with_label(value)
                            .with_iri(&entry.iri);
                    sample = sample.with_node_edge(rule.predicate.clone(), individual);
                }
                Strategy::Reused { datatype, ontology_match } => {
                    if *ontology_match {
                        if let Some(entry) = self.dictionary.lookup(column, value) {
                            sample = sample.with_iri_edge(rule.predicate.clone(), &entry.iri);
                            continue;
                        }
                    }
                    let literal = match TypedLiteral::new(value, datatype) {
                        Ok(lit) => lit,
                        Err(e) => {
                            if self.strict {
                                return Err(e.into());
                            }
                            report.push(
                                Some(record.row_id),
                                column,
                                "bad-lexical-form",
                                format!("`{value}` is not a valid {datatype}; kept as string"),
                            );
                            TypedLiteral::string(value)?
                        }
                    };
                    sample = sample.with_literal_edge(rule.predicate.clone(), literal);
                }
            }
        }

        for node in protocol_nodes {
            activity = activity.with_node_edge(terms::prov_used(), node);
        }
        Ok(sample.with_node_edge(terms::prov_was_generated_by(), activity))
    }

    /// A mixture as a labeled individual with one explicit-IRI value node per
    /// component and additive. Components carry their proportion as an edge,
    /// so their IRIs are minted from the full mixture context rather than
    /// content-merged (two mixtures may share a chemical at different
    /// proportions).
    fn mixture_spec(&self, mixture: &SolventMixture) -> Result<NodeSpec, MetadataError> {
        let canonical = mixture.canonical_string();
        let mut node = NodeSpec::named_individual("mixture", vec![terms::mbs("SolventMixture")])?
            .with_label(&canonical);
        for (i, component) in mixture.components.iter().enumerate() {
            let mut attrs = BTreeMap::new();
            attrs.insert("mixture".to_owned(), canonical.clone());
            attrs.insert("role".to_owned(), "component".to_owned());
            attrs.insert("index".to_owned(), i.to_string());
            let iri = self.minter.mint("mixture-component", &attrs)?;
            let mut child = NodeSpec::value_node(
                vec![terms::mbs("MixtureComponent")],
                TypedLiteral::string(component.chemical.label())?,
            )?
            .with_iri(iri.iri());
            if let Some(term) = component.chemical.term() {
                child = child.with_iri_edge(terms::sio_designator_link(), self.reg.expand_term(term)?);
            }
            if let Some(p) = &component.proportion {
                child = child.with_literal_edge(terms::mbs("proportion"), TypedLiteral::decimal(p)?);
            }
            node = node.with_node_edge(terms::sio_has_attribute(), child);
        }
        for (i, additive) in mixture.additives.iter().enumerate() {
            let mut attrs = BTreeMap::new();
            attrs.insert("mixture".to_owned(), canonical.clone());
            attrs.insert("role".to_owned(), "additive".to_owned());
            attrs.insert("index".to_owned(), i.to_string());
            let iri = self.minter.mint("mixture-additive", &attrs)?;
            let mut child = NodeSpec::value_node(
                vec![terms::mbs("MixtureAdditive")],
                TypedLiteral::string(additive.chemical.label())?,
            )?
            .with_iri(iri.iri())
            .with_literal_edge(terms::mbs("concentration"), TypedLiteral::decimal(&additive.concentration)?)
            .with_literal_edge(terms::mbs("concentrationUnit"), TypedLiteral::string(&additive.unit)?);
            if let Some(term) = additive.chemical.term() {
                child = child.with_iri_edge(terms::sio_designator_link(), self.reg.expand_term(term)?);
            }
            node = node.with_node_edge(terms::sio_has_attribute(), child);
        }
        Ok(node)
    }

    /// A method phrase as a labeled individual with ordered step value nodes.
    fn method_spec(&self, raw: &str, phrase: &MethodPhrase) -> Result<NodeSpec, MetadataError> {
        let mut node = NodeSpec::named_individual("method", vec![terms::mbs("MethodPhrase")])?
            .with_label(raw);
        for (i, step) in phrase.steps.iter().enumerate() {
            let mut attrs = BTreeMap::new();
            attrs.insert("phrase".to_owned(), raw.to_owned());
            attrs.insert("index".to_owned(), i.to_string());
            let iri = self.minter.mint("method-step", &attrs)?;
            let mut child = NodeSpec::value_node(
                vec![terms::mbs("MethodStep")],
                TypedLiteral::string(&step.text)?,
            )?
            .with_iri(iri.iri())
            .with_literal_edge(terms::mbs("stepIndex"), TypedLiteral::integer(&(i + 1).to_string())?);
            if let Some(term) = &step.term {
                child = child.with_iri_edge(terms::sio_designator_link(), self.reg.expand_term(term)?);
            }
            node = node.with_node_edge(terms::sio_has_attribute(), child);
        }
        Ok(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emit::{emit, serialize_ntriples, DedupRegistry, Iri, Object, RDF_TYPE, Triple};
    use crate::node::XSD_DECIMAL;
    use proptest::prelude::*;

    fn reg() -> NamespaceRegistry {
        NamespaceRegistry::builtin()
    }

    fn index() -> TermIndex {
        TermIndex::builtin(&reg()).unwrap()
    }

    fn manifest() -> MetadataManifest {
        MetadataManifest::builtin(&reg()).unwrap()
    }

    const FIXTURE_TSV: &str = "\
filename\tATTRIBUTE_DatasetAccession\tSampleType\tSampleTypeSub1\tNCBITaxonomy\tCountry\tAgeInYears\tMysteryColumn
a.mzML\tMSV000001\tblood\tplasma\t9606|Homo sapiens\tUnited States\t41\todd
b.mzML\tMSV000001\tblood\tnot specified\t9606|Homo sapiens\tUnited States\t41\tNA
c.mzML\tMSV000002\turine\t\t10090|Mus musculus\tGermany\t2\tvalue
";

    #[test]
    fn load_parses_normalizes_and_flags() {
        let table = load_metadata_str(FIXTURE_TSV, &manifest(), false).unwrap();
        assert_eq!(table.records.len(), 3);
        assert_eq!(table.records[0].filename, "a.mzML");
        assert_eq!(table.records[0].collection_id, "MSV000001");
        assert_eq!(table.records[0].value("SampleType"), Some("blood"));
        // Missing markers and empty cells both read as absent.
        assert_eq!(table.records[1].value("SampleTypeSub1"), None);
        assert_eq!(table.records[1].value("MysteryColumn"), None);
        assert_eq!(table.records[1].value("AgeInYears"), Some("41"));
        assert_eq!(table.records[2].value("SampleTypeSub1"), None);
        // Unknown columns are retained but flagged.
        assert_eq!(table.records[2].value("MysteryColumn"), Some("value"));
        assert!(table.unknown_columns.contains("MysteryColumn"));
        assert!(!table.unknown_columns.contains("SampleType"));
        assert!(!table.unknown_columns.contains("NCBITaxonomy"), "organism role is known");
    }

    #[test]
    fn load_normalizes_unicode_and_skips_incomplete_rows() {
        // "é" as e + combining acute must normalize to the composed form.
        let tsv = "filename\tATTRIBUTE_DatasetAccession\tSampleType\n\
                   a.mzML\tMSV1\tcafe\u{0301}\n\
                   \tMSV1\tblood\n";
        let table = load_metadata_str(tsv, &manifest(), false).unwrap();
        assert_eq!(table.records.len(), 1);
        assert_eq!(table.records[0].value("SampleType"), Some("caf\u{e9}"));
        assert_eq!(table.skipped_rows.len(), 1);
        assert_eq!(table.skipped_rows[0].row, 2);

        let err = load_metadata_str(tsv, &manifest(), true).unwrap_err();
        assert!(matches!(err, MetadataError::MalformedRow { row: 2, .. }));
    }

    #[test]
    fn load_rejects_structural_problems() {
        let dup = "filename\tATTRIBUTE_DatasetAccession\tX\tX\na\tb\tc\td\n";
        assert!(matches!(
            load_metadata_str(dup, &manifest(), false).unwrap_err(),
            MetadataError::DuplicateColumn(c) if c == "X"
        ));
        assert!(matches!(
            load_metadata_str("", &manifest(), false).unwrap_err(),
            MetadataError::MissingHeader
        ));
        let missing = "filename\tSampleType\na\tb\n";
        assert!(matches!(
            load_metadata_str(missing, &manifest(), false).unwrap_err(),
            MetadataError::MissingColumn(c) if c == "ATTRIBUTE_DatasetAccession"
        ));
    }

    #[test]
    fn missingness_matches_recount_and_sorts() {
        // 10 rows; ColA missing in 9 (90%), ColB missing in 10 (100%),
        // ColC missing in 9 — tie with ColA broken by name.
        let mut tsv = String::from("filename\tATTRIBUTE_DatasetAccession\tColC\tColA\tColB\n");
        for i in 0..10 {
            let a = if i == 0 { "x" } else { "" };
            let c = if i == 9 { "y" } else { "" };
            tsv.push_str(&format!("f{i}.mzML\tMSV1\t{c}\t{a}\t\n"));
        }
        let table = load_metadata_str(&tsv, &manifest(), false).unwrap();
        let report = missingness_report(&table).unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.column.as_str()).collect();
        assert_eq!(names, ["ColB", "ColA", "ColC"]);
        assert_eq!(report.rows[0].pct, 100.0);
        assert!(report.rows[0].exceeds_90);
        assert_eq!(report.rows[1].pct, 90.0);
        assert!(!report.rows[1].exceeds_90, "exactly 90 is not flagged");
        // Recount oracle: pct × total == 100 × missing for every row.
        for row in &report.rows {
            let recount = table
                .records
                .iter()
                .filter(|r| r.value(&row.column).is_none())
                .count();
            assert_eq!(row.missing, recount);
            assert_eq!(row.pct, 100.0 * recount as f64 / row.total as f64);
        }
        let tsv_out = report.to_tsv();
        assert!(tsv_out.starts_with("column\tmissing\ttotal\tpct_missing\texceeds_90\n"));
    }

    #[test]
    fn missingness_requires_records() {
        let table = load_metadata_str("filename\tATTRIBUTE_DatasetAccession\tA\n", &manifest(), false).unwrap();
        assert!(matches!(
            missingness_report(&table).unwrap_err(),
            MetadataError::EmptyInput
        ));
    }

    fn synthetic_table(rows: usize, distinct: usize) -> MetadataTable {
        let mut tsv = String::from(
            "filename\tATTRIBUTE_DatasetAccession\tNCBITaxonomy\tCountry\tENVOEnvironmentBiome\t\
             ENVOEnvironmentMaterial\tBiologicalSex\tLifeStage\tHealthStatus\tAgeInYears\n",
        );
        for i in 0..rows {
            let k = i % distinct;
            tsv.push_str(&format!(
                "f{i}.mzML\tMSV1\t9606|Homo sapiens\tCountry{k}\tbiome\tmaterial\tfemale\tadult\thealthy\t{}\n",
                20 + k
            ));
        }
        load_metadata_str(&tsv, &manifest(), false).unwrap()
    }

    #[test]
    fn organism_dedup_ratio_is_exact() {
        let minter = UriMinter::with_default_prefix();
        let m = manifest();

        let table = synthetic_table(1000, 16);
        let idx = build_organism_individuals(&table, &m, &minter).unwrap();
        assert_eq!(idx.organisms.len(), 16);
        assert_eq!(idx.assignments.len(), 1000);
        assert_eq!(idx.dedup_ratio, 0.984);

        let identical = synthetic_table(8, 1);
        let idx = build_organism_individuals(&identical, &m, &minter).unwrap();
        assert_eq!(idx.dedup_ratio, (8.0 - 1.0) / 8.0);

        let all_distinct = synthetic_table(5, 5);
        let idx = build_organism_individuals(&all_distinct, &m, &minter).unwrap();
        assert_eq!(idx.dedup_ratio, 0.0);
    }

    #[test]
    fn organism_uris_are_deterministic_and_per_key() {
        let minter = UriMinter::with_default_prefix();
        let m = manifest();
        let table = synthetic_table(20, 4);
        let a = build_organism_individuals(&table, &m, &minter).unwrap();
        let b = build_organism_individuals(&table, &m, &minter).unwrap();
        assert_eq!(a.organisms.len(), 4);
        for (key, uri) in &a.organisms {
            assert_eq!(b.organisms[key].iri(), uri.iri());
            assert!(uri.iri().contains("/organism/"));
        }
        // Every record resolves to a minted organism.
        for (_, key) in &a.assignments {
            assert!(a.uri_for(key).is_some());
        }
    }

    #[test]
    fn organism_spec_types_taxon_and_attaches_fields() {
        let key = OrganismKey {
            taxonomy: "9606|Homo sapiens".to_owned(),
            country: "Germany".to_owned(),
            sex: "female".to_owned(),
            ..OrganismKey::default()
        };
        assert_eq!(key.taxon_id(), Some("9606"));
        assert_eq!(key.taxon_name(), Some("Homo sapiens"));
        let minter = UriMinter::with_default_prefix();
        let uri = minter.mint("organism", &key.attrs()).unwrap();
        let spec = organism_spec(&key, &uri).unwrap();
        assert_eq!(spec.label(), Some("Homo sapiens"));
        assert!(spec.types().iter().any(|t| t.curie() == "NCBITaxon:9606"));
        assert_eq!(spec.edges().len(), 2, "country and sex value nodes");

        let nameless = OrganismKey { taxonomy: "10090".to_owned(), ..OrganismKey::default() };
        assert_eq!(nameless.taxon_id(), Some("10090"));
        assert_eq!(nameless.taxon_name(), None);
        let free_text = OrganismKey { taxonomy: "mouse".to_owned(), ..OrganismKey::default() };
        assert_eq!(free_text.taxon_id(), None);
    }

    #[test]
    fn flagship_mixture_parses_to_three_chemicals() {
        let (mix, warnings) =
            parse_solvent_mixture("methanol-water (4:1) + 0.1% formic acid", &index()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(mix.components.len(), 2);
        assert_eq!(mix.components[0].chemical.term().unwrap().curie(), "ChEBI:17790");
        assert_eq!(mix.components[0].proportion.as_deref(), Some("4"));
        assert_eq!(mix.components[1].chemical.term().unwrap().curie(), "ChEBI:15377");
        assert_eq!(mix.components[1].proportion.as_deref(), Some("1"));
        assert_eq!(mix.additives.len(), 1);
        assert_eq!(mix.additives[0].chemical.term().unwrap().curie(), "ChEBI:30751");
        assert_eq!(mix.additives[0].concentration, "0.1");
        assert_eq!(mix.additives[0].unit, "%");
        assert_eq!(mix.canonical_string(), "methanol-water (4:1) + 0.1% formic acid");
    }

    #[test]
    fn mixture_grammar_covers_documented_forms() {
        let idx = index();
        // Single name, no ratio, no additive.
        let (water, _) = parse_solvent_mixture("water", &idx).unwrap();
        assert_eq!(water.components.len(), 1);
        assert_eq!(water.components[0].proportion, None);
        assert!(water.additives.is_empty());

        // Slash separator and synonym resolution.
        let (acn, _) = parse_solvent_mixture("ACN/H2O (1:1)", &idx).unwrap();
        assert_eq!(acn.components[0].chemical.term().unwrap().curie(), "ChEBI:38472");
        assert_eq!(acn.components[1].chemical.term().unwrap().curie(), "ChEBI:15377");
        assert_eq!(acn.components[0].proportion.as_deref(), Some("1"));

        // Digit-adjacent hyphens bind into the name.
        let (ipa, _) = parse_solvent_mixture("2-propanol", &idx).unwrap();
        assert_eq!(ipa.components.len(), 1);
        assert_eq!(ipa.components[0].chemical.term().unwrap().curie(), "ChEBI:17824");
        let (mix, _) = parse_solvent_mixture("methanol/2-propanol (1:1)", &idx).unwrap();
        assert_eq!(mix.components.len(), 2);

        // Unresolved names stay labels with a warning, not an error.
        let (odd, warnings) = parse_solvent_mixture("unobtainium-water (1:1)", &idx).unwrap();
        assert_eq!(odd.components[0].chemical, ChemicalRef::Unresolved("unobtainium".into()));
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn mixture_structural_errors_are_rejected() {
        let idx = index();
        for (raw, what) in [
            ("methanol-water (4:1:1)", "ratio arity"),
            ("methanol-water (4:x)", "non-decimal ratio"),
            ("methanol + formic acid", "additive without percentage"),
            ("   ", "empty"),
            ("(4:1)", "ratio without names"),
        ] {
            assert!(
                matches!(
                    parse_solvent_mixture(raw, &idx),
                    Err(MetadataError::UnparseableMixture { .. })
                ),
                "{what}: `{raw}` should not parse"
            );
        }
    }

    #[test]
    fn method_phrases_split_into_ordered_aligned_steps() {
        let idx = index();
        let phrase = parse_method_phrase("specimen collection; ethanol, drying", &idx);
        assert_eq!(phrase.steps.len(), 3);
        assert_eq!(phrase.steps[0].text, "specimen collection");
        assert_eq!(phrase.steps[0].term.as_ref().unwrap().curie(), "OBI:0000659");
        assert_eq!(phrase.steps[1].term.as_ref().unwrap().curie(), "ChEBI:16236");
        assert_eq!(phrase.steps[2].text, "drying");
        assert!(phrase.steps[2].term.is_none());
    }

    #[test]
    fn dictionary_mints_one_iri_per_value_and_handles_collisions() {
        let tsv = "\
filename\tATTRIBUTE_DatasetAccession\tSampleType
a.mzML\tMSV1\tblood
b.mzML\tMSV1\tblood
c.mzML\tMSV1\tdried blood!
d.mzML\tMSV1\tdried-blood
";
        let table = load_metadata_str(tsv, &manifest(), false).unwrap();
        let mut report = RunReport::default();
        let dict =
            build_mapping_dictionary(&table, &manifest(), &reg(), &index(), None, &mut report).unwrap();
        let blood = dict.lookup("SampleType", "blood").unwrap();
        assert_eq!(blood.iri, "https://ns.inria.fr/metaboKG/schema/sampletype_blood");
        assert_eq!(blood.kind, DictionaryKind::Individual);
        // "dried blood!" and "dried-blood" collide on slug `dried_blood`:
        // both take deterministic hash suffixes.
        let a = dict.lookup("SampleType", "dried blood!").unwrap();
        let b = dict.lookup("SampleType", "dried-blood").unwrap();
        assert_ne!(a.iri, b.iri);
        for entry in [a, b] {
            assert!(entry.iri.starts_with("https://ns.inria.fr/metaboKG/schema/sampletype_dried_blood_"));
        }
        assert!(report.rows.iter().any(|r| r.kind == "slug-collision"));

        let json = dict.to_json();
        assert!(json.contains("\"SampleType\""));
        assert!(json.contains("\"blood\": \"https://ns.inria.fr/metaboKG/schema/sampletype_blood\""));
    }

    #[test]
    fn dictionary_respects_curation_and_gating() {
        let tsv = "\
filename\tATTRIBUTE_DatasetAccession\tIonizationSourceAndPolarity
a.mzML\tMSV1\tESI positive
b.mzML\tMSV1\tweird source
";
        let table = load_metadata_str(tsv, &manifest(), false).unwrap();

        // Without curation, a curation-required column never auto-accepts.
        let mut report = RunReport::default();
        let dict =
            build_mapping_dictionary(&table, &manifest(), &reg(), &index(), None, &mut report).unwrap();
        assert!(dict.lookup("IonizationSourceAndPolarity", "ESI positive").is_none());
        assert_eq!(
            report.rows.iter().filter(|r| r.kind == "uncurated-value").count(),
            2
        );
        assert!(report.rows.iter().any(|r| r.detail.contains("suggestions")));

        // With curation, the chosen term is used; REJECT stays literal.
        let curation = CurationFile::from_tsv_str(
            "column\traw_value\tchosen\tnote\n\
             IonizationSourceAndPolarity\tESI positive\tMS:1000073\t\n\
             IonizationSourceAndPolarity\tweird source\tREJECT\t\n",
        )
        .unwrap();
        let mut report = RunReport::default();
        let dict = build_mapping_dictionary(&table, &manifest(), &reg(), &index(), Some(&curation), &mut report)
            .unwrap();
        let entry = dict.lookup("IonizationSourceAndPolarity", "ESI positive").unwrap();
        assert_eq!(entry.iri, "http://purl.obolibrary.org/obo/MS_1000073");
        assert_eq!(entry.kind, DictionaryKind::OntologyTerm);
        assert!(dict.lookup("IonizationSourceAndPolarity", "weird source").is_none());
        assert!(report.rows.iter().any(|r| r.kind == "curator-rejected"));
    }

    fn emit_fixture(tsv: &str) -> (crate::emit::TripleDoc, NamespaceRegistry) {
        let reg = reg();
        let idx = index();
        let m = manifest();
        let minter = UriMinter::with_default_prefix();
        let table = load_metadata_str(tsv, &m, false).unwrap();
        let mut report = RunReport::default();
        let dict = build_mapping_dictionary(&table, &m, &reg, &idx, None, &mut report).unwrap();
        let organisms = build_organism_individuals(&table, &m, &minter).unwrap();
        let engine = MappingEngine {
            manifest: &m,
            dictionary: &dict,
            reg: &reg,
            index: &idx,
            minter: &minter,
            strict: false,
        };
        let mut specs: Vec<NodeSpec> = Vec::new();
        for (key, uri) in &organisms.organisms {
            specs.push(organism_spec(key, uri).unwrap());
        }
        for (record, (_, key)) in table.records.iter().zip(&organisms.assignments) {
            let organism_iri = organisms.uri_for(key).map(|u| u.iri());
            specs.push(
                engine
                    .apply_mapping(record, organism_iri.as_deref(), &mut report)
                    .unwrap(),
            );
        }
        let mut dedup = DedupRegistry::new(UriMinter::with_default_prefix());
        let doc = emit(&specs, &reg, &mut dedup, Iri::new("https://ns.inria.fr/metaboKG/graph/meta-test")).unwrap();
        (doc, reg)
    }

    #[test]
    fn mapped_individuals_are_shared_across_rows() {
        let (doc, reg) = emit_fixture(FIXTURE_TSV);
        // Two rows say SampleType=blood: one individual, two inbound edges.
        let class = Iri::new(reg.expand("MBS:SampleType").unwrap());
        let sampletype_subjects = doc.subjects_with_type(&class);
        assert_eq!(sampletype_subjects.len(), 2, "blood and urine");
        let blood = Iri::new("https://ns.inria.fr/metaboKG/schema/sampletype_blood");
        assert!(sampletype_subjects.contains(&blood));
        let attr = Iri::new(reg.expand("SIO:000008").unwrap());
        let inbound = doc
            .with_predicate(&attr)
            .filter(|t| t.object.as_iri() == Some(&blood))
            .count();
        assert_eq!(inbound, 2);
        // The CQ filter shape holds: sampletype IRIs sit under schema/sampletype_
        // and subtypes under schema/sampletype_sub_.
        let sub = Iri::new("https://ns.inria.fr/metaboKG/schema/sampletype_sub_plasma");
        let sub_class = Iri::new(reg.expand("MBS:SampleTypeSub").unwrap());
        assert!(doc.subjects_with_type(&sub_class).contains(&sub));
    }

    #[test]
    fn samples_link_uai_collection_file_and_organism() {
        let (doc, reg) = emit_fixture(FIXTURE_TSV);
        let sample_class = Iri::new(reg.expand("SIO:001050").unwrap());
        let samples = doc.subjects_with_type(&sample_class);
        assert_eq!(samples.len(), 3);

        let id_link = Iri::new(reg.expand("SIO:000675").unwrap());
        let coll_id = Iri::new(reg.expand("MBS:collectionID").unwrap());
        let derived = Iri::new(reg.expand("prov:wasDerivedFrom").unwrap());
        let title = Iri::new(reg.expand("dct:title").unwrap());
        assert_eq!(doc.with_predicate(&id_link).count(), 3);
        assert_eq!(doc.with_predicate(&coll_id).count(), 3);
        assert_eq!(doc.with_predicate(&derived).count(), 3);

        // Each UAI points at a collection that carries its title.
        for t in doc.with_predicate(&coll_id) {
            let coll = t.object.as_iri().unwrap();
            assert_eq!(doc.objects_of(coll, &title).count(), 1);
        }
        // Organisms are typed with their NCBI taxon.
        let rdf_type = Iri::new(RDF_TYPE);
        let human = Iri::new(reg.expand("NCBITaxon:9606").unwrap());
        let organisms: Vec<&Iri> = doc
            .iter()
            .filter(|t| t.predicate == rdf_type && t.object.as_iri() == Some(&human))
            .map(|t| &t.subject)
            .collect();
        assert_eq!(organisms.len(), 1, "one organism individual for both human rows");
        // Round-trip the whole fixture through the independent parser.
        crate::emit::validate_round_trip(&doc).unwrap();
    }

    #[test]
    fn age_stays_a_literal_and_unknown_columns_warn() {
        let (doc, reg) = emit_fixture(FIXTURE_TSV);
        let age_pred = Iri::new(reg.expand("MBS:ageInYears").unwrap());
        let ages: Vec<&Triple> = doc.with_predicate(&age_pred).collect();
        assert_eq!(ages.len(), 3, "each sample carries its age literal");
        for t in ages {
            match &t.object {
                Object::Literal { datatype, .. } => {
                    assert_eq!(datatype.as_str(), XSD_DECIMAL)
                }
                other => panic!("expected literal, got {other:?}"),
            }
        }
        let nt = serialize_ntriples(&doc);
        assert!(!nt.contains("MysteryColumn"), "unknown column never reaches the graph");
    }

    #[test]
    fn strict_mode_rejects_unknown_columns() {
        let m = manifest();
        let reg = reg();
        let idx = index();
        let minter = UriMinter::with_default_prefix();
        let table = load_metadata_str(FIXTURE_TSV, &m, false).unwrap();
        let mut report = RunReport::default();
        let dict = build_mapping_dictionary(&table, &m, &reg, &idx, None, &mut report).unwrap();
        let engine = MappingEngine {
            manifest: &m,
            dictionary: &dict,
            reg: &reg,
            index: &idx,
            minter: &minter,
            strict: true,
        };
        let err = engine
            .apply_mapping(&table.records[0], None, &mut report)
            .unwrap_err();
        assert!(matches!(err, MetadataError::UnmappedColumn { column, .. } if column == "MysteryColumn"));
    }

    #[test]
    fn manifest_validation_catches_mistakes() {
        let reg = reg();
        let base = "\n[table]\nfilename_column = \"filename\"\ncollection_column = \"coll\"\n";
        let mapped_no_target = format!("{base}[[column]]\nname = \"X\"\nstrategy = \"mapped\"\n");
        assert!(matches!(
            MetadataManifest::from_toml_str(&mapped_no_target, &reg).unwrap_err(),
            MetadataError::Manifest(m) if m.contains("target_class")
        ));
        let bad_strategy = format!("{base}[[column]]\nname = \"X\"\nstrategy = \"zap\"\n");
        assert!(matches!(
            MetadataManifest::from_toml_str(&bad_strategy, &reg).unwrap_err(),
            MetadataError::Manifest(m) if m.contains("unknown strategy")
        ));
        let parser_on_mapped = format!(
            "{base}[[column]]\nname = \"X\"\nstrategy = \"mapped\"\ntarget_class = \"MBS:X\"\nparser = \"method_phrase\"\n"
        );
        assert!(matches!(
            MetadataManifest::from_toml_str(&parser_on_mapped, &reg).unwrap_err(),
            MetadataError::Manifest(m) if m.contains("parsers apply only")
        ));
        let dup_rule = format!(
            "{base}[[column]]\nname = \"X\"\nstrategy = \"skip\"\n[[column]]\nname = \"X\"\nstrategy = \"skip\"\n"
        );
        assert!(matches!(
            MetadataManifest::from_toml_str(&dup_rule, &reg).unwrap_err(),
            MetadataError::Manifest(m) if m.contains("two rules")
        ));
    }

    #[test]
    fn slugify_collapses_and_trims() {
        assert_eq!(slugify("Dried Blood!"), "dried_blood");
        assert_eq!(slugify("blood"), "blood");
        assert_eq!(slugify("  spaced   out  "), "spaced_out");
        assert_eq!(slugify("Üble--Probe"), "ble_probe");
        assert_eq!(slugify("???"), "");
    }

    proptest! {
        /// Canonical strings parse back to the same structure.
        #[test]
        fn mixture_round_trips(
            chems in proptest::collection::vec(0usize..6, 1..4),
            ratio in proptest::bool::ANY,
            additive in proptest::option::of(0usize..6),
        ) {
            let idx = index();
            let names = ["methanol", "water", "ethanol", "acetonitrile", "chloroform", "formic acid"];
            let components: Vec<MixtureComponent> = chems
                .iter()
                .enumerate()
                .map(|(i, &c)| MixtureComponent {
                    chemical: ChemicalRef::Term(
                        match_term(names[c], &idx, 1).remove(0).term,
                    ),
                    proportion: ratio.then(|| ((i + 1) * 2).to_string()),
                })
                .collect();
            let additives: Vec<MixtureAdditive> = additive
                .map(|c| MixtureAdditive {
                    chemical: ChemicalRef::Term(match_term(names[c], &idx, 1).remove(0).term),
                    concentration: "0.1".to_owned(),
                    unit: "%".to_owned(),
                })
                .into_iter()
                .collect();
            let mixture = SolventMixture { components, additives };
            let canonical = mixture.canonical_string();
            let (reparsed, _) = parse_solvent_mixture(&canonical, &idx).unwrap();
            prop_assert_eq!(&reparsed, &mixture, "canonical: {}", canonical);
            prop_assert_eq!(reparsed.canonical_string(), canonical);
        }

        /// The dedup ratio always equals the brute-force distinct count.
        #[test]
        fn dedup_ratio_matches_brute_force(keys in proptest::collection::vec(0usize..12, 1..80)) {
            let m = manifest();
            let minter = UriMinter::with_default_prefix();
            let mut tsv = String::from(
                "filename\tATTRIBUTE_DatasetAccession\tNCBITaxonomy\tCountry\tENVOEnvironmentBiome\t\
                 ENVOEnvironmentMaterial\tBiologicalSex\tLifeStage\tHealthStatus\tAgeInYears\n",
            );
            for (i, k) in keys.iter().enumerate() {
                tsv.push_str(&format!("f{i}.mzML\tMSV1\t{}|sp\tc\tb\tm\tf\ta\th\t1\n", 9000 + k));
            }
            let table = load_metadata_str(&tsv, &m, false).unwrap();
            let idx = build_organism_individuals(&table, &m, &minter).unwrap();
            let brute: BTreeSet<usize> = keys.iter().copied().collect();
            let expected = (keys.len() - brute.len()) as f64 / keys.len() as f64;
            prop_assert_eq!(idx.dedup_ratio, expected);
            prop_assert_eq!(idx.organisms.len(), brute.len());
        }
    }
}
