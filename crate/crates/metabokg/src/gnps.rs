//! GNPS job-result ingestion: MN and FBMN annotation tables in, annotation
//! node trees out.
//!
//! A bundle is a downloaded job-result directory. [`GnpsBundle::scan`] finds
//! the annotation table (optionally steered by a `bundle.toml`), sniffs the
//! delimiter, and classifies the workflow: FBMN when a feature
//! quantification table is present, MN otherwise. [`load_gnps_job`] then
//! harmonizes rows column by column under a [`GnpsColumnManifest`], whose
//! three strategies mirror how values reach the graph: `direct_map` (typed
//! node carrying the value as a `prov:value` literal), `literal` (plain
//! literal), and `ontology_lookup` (an exact ontology term when one matches,
//! otherwise a named individual under the listed class). Unknown columns
//! survive as schema-namespace raw literals with a warning.
//!
//! Every row yields one [`AnnotationRecord`] with a complete identifier: MN
//! rows carry the cluster scan, FBMN rows the feature id and feature table.
//! [`GnpsEmitter`] turns records into node-spec trees shaped for the
//! competency queries: annotation → identification result (`prov:had_member`
//! score value-nodes) → classification value-nodes with their level
//! designators → one shared library-spectrum individual per accession.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::align::{match_term, TermIndex};
use crate::emit::locator_to_url;
use crate::ident::{IdentError, Uai};
use crate::metadata::{
    assign_slug_iris, default_missing_markers, normalize_cell, slugify, DictionaryEntry,
    DictionaryKind, MappingDictionary, RunReport, SkippedRow,
};
use crate::node::{ModelError, NodeSpec, TypedLiteral, XSD_STRING};
use crate::vocab::{terms, NamespaceRegistry, OntologyTermRef, VocabError};

#[derive(Debug, Error)]
pub enum GnpsError {
    #[error("failed to read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unrecognized bundle layout at {path}: {reason}")]
    UnknownLayout { path: PathBuf, reason: String },
    #[error("mandatory column or setting `{0}` is missing")]
    MissingMandatoryColumn(String),
    #[error("duplicate column `{0}` in annotation table")]
    DuplicateColumn(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("invalid column manifest: {0}")]
    Manifest(String),
    #[error("invalid bundle configuration: {0}")]
    BundleConfig(String),
    #[error("failed to parse TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ident(#[from] IdentError),
}

/// The two GNPS analysis layouts sharing one table schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workflow {
    Mn,
    Fbmn,
}

impl Workflow {
    pub fn as_str(&self) -> &'static str {
        match self {
            Workflow::Mn => "MN",
            Workflow::Fbmn => "FBMN",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("mn") {
            Some(Workflow::Mn)
        } else if s.eq_ignore_ascii_case("fbmn") {
            Some(Workflow::Fbmn)
        } else {
            None
        }
    }
}

impl fmt::Display for Workflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Column manifest

/// How one table column reaches the graph.
#[derive(Debug, Clone)]
pub enum GnpsStrategy {
    /// Typed value node carrying the cell as a `prov:value` literal; with
    /// `designator`, the node also points at its own class via the
    /// designator predicate (the classification-level pattern).
    DirectMap {
        target_class: OntologyTermRef,
        datatype: String,
        designator: bool,
    },
    /// Plain literal on the attachment node.
    Literal { predicate: OntologyTermRef },
    /// Exact ontology term when the index resolves one, otherwise a named
    /// individual under `target_class` with a stem-plus-slug IRI.
    OntologyLookup {
        target_class: OntologyTermRef,
        stem: String,
    },
}

/// Which node of the annotation tree a column's result hangs off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttachPoint {
    Annotation,
    Identification,
    Library,
}

/// Structured record fields a column can be bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RecordField {
    MqScore,
    SharedPeaks,
    MzErrorPpm,
    MassDiff,
    CompoundName,
    InchiKey,
    PrecursorMz,
    Adduct,
    Instrument,
    Ionization,
    Quality,
    CfKingdom,
    CfSuperclass,
    CfClass,
    CfSubclass,
    NpcPathway,
    NpcSuperclass,
    NpcClass,
}

impl RecordField {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mq_score" => Self::MqScore,
            "shared_peaks" => Self::SharedPeaks,
            "mz_error_ppm" => Self::MzErrorPpm,
            "mass_diff" => Self::MassDiff,
            "compound_name" => Self::CompoundName,
            "inchikey" => Self::InchiKey,
            "precursor_mz" => Self::PrecursorMz,
            "adduct" => Self::Adduct,
            "instrument" => Self::Instrument,
            "ionization" => Self::Ionization,
            "quality" => Self::Quality,
            "cf_kingdom" => Self::CfKingdom,
            "cf_superclass" => Self::CfSuperclass,
            "cf_class" => Self::CfClass,
            "cf_subclass" => Self::CfSubclass,
            "npc_pathway" => Self::NpcPathway,
            "npc_superclass" => Self::NpcSuperclass,
            "npc_class" => Self::NpcClass,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GnpsColumnRule {
    pub strategy: GnpsStrategy,
    pub attach: AttachPoint,
    pub field: Option<RecordField>,
}

#[derive(Debug, Clone)]
pub struct GnpsColumnManifest {
    pub accession_column: String,
    pub mzml_column: String,
    pub scan_column: String,
    /// Optional hit-number column; absent (or an empty cell) means hit 1.
    pub hit_column: Option<String>,
    pub missing_markers: Vec<String>,
    rules: BTreeMap<String, GnpsColumnRule>,
}

#[derive(Debug, Deserialize)]
struct RawGnpsManifest {
    accession_column: String,
    mzml_column: String,
    scan_column: String,
    hit_column: Option<String>,
    missing_markers: Option<Vec<String>>,
    #[serde(default, rename = "column")]
    columns: Vec<RawGnpsColumn>,
}

#[derive(Debug, Deserialize)]
struct RawGnpsColumn {
    name: String,
    strategy: String,
    field: Option<String>,
    target_class: Option<String>,
    predicate: Option<String>,
    datatype: Option<String>,
    individual_stem: Option<String>,
    #[serde(default)]
    designator: bool,
    attach: Option<String>,
}

const GNPS_COLUMNS_TOML: &str = include_str!("../data/gnps_columns.toml");

impl GnpsColumnManifest {
    pub fn from_toml_str(text: &str, reg: &NamespaceRegistry) -> Result<Self, GnpsError> {
        let raw: RawGnpsManifest = toml::from_str(text)?;
        let mut rules = BTreeMap::new();
        let mut bound_fields: BTreeMap<RecordField, String> = BTreeMap::new();
        for col in raw.columns {
            if col.name.trim().is_empty() {
                return Err(GnpsError::Manifest("column rule with empty name".into()));
            }
            let required_class = |what: &str| {
                col.target_class
                    .as_deref()
                    .map(OntologyTermRef::parse_curie)
                    .transpose()
                    .map_err(GnpsError::Vocab)?
                    .ok_or_else(|| {
                        GnpsError::Manifest(format!(
                            "column `{}`: {what} strategy requires target_class",
                            col.name
                        ))
                    })
            };
            let strategy = match col.strategy.as_str() {
                "direct_map" => GnpsStrategy::DirectMap {
                    target_class: required_class("direct_map")?,
                    datatype: match &col.datatype {
                        Some(dt) if dt.starts_with("http://") || dt.starts_with("https://") => {
                            dt.clone()
                        }
                        Some(dt) => reg.expand(dt)?,
                        None => XSD_STRING.to_owned(),
                    },
                    designator: col.designator,
                },
                "literal" => {
                    if col.designator {
                        return Err(GnpsError::Manifest(format!(
                            "column `{}`: designator applies only to direct_map",
                            col.name
                        )));
                    }
                    GnpsStrategy::Literal {
                        predicate: match &col.predicate {
                            Some(curie) => OntologyTermRef::parse_curie(curie)?,
                            None => terms::mbs(&format!("raw_{}", slugify(&col.name))),
                        },
                    }
                }
                "ontology_lookup" => {
                    if col.designator {
                        return Err(GnpsError::Manifest(format!(
                            "column `{}`: designator applies only to direct_map",
                            col.name
                        )));
                    }
                    GnpsStrategy::OntologyLookup {
                        target_class: required_class("ontology_lookup")?,
                        stem: col
                            .individual_stem
                            .clone()
                            .unwrap_or_else(|| format!("{}_", slugify(&col.name))),
                    }
                }
                other => {
                    return Err(GnpsError::Manifest(format!(
                        "column `{}`: unknown strategy `{other}`",
                        col.name
                    )))
                }
            };
            let attach = match col.attach.as_deref() {
                None | Some("annotation") => AttachPoint::Annotation,
                Some("identification") => AttachPoint::Identification,
                Some("library") => AttachPoint::Library,
                Some(other) => {
                    return Err(GnpsError::Manifest(format!(
                        "column `{}`: unknown attach point `{other}`",
                        col.name
                    )))
                }
            };
            let field = match &col.field {
                Some(name) => {
                    let field = RecordField::parse(name).ok_or_else(|| {
                        GnpsError::Manifest(format!(
                            "column `{}`: unknown field `{name}`",
                            col.name
                        ))
                    })?;
                    if let Some(previous) = bound_fields.insert(field, col.name.clone()) {
                        return Err(GnpsError::Manifest(format!(
                            "field `{name}` bound by both `{previous}` and `{}`",
                            col.name
                        )));
                    }
                    Some(field)
                }
                None => None,
            };
            if rules
                .insert(col.name.clone(), GnpsColumnRule { strategy, attach, field })
                .is_some()
            {
                return Err(GnpsError::Manifest(format!(
                    "column `{}` has two rules",
                    col.name
                )));
            }
        }
        Ok(Self {
            accession_column: raw.accession_column,
            mzml_column: raw.mzml_column,
            scan_column: raw.scan_column,
            hit_column: raw.hit_column,
            missing_markers: raw.missing_markers.unwrap_or_else(default_missing_markers),
            rules,
        })
    }

    pub fn from_toml_path(
        path: impl AsRef<Path>,
        reg: &NamespaceRegistry,
    ) -> Result<Self, GnpsError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GnpsError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text, reg)
    }

    /// The manifest shipped with the crate, tuned to GNPS result columns.
    pub fn builtin(reg: &NamespaceRegistry) -> Result<Self, GnpsError> {
        Self::from_toml_str(GNPS_COLUMNS_TOML, reg)
    }

    pub fn rule(&self, column: &str) -> Option<&GnpsColumnRule> {
        self.rules.get(column)
    }

    pub fn rules(&self) -> impl Iterator<Item = (&String, &GnpsColumnRule)> {
        self.rules.iter()
    }
}

// ---------------------------------------------------------------------------
// Bundle layout

#[derive(Debug, Default, Deserialize)]
struct RawBundleConfig {
    job_id: Option<String>,
    collection_id: Option<String>,
    annotation_table: Option<String>,
    feature_table: Option<String>,
    workflow: Option<String>,
    software: Option<String>,
    delimiter: Option<String>,
}

/// One scanned job-result directory, ready to load.
#[derive(Debug, Clone)]
pub struct GnpsBundle {
    pub job_id: String,
    pub collection_id: String,
    pub workflow: Workflow,
    pub annotation_path: PathBuf,
    pub annotation_filename: String,
    /// Feature quantification table filename; present exactly for FBMN.
    pub feature_table: Option<String>,
    pub software: String,
    pub delimiter: u8,
}

fn read_first_line(path: &Path) -> Result<String, GnpsError> {
    let file = fs::File::open(path).map_err(|source| GnpsError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut line = String::new();
    BufReader::new(file)
        .read_line(&mut line)
        .map_err(|source| GnpsError::Io {
            path: path.to_owned(),
            source,
        })?;
    Ok(line)
}

fn sniff_delimiter(header: &str) -> u8 {
    let tabs = header.bytes().filter(|b| *b == b'\t').count();
    let commas = header.bytes().filter(|b| *b == b',').count();
    if tabs >= commas {
        b'\t'
    } else {
        b','
    }
}

fn header_has_column(header: &str, column: &str) -> bool {
    let delim = sniff_delimiter(header) as char;
    header
        .trim_end_matches(['\r', '\n'])
        .split(delim)
        .any(|field| field.trim().trim_matches('"') == column)
}

fn basename(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

/// Table files under the bundle root, one subdirectory level deep, sorted.
fn table_files(root: &Path) -> Result<Vec<PathBuf>, GnpsError> {
    fn collect(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                if depth < 1 {
                    collect(&path, depth + 1, out)?;
                }
            } else if matches!(
                path.extension().and_then(|e| e.to_str()),
                Some("tsv") | Some("csv")
            ) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    collect(root, 0, &mut out).map_err(|source| GnpsError::Io {
        path: root.to_owned(),
        source,
    })?;
    out.sort();
    Ok(out)
}

fn scan_layout(
    root: &Path,
    manifest: &GnpsColumnManifest,
) -> Result<(PathBuf, Option<String>, RawBundleConfig), GnpsError> {
    if !root.is_dir() {
        return Err(GnpsError::UnknownLayout {
            path: root.to_owned(),
            reason: "not a directory".into(),
        });
    }
    let config_path = root.join("bundle.toml");
    let cfg: RawBundleConfig = if config_path.is_file() {
        let text = fs::read_to_string(&config_path).map_err(|source| GnpsError::Io {
            path: config_path.clone(),
            source,
        })?;
        toml::from_str(&text)?
    } else {
        RawBundleConfig::default()
    };

    let files = table_files(root)?;
    let annotation_path = match &cfg.annotation_table {
        Some(rel) => {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(GnpsError::BundleConfig(format!(
                    "declared annotation_table `{rel}` not found"
                )));
            }
            path
        }
        None => {
            let mut found = None;
            for path in &files {
                if header_has_column(&read_first_line(path)?, &manifest.accession_column) {
                    found = Some(path.clone());
                    break;
                }
            }
            found.ok_or_else(|| GnpsError::UnknownLayout {
                path: root.to_owned(),
                reason: format!(
                    "no table with accession column `{}`",
                    manifest.accession_column
                ),
            })?
        }
    };
    let feature_table = match &cfg.feature_table {
        Some(rel) => {
            if !root.join(rel).is_file() {
                return Err(GnpsError::BundleConfig(format!(
                    "declared feature_table `{rel}` not found"
                )));
            }
            Some(basename(rel).to_owned())
        }
        None => files
            .iter()
            .filter(|p| *p != &annotation_path)
            .find(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.to_ascii_lowercase().contains("quant"))
            })
            .and_then(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned)),
    };
    Ok((annotation_path, feature_table, cfg))
}

fn resolve_workflow(
    cfg: &RawBundleConfig,
    feature_table: &Option<String>,
) -> Result<Workflow, GnpsError> {
    match &cfg.workflow {
        Some(s) => {
            let workflow = Workflow::parse(s)
                .ok_or_else(|| GnpsError::BundleConfig(format!("unknown workflow `{s}`")))?;
            if workflow == Workflow::Fbmn && feature_table.is_none() {
                return Err(GnpsError::BundleConfig(
                    "workflow FBMN declared but no feature table found".into(),
                ));
            }
            Ok(workflow)
        }
        None => Ok(if feature_table.is_some() {
            Workflow::Fbmn
        } else {
            Workflow::Mn
        }),
    }
}

/// Classify a bundle directory without requiring its collection binding:
/// FBMN when a feature quantification table is present or declared, MN when
/// only an annotation table is found.
pub fn detect_workflow(
    root: impl AsRef<Path>,
    manifest: &GnpsColumnManifest,
) -> Result<Workflow, GnpsError> {
    let (_, feature_table, cfg) = scan_layout(root.as_ref(), manifest)?;
    resolve_workflow(&cfg, &feature_table)
}

impl GnpsBundle {
    /// Scan a job-result directory: locate the annotation table (declared in
    /// `bundle.toml` or found by its accession column), classify the
    /// workflow, and sniff the delimiter. The collection binding must come
    /// from `bundle.toml` — annotation tables do not carry it.
    pub fn scan(
        root: impl AsRef<Path>,
        manifest: &GnpsColumnManifest,
    ) -> Result<Self, GnpsError> {
        let root = root.as_ref();
        let (annotation_path, feature_table, cfg) = scan_layout(root, manifest)?;
        let workflow = resolve_workflow(&cfg, &feature_table)?;
        let feature_table = match workflow {
            Workflow::Fbmn => feature_table,
            Workflow::Mn => None,
        };
        let collection_id = cfg
            .collection_id
            .ok_or_else(|| GnpsError::MissingMandatoryColumn("collection".into()))?;
        let delimiter = match &cfg.delimiter {
            Some(s) if s.len() == 1 => s.as_bytes()[0],
            Some(s) => {
                return Err(GnpsError::BundleConfig(format!(
                    "delimiter must be one byte, got `{}`",
                    s.escape_debug()
                )))
            }
            None => sniff_delimiter(&read_first_line(&annotation_path)?),
        };
        let job_id = cfg.job_id.unwrap_or_else(|| {
            root.file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("job")
                .to_owned()
        });
        let annotation_filename = annotation_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("annotations.tsv")
            .to_owned();
        Ok(Self {
            job_id,
            collection_id,
            workflow,
            annotation_path,
            annotation_filename,
            feature_table,
            software: cfg.software.unwrap_or_else(|| "GNPS".into()),
            delimiter,
        })
    }
}

// ---------------------------------------------------------------------------
// Records

/// The scores of one identification result, as validated lexical forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentificationScores {
    /// Modified cosine score in `[0, 1]`.
    pub mq_score: String,
    /// Non-negative peak count.
    pub shared_peaks: String,
    pub mz_error_ppm: Option<String>,
    pub mass_diff: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassyFireLevels {
    pub kingdom: Option<String>,
    pub superclass: Option<String>,
    pub class: Option<String>,
    pub subclass: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NpClassifierLevels {
    pub pathway: Option<String>,
    pub superclass: Option<String>,
    pub class: Option<String>,
}

/// The two complementary classification views; each is present only when at
/// least one of its levels is populated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassificationSet {
    pub classyfire: Option<ClassyFireLevels>,
    pub npclassifier: Option<NpClassifierLevels>,
}

/// One harmonized annotation row.
#[derive(Debug, Clone)]
pub struct AnnotationRecord {
    /// 1-based data-row number in the annotation table.
    pub row_id: usize,
    pub uai: Uai,
    pub workflow: Workflow,
    /// Library spectrum accession this row matched.
    pub library_spectrum_key: String,
    pub identification: IdentificationScores,
    pub classifications: ClassificationSet,
    pub compound_name: Option<String>,
    pub inchikey: Option<String>,
    /// Non-missing cells of manifest-ruled columns, by column name.
    pub values: BTreeMap<String, String>,
    /// Non-missing cells of columns with no manifest rule.
    pub raw_columns: BTreeMap<String, String>,
}

/// Merged per-accession library metadata across a job's rows.
#[derive(Debug, Clone, Default)]
pub struct LibrarySpectrumSpec {
    pub accession: String,
    pub precursor_mz: Option<String>,
    pub adduct: Option<String>,
    pub inchikey: Option<String>,
    pub instrument: Option<String>,
    pub ionization: Option<String>,
    pub quality: Option<String>,
}

/// Everything one loaded job yields.
#[derive(Debug)]
pub struct GnpsJobLoad {
    pub workflow: Workflow,
    pub records: Vec<AnnotationRecord>,
    pub libraries: BTreeMap<String, LibrarySpectrumSpec>,
    /// Resolved IRIs for every ontology-lookup column value.
    pub dictionary: MappingDictionary,
    pub report: RunReport,
    pub skipped_rows: Vec<SkippedRow>,
}

fn merge_library_field(
    slot: &mut Option<String>,
    value: Option<&String>,
    accession: &str,
    what: &str,
    report: &mut RunReport,
) {
    let Some(value) = value else { return };
    match slot {
        None => *slot = Some(value.clone()),
        Some(previous) if previous != value => report.push(
            None,
            what,
            "library-conflict",
            format!("{accession}: `{previous}` vs `{value}`; kept first"),
        ),
        _ => {}
    }
}

/// Load one job's annotation table into harmonized records.
///
/// In lenient mode, rows with missing identifiers or out-of-range scores are
/// skipped and recorded; in strict mode they are errors. The returned
/// dictionary fixes IRIs for every ontology-lookup value ahead of emission,
/// with the same slug-collision policy as metadata mapping.
pub fn load_gnps_job(
    bundle: &GnpsBundle,
    manifest: &GnpsColumnManifest,
    index: &TermIndex,
    reg: &NamespaceRegistry,
    strict: bool,
) -> Result<GnpsJobLoad, GnpsError> {
    let text = fs::read_to_string(&bundle.annotation_path).map_err(|source| GnpsError::Io {
        path: bundle.annotation_path.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(bundle.delimiter)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    {
        let mut seen = std::collections::BTreeSet::new();
        for h in &headers {
            if !h.is_empty() && !seen.insert(h.clone()) {
                return Err(GnpsError::DuplicateColumn(h.clone()));
            }
        }
    }
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mandatory = |name: &str| {
        position(name).ok_or_else(|| GnpsError::MissingMandatoryColumn(name.to_owned()))
    };
    let accession_idx = mandatory(&manifest.accession_column)?;
    let mzml_idx = mandatory(&manifest.mzml_column)?;
    let scan_idx = mandatory(&manifest.scan_column)?;
    let hit_idx = manifest.hit_column.as_deref().and_then(position);
    let core = [Some(accession_idx), Some(mzml_idx), Some(scan_idx), hit_idx];

    let mut report = RunReport::default();
    let mut ruled: Vec<(usize, String)> = Vec::new();
    let mut unknown: Vec<(usize, String)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if core.contains(&Some(i)) || h.is_empty() {
            continue;
        }
        if manifest.rule(h).is_some() {
            ruled.push((i, h.clone()));
        } else {
            report.push(
                None,
                h,
                "unknown-column",
                "no rule; values kept as raw literals",
            );
            unknown.push((i, h.clone()));
        }
    }
    let field_idx: BTreeMap<RecordField, usize> = ruled
        .iter()
        .filter_map(|(i, name)| {
            manifest
                .rule(name)
                .and_then(|r| r.field)
                .map(|field| (field, *i))
        })
        .collect();

    let markers = &manifest.missing_markers;
    let mut records = Vec::new();
    let mut libraries: BTreeMap<String, LibrarySpectrumSpec> = BTreeMap::new();
    let mut skipped_rows = Vec::new();
    'rows: for (idx, row) in reader.records().enumerate() {
        let row_id = idx + 1;
        let row = row?;
        let cell = |i: usize| normalize_cell(row.get(i).unwrap_or(""), markers);
        // A closure capturing `skipped_rows` would fight the borrow checker;
        // collect skips through a small macro-free helper instead.
        let mut skip = |reason: String,
                        skipped_rows: &mut Vec<SkippedRow>|
         -> Result<(), GnpsError> {
            if strict {
                return Err(GnpsError::MalformedRow { row: row_id, reason });
            }
            skipped_rows.push(SkippedRow { row: row_id, reason });
            Ok(())
        };

        let Some(accession) = cell(accession_idx) else {
            skip("missing library accession".into(), &mut skipped_rows)?;
            continue;
        };
        let Some(mzml_raw) = cell(mzml_idx) else {
            skip("missing spectrum file".into(), &mut skipped_rows)?;
            continue;
        };
        let Some(scan) = cell(scan_idx) else {
            skip("missing scan/feature index".into(), &mut skipped_rows)?;
            continue;
        };
        let hit = match hit_idx.and_then(cell) {
            Some(raw) => match raw.parse::<u64>() {
                Ok(n) => n,
                Err(_) => {
                    skip(format!("hit number `{raw}` is not an integer"), &mut skipped_rows)?;
                    continue;
                }
            },
            None => 1,
        };

        let mut builder = Uai::builder()
            .collection_id(&bundle.collection_id)
            .mzml(basename(&mzml_raw))
            .annotation_file(&bundle.annotation_filename)
            .hit_number(hit);
        builder = match bundle.workflow {
            Workflow::Mn => builder.scan(&scan),
            Workflow::Fbmn => builder
                .feature_id(&scan)
                .feature_table(bundle.feature_table.as_deref().unwrap_or_default()),
        };
        let uai = match builder.build().and_then(|u| {
            u.validate_gnps_context()?;
            Ok(u)
        }) {
            Ok(uai) => uai,
            Err(e) => {
                skip(format!("invalid identifier: {e}"), &mut skipped_rows)?;
                continue;
            }
        };

        let field = |f: RecordField| field_idx.get(&f).and_then(|&i| cell(i));
        let Some(mq_score) = field(RecordField::MqScore) else {
            skip("missing MQ score".into(), &mut skipped_rows)?;
            continue;
        };
        match mq_score.parse::<f64>() {
            Ok(v) if (0.0..=1.0).contains(&v) && TypedLiteral::decimal(&mq_score).is_ok() => {}
            _ => {
                skip(format!("MQ score `{mq_score}` outside [0, 1]"), &mut skipped_rows)?;
                continue;
            }
        }
        let Some(shared_peaks) = field(RecordField::SharedPeaks) else {
            skip("missing shared peak count".into(), &mut skipped_rows)?;
            continue;
        };
        if shared_peaks.parse::<i64>().map_or(true, |n| n < 0)
            || TypedLiteral::integer(&shared_peaks).is_err()
        {
            skip(
                format!("shared peak count `{shared_peaks}` is not a non-negative integer"),
                &mut skipped_rows,
            )?;
            continue 'rows;
        }
        let optional_decimal = |f: RecordField, what: &str, report: &mut RunReport| {
            field(f).and_then(|v| {
                if TypedLiteral::decimal(&v).is_ok() {
                    Some(v)
                } else {
                    report.push(Some(row_id), what, "bad-lexical-form", format!("`{v}` is not a decimal"));
                    None
                }
            })
        };
        let identification = IdentificationScores {
            mq_score,
            shared_peaks,
            mz_error_ppm: optional_decimal(RecordField::MzErrorPpm, "mz_error_ppm", &mut report),
            mass_diff: optional_decimal(RecordField::MassDiff, "mass_diff", &mut report),
        };

        let classyfire = ClassyFireLevels {
            kingdom: field(RecordField::CfKingdom),
            superclass: field(RecordField::CfSuperclass),
            class: field(RecordField::CfClass),
            subclass: field(RecordField::CfSubclass),
        };
        let npclassifier = NpClassifierLevels {
            pathway: field(RecordField::NpcPathway),
            superclass: field(RecordField::NpcSuperclass),
            class: field(RecordField::NpcClass),
        };
        let classifications = ClassificationSet {
            classyfire: (classyfire != ClassyFireLevels::default()).then_some(classyfire),
            npclassifier: (npclassifier != NpClassifierLevels::default()).then_some(npclassifier),
        };

        let library = libraries.entry(accession.clone()).or_insert_with(|| {
            LibrarySpectrumSpec {
                accession: accession.clone(),
                ..LibrarySpectrumSpec::default()
            }
        });
        for (slot_field, what) in [
            (RecordField::PrecursorMz, "precursor_mz"),
            (RecordField::Adduct, "adduct"),
            (RecordField::InchiKey, "inchikey"),
            (RecordField::Instrument, "instrument"),
            (RecordField::Ionization, "ionization"),
            (RecordField::Quality, "quality"),
        ] {
            let value = field(slot_field);
            let slot = match slot_field {
                RecordField::PrecursorMz => &mut library.precursor_mz,
                RecordField::Adduct => &mut library.adduct,
                RecordField::InchiKey => &mut library.inchikey,
                RecordField::Instrument => &mut library.instrument,
                RecordField::Ionization => &mut library.ionization,
                RecordField::Quality => &mut library.quality,
                _ => unreachable!("library fields only"),
            };
            merge_library_field(slot, value.as_ref(), &accession, what, &mut report);
        }

        let values: BTreeMap<String, String> = ruled
            .iter()
            .filter_map(|(i, name)| cell(*i).map(|v| (name.clone(), v)))
            .collect();
        let raw_columns: BTreeMap<String, String> = unknown
            .iter()
            .filter_map(|(i, name)| cell(*i).map(|v| (name.clone(), v)))
            .collect();

        records.push(AnnotationRecord {
            row_id,
            uai,
            workflow: bundle.workflow,
            library_spectrum_key: accession,
            identification,
            classifications,
            compound_name: field(RecordField::CompoundName),
            inchikey: field(RecordField::InchiKey),
            values,
            raw_columns,
        });
    }

    // Fix IRIs for ontology-lookup values over the whole job, so slug
    // collisions are settled before emission.
    let schema_ns = reg
        .namespace("MBS")
        .ok_or_else(|| GnpsError::Manifest("schema prefix MBS is not bound".into()))?
        .to_owned();
    let mut dictionary = MappingDictionary::default();
    for (column, rule) in manifest.rules() {
        let GnpsStrategy::OntologyLookup { target_class, stem } = &rule.strategy else {
            continue;
        };
        let distinct: std::collections::BTreeSet<&str> = records
            .iter()
            .filter_map(|r| r.values.get(column))
            .map(String::as_str)
            .collect();
        if distinct.is_empty() {
            continue;
        }
        let mut unmatched = std::collections::BTreeSet::new();
        for value in distinct {
            let best = match_term(value, index, 1);
            match best.first() {
                Some(c) if c.score == 1.0 => {
                    dictionary.insert(
                        column,
                        value,
                        DictionaryEntry {
                            iri: reg.expand_term(&c.term)?,
                            kind: DictionaryKind::OntologyTerm,
                            target_class: None,
                        },
                    );
                }
                _ => {
                    unmatched.insert(value);
                }
            }
        }
        for (value, iri) in assign_slug_iris(&schema_ns, stem, &unmatched, column, &mut report) {
            dictionary.insert(
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

    Ok(GnpsJobLoad {
        workflow: bundle.workflow,
        records,
        libraries,
        dictionary,
        report,
        skipped_rows,
    })
}

// ---------------------------------------------------------------------------
// Emission

enum Emission {
    Node(NodeSpec),
    Iri(String),
    Literal(OntologyTermRef, TypedLiteral),
}

/// Turns annotation records into node-spec trees.
pub struct GnpsEmitter<'a> {
    pub manifest: &'a GnpsColumnManifest,
    pub reg: &'a NamespaceRegistry,
    pub bundle: &'a GnpsBundle,
    pub dictionary: &'a MappingDictionary,
    pub strict: bool,
}

impl GnpsEmitter<'_> {
    /// Build the node tree for one record. The returned root is the
    /// annotation entity; its identifier node, identification result,
    /// classifications, shared library-spectrum individual, and job activity
    /// hang off it.
    pub fn annotation_spec(
        &self,
        record: &AnnotationRecord,
        report: &mut RunReport,
    ) -> Result<NodeSpec, GnpsError> {
        let uai_s = record.uai.serialize();
        let collection = NodeSpec::prov_entity("collection", vec![terms::dcat_dataset()])
            .with_identity("collection", &self.bundle.collection_id)
            .with_label(&self.bundle.collection_id)
            .with_literal_edge(
                terms::dct_title(),
                TypedLiteral::string(&self.bundle.collection_id)?,
            );
        let mzml = record.uai.mzml().unwrap_or_default().to_owned();
        let (run_pred, run_url) =
            locator_to_url(&format!("{}/{}", self.bundle.collection_id, mzml));
        let run_file = NodeSpec::prov_entity("msrun-file", vec![terms::dcat_distribution()])
            .with_identity("collection", &self.bundle.collection_id)
            .with_identity("file", &mzml)
            .with_label(&mzml)
            .with_literal_edge(terms::dct_title(), TypedLiteral::string(&mzml)?)
            .with_iri_edge(run_pred, run_url);
        let table_file = |name: &str| -> Result<NodeSpec, GnpsError> {
            let (pred, url) = locator_to_url(&format!("{}/{}", self.bundle.job_id, name));
            Ok(
                NodeSpec::prov_entity("annotation-file", vec![terms::dcat_distribution()])
                    .with_identity("job", &self.bundle.job_id)
                    .with_identity("file", name)
                    .with_label(name)
                    .with_literal_edge(terms::dct_title(), TypedLiteral::string(name)?)
                    .with_iri_edge(pred, url),
            )
        };

        let mut uai_node = NodeSpec::prov_entity("uai", vec![terms::mbs("UAI")])
            .with_identity("uai", &uai_s)
            .with_label(&uai_s)
            .with_node_edge(terms::mbs("collectionID"), collection)
            .with_node_edge(terms::mbs("mzML"), run_file)
            .with_node_edge(
                terms::mbs("annotationFile"),
                table_file(&self.bundle.annotation_filename)?,
            )
            .with_literal_edge(
                terms::mbs("hitNumber"),
                TypedLiteral::integer(&record.uai.hit_number().unwrap_or(1).to_string())?,
            );
        if let Some(scan) = record.uai.scan() {
            uai_node = uai_node
                .with_literal_edge(terms::mbs("scan"), TypedLiteral::string(scan)?);
        }
        if let Some(feature_id) = record.uai.feature_id() {
            uai_node = uai_node
                .with_literal_edge(terms::mbs("featureID"), TypedLiteral::string(feature_id)?);
        }
        if let Some(feature_table) = record.uai.feature_table() {
            uai_node = uai_node
                .with_node_edge(terms::mbs("featureTable"), table_file(feature_table)?);
        }

        let mut identification =
            NodeSpec::prov_entity("identification-result", vec![terms::ms_identification_result()])
                .with_identity("uai", &uai_s);
        let mut library = NodeSpec::named_individual(
            "library-spectrum",
            vec![terms::ms_library_spectrum()],
        )?
        .with_label(&record.library_spectrum_key);
        let mut annotation =
            NodeSpec::prov_entity("annotation", vec![terms::mbs("MolecularAnnotation")])
                .with_identity("uai", &uai_s)
                .with_label(record.compound_name.as_deref().unwrap_or(&uai_s));

        for (column, value) in &record.values {
            let rule = self
                .manifest
                .rule(column)
                .expect("only ruled columns reach record.values");
            let Some(emission) = self.column_emission(column, rule, value, record.row_id, report)?
            else {
                continue;
            };
            match (rule.attach, emission) {
                (AttachPoint::Identification, Emission::Node(node)) => {
                    identification = identification.with_node_edge(terms::prov_had_member(), node);
                }
                (AttachPoint::Identification, Emission::Iri(iri)) => {
                    identification = identification.with_iri_edge(terms::prov_had_member(), iri);
                }
                (AttachPoint::Library, Emission::Node(node)) => {
                    library = library.with_node_edge(terms::sio_has_attribute(), node);
                }
                (AttachPoint::Library, Emission::Iri(iri)) => {
                    library = library.with_iri_edge(terms::sio_has_attribute(), iri);
                }
                (AttachPoint::Annotation, Emission::Node(node)) => {
                    annotation = annotation.with_node_edge(terms::sio_has_attribute(), node);
                }
                (AttachPoint::Annotation, Emission::Iri(iri)) => {
                    annotation = annotation.with_iri_edge(terms::sio_has_attribute(), iri);
                }
                (AttachPoint::Identification, Emission::Literal(pred, lit)) => {
                    identification = identification.with_literal_edge(pred, lit);
                }
                (AttachPoint::Library, Emission::Literal(pred, lit)) => {
                    library = library.with_literal_edge(pred, lit);
                }
                (AttachPoint::Annotation, Emission::Literal(pred, lit)) => {
                    annotation = annotation.with_literal_edge(pred, lit);
                }
            }
        }
        for (column, value) in &record.raw_columns {
            annotation = annotation.with_literal_edge(
                terms::mbs(&format!("raw_{}", slugify(column))),
                TypedLiteral::string(value)?,
            );
        }

        let software =
            NodeSpec::named_individual("software", vec![terms::mbs("ProcessingSoftware")])?
                .with_label(&self.bundle.software);
        let job = NodeSpec::prov_activity("gnps-job", vec![terms::mbs("GNPSJob")])
            .with_identity("job", &self.bundle.job_id)
            .with_label(&self.bundle.job_id)
            .with_literal_edge(
                terms::mbs("workflowType"),
                TypedLiteral::string(record.workflow.as_str())?,
            )
            .with_node_edge(terms::prov_used(), software);

        Ok(annotation
            .with_node_edge(terms::sio_identifier_link(), uai_node)
            .with_node_edge(terms::prov_has_primary_source(), identification)
            .with_node_edge(terms::sio_has_attribute(), library)
            .with_node_edge(terms::prov_was_generated_by(), job))
    }

    fn column_emission(
        &self,
        column: &str,
        rule: &GnpsColumnRule,
        value: &str,
        row_id: usize,
        report: &mut RunReport,
    ) -> Result<Option<Emission>, GnpsError> {
        Ok(Some(match &rule.strategy {
            GnpsStrategy::DirectMap {
                target_class,
                datatype,
                designator,
            } => {
                let literal = match TypedLiteral::new(value, datatype) {
                    Ok(lit) => lit,
                    Err(e) => {
                        if self.strict {
                            return Err(e.into());
                        }
                        report.push(
                            Some(row_id),
                            column,
                            "bad-lexical-form",
                            format!("`{value}` is not a valid {datatype}; kept as string"),
                        );
                        TypedLiteral::string(value)?
                    }
                };
                let mut node = NodeSpec::value_node(vec![target_class.clone()], literal)?;
                if *designator {
                    node = node.with_iri_edge(
                        terms::sio_designator_link(),
                        self.reg.expand_term(target_class)?,
                    );
                }
                Emission::Node(node)
            }
            GnpsStrategy::Literal { predicate } => {
                Emission::Literal(predicate.clone(), TypedLiteral::string(value)?)
            }
            GnpsStrategy::OntologyLookup { target_class, .. } => {
                match self.dictionary.lookup(column, value) {
                    Some(entry) if entry.kind == DictionaryKind::Individual => Emission::Node(
                        NodeSpec::named_individual("gnps-attr", vec![target_class.clone()])?
                            .with_label(value)
                            .with_iri(&entry.iri),
                    ),
                    Some(entry) => Emission::Iri(entry.iri.clone()),
                    None => {
                        report.push(
                            Some(row_id),
                            column,
                            "missing-dictionary-entry",
                            format!("`{value}` not in lookup dictionary; skipped"),
                        );
                        return Ok(None);
                    }
                }
            }
        }))
    }
}
