//! String-to-ontology-term matching: a local term index with tiered lexical
//! ranking, an optional remote lookup client with an on-disk replay cache,
//! curation files, and top-k accuracy evaluation.
//!
//! Matching is deliberately lexical — no reasoning over term hierarchies.
//! Candidates are ranked by match tier first ([`MatchKind`], best to worst),
//! then score descending, then term IRI ascending, so identical inputs always
//! produce the identical ordered list and the top-k list is a prefix of every
//! larger top-k' list. Synonyms participate only in the [`MatchKind::SynonymExact`]
//! tier (compared case-insensitively); the fuzzy tiers compare against the
//! primary label alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::{canonical_identity, hash_identity};
use crate::vocab::{NamespaceRegistry, OntologyTermRef, VocabError};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("failed to read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed term-index row at line {line}: {reason}")]
    MalformedIndex { line: usize, reason: String },
    #[error("malformed curation row at line {line}: {reason}")]
    MalformedCuration { line: usize, reason: String },
    #[error("duplicate curation row for column `{column}`, value `{raw}`")]
    DuplicateCurationRow { column: String, raw: String },
    #[error("curation file has no rows")]
    EmptyCuration,
    #[error("no accuracy cut-offs requested")]
    NoKValues,
    #[error("network lookups are disabled and `{query}` is not in the cache")]
    NetworkUnavailable { query: String },
    #[error("remote lookup for `{query}` failed: {message}")]
    RemoteLookup { query: String, message: String },
    #[error("could not interpret remote response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// The four metadata columns whose mappings must come from a curation file:
/// automated sub-1.0 matches are suggestions there, never accepted silently.
pub const CURATION_REQUIRED_COLUMNS: [&str; 4] = [
    "InternalStandardsUsed",
    "IonizationSourceAndPolarity",
    "SampleCollectionMethod",
    "SampleExtractionMethod",
];

/// Whether a metadata column may only be mapped through curated rows.
pub fn requires_curation(column: &str) -> bool {
    CURATION_REQUIRED_COLUMNS.contains(&column)
}

/// How a candidate matched, best tier first. Ordering is the ranking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchKind {
    Exact,
    CaseInsensitive,
    SynonymExact,
    TokenOverlap,
    EditDistance,
}

impl fmt::Display for MatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatchKind::Exact => "exact",
            MatchKind::CaseInsensitive => "case-insensitive",
            MatchKind::SynonymExact => "synonym-exact",
            MatchKind::TokenOverlap => "token-overlap",
            MatchKind::EditDistance => "edit-distance",
        };
        f.write_str(s)
    }
}

/// One ranked suggestion from [`match_term`] or the remote client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub term: OntologyTermRef,
    /// In `[0, 1]`; exact-equality tiers score 1.0.
    pub score: f64,
    /// 1-based, contiguous within one result list.
    pub rank: u32,
    pub match_kind: MatchKind,
}

/// One term the matcher can suggest.
#[derive(Debug, Clone)]
pub struct TermEntry {
    pub term: OntologyTermRef,
    /// Expanded IRI, the final tie-breaker.
    pub iri: String,
    pub label: String,
    pub synonyms: Vec<String>,
    /// Ontology name from the index file (e.g. `CHEBI`), used for filtering.
    pub ontology: String,
}

/// An immutable, filtered set of candidate terms loaded from a TSV of
/// `iri <tab> label <tab> pipe-joined-synonyms <tab> ontology`.
#[derive(Debug, Clone)]
pub struct TermIndex {
    entries: Vec<TermEntry>,
    ontologies: BTreeSet<String>,
}

const TERM_INDEX_TSV: &str = include_str!("../data/term_index.tsv");

impl TermIndex {
    /// The ontologies admitted when no explicit filter is given.
    pub fn default_ontologies() -> BTreeSet<String> {
        ["CHEBI", "MS", "NCIT", "CHMO", "OBI"]
            .into_iter()
            .map(str::to_owned)
            .collect()
    }

    /// Load with the default ontology filter.
    pub fn from_tsv_str(text: &str, reg: &NamespaceRegistry) -> Result<Self, AlignError> {
        Self::from_tsv_str_filtered(text, reg, Self::default_ontologies())
    }

    /// Load keeping only rows whose ontology column is in `ontologies`.
    pub fn from_tsv_str_filtered(
        text: &str,
        reg: &NamespaceRegistry,
        ontologies: BTreeSet<String>,
    ) -> Result<Self, AlignError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if idx == 0 || line.trim().is_empty() {
                continue; // header
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(AlignError::MalformedIndex {
                    line: line_no,
                    reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let (iri, label, synonyms, ontology) =
                (fields[0].trim(), fields[1].trim(), fields[2], fields[3].trim());
            if iri.is_empty() || label.is_empty() || ontology.is_empty() {
                return Err(AlignError::MalformedIndex {
                    line: line_no,
                    reason: "iri, label, and ontology must be non-empty".to_owned(),
                });
            }
            if !ontologies.contains(ontology) {
                continue;
            }
            let (prefix, local) = reg.compact_pair(iri).ok_or_else(|| AlignError::MalformedIndex {
                line: line_no,
                reason: format!("IRI `{iri}` is not under any bound namespace"),
            })?;
            let term = OntologyTermRef::new(prefix, local)
                .with_label(label)
                .with_source(ontology);
            entries.push(TermEntry {
                term,
                iri: iri.to_owned(),
                label: label.to_owned(),
                synonyms: synonyms
                    .split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect(),
                ontology: ontology.to_owned(),
            });
        }
        Ok(Self { entries, ontologies })
    }

    pub fn from_tsv_path(path: impl AsRef<Path>, reg: &NamespaceRegistry) -> Result<Self, AlignError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AlignError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_tsv_str(&text, reg)
    }

    /// The index shipped with the crate: common LC-MS solvents, additives,
    /// ionization modes, and instrument terms.
    pub fn builtin(reg: &NamespaceRegistry) -> Result<Self, AlignError> {
        Self::from_tsv_str(TERM_INDEX_TSV, reg)
    }

    pub fn entries(&self) -> &[TermEntry] {
        &self.entries
    }

    pub fn ontologies(&self) -> &BTreeSet<String> {
        &self.ontologies
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Levenshtein distance, two-row dynamic program over scalar values.
fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(ca != cb);
            cur[j + 1] = subst.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn lower_tokens(s: &str) -> BTreeSet<String> {
    s.to_lowercase().split_whitespace().map(str::to_owned).collect()
}

/// Classify how `raw` relates to one entry; `None` when completely unrelated
/// (zero edit similarity and no shared tokens).
fn classify(raw: &str, raw_lower: &str, raw_tokens: &BTreeSet<String>, entry: &TermEntry) -> Option<(MatchKind, f64)> {
    if raw == entry.label {
        return Some((MatchKind::Exact, 1.0));
    }
    let label_lower = entry.label.to_lowercase();
    if *raw_lower == label_lower {
        return Some((MatchKind::CaseInsensitive, 1.0));
    }
    if entry.synonyms.iter().any(|s| s.to_lowercase() == *raw_lower) {
        return Some((MatchKind::SynonymExact, 1.0));
    }
    let label_tokens = lower_tokens(&entry.label);
    let intersection = raw_tokens.intersection(&label_tokens).count();
    if intersection > 0 {
        let union = raw_tokens.union(&label_tokens).count();
        return Some((MatchKind::TokenOverlap, intersection as f64 / union as f64));
    }
    let a: Vec<char> = raw_lower.chars().collect();
    let b: Vec<char> = label_lower.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return None;
    }
    let score = 1.0 - levenshtein(&a, &b) as f64 / longest as f64;
    (score > 0.0).then_some((MatchKind::EditDistance, score))
}

/// Rank the index against one raw value. Pure and deterministic: identical
/// `(raw, index, k)` always yields the identical ordered list, and the result
/// for a smaller `k` is a prefix of the result for a larger one.
pub fn match_term(raw: &str, index: &TermIndex, k: usize) -> Vec<MatchCandidate> {
    if k == 0 {
        return Vec::new();
    }
    let raw = raw.trim();
    let raw_lower = raw.to_lowercase();
    let raw_tokens = lower_tokens(raw);
    let mut scored: Vec<(&TermEntry, MatchKind, f64)> = index
        .entries
        .iter()
        .filter_map(|e| classify(raw, &raw_lower, &raw_tokens, e).map(|(kind, score)| (e, kind, score)))
        .collect();
    scored.sort_by(|(ea, ka, sa), (eb, kb, sb)| {
        ka.cmp(kb)
            .then_with(|| sb.total_cmp(sa))
            .then_with(|| ea.iri.cmp(&eb.iri))
    });
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (entry, match_kind, score))| MatchCandidate {
            term: entry.term.clone(),
            score,
            rank: (i + 1) as u32,
            match_kind,
        })
        .collect()
}

/// A curator's verdict on one raw value: a term, or an explicit rejection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CurationChoice {
    Term(OntologyTermRef),
    Reject,
}

#[derive(Debug, Clone)]
pub struct CurationRow {
    pub column: String,
    pub raw: String,
    pub chosen: CurationChoice,
    pub note: Option<String>,
}

/// Hand-curated `(column, raw value) → term` decisions, loaded from a TSV of
/// `column <tab> raw_value <tab> chosen <tab> note` where `chosen` is a CURIE
/// or the literal `REJECT`. `(column, raw)` pairs are unique.
#[derive(Debug, Clone, Default)]
pub struct CurationFile {
    rows: Vec<CurationRow>,
}

impl CurationFile {
    pub fn from_tsv_str(text: &str) -> Result<Self, AlignError> {
        let mut rows = Vec::new();
        let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if idx == 0 || line.trim().is_empty() {
                continue; // header
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(AlignError::MalformedCuration {
                    line: line_no,
                    reason: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let column = fields[0].trim().to_owned();
            let raw = fields[1].trim().to_owned();
            let chosen_field = fields[2].trim();
            if column.is_empty() || raw.is_empty() || chosen_field.is_empty() {
                return Err(AlignError::MalformedCuration {
                    line: line_no,
                    reason: "column, raw value, and chosen term must be non-empty".to_owned(),
                });
            }
            if !seen.insert((column.clone(), raw.clone())) {
                return Err(AlignError::DuplicateCurationRow { column, raw });
            }
            let chosen = if chosen_field == "REJECT" {
                CurationChoice::Reject
            } else {
                let term = OntologyTermRef::parse_curie(chosen_field).map_err(|e| {
                    AlignError::MalformedCuration {
                        line: line_no,
                        reason: format!("chosen term must be a CURIE or REJECT: {e}"),
                    }
                })?;
                CurationChoice::Term(term)
            };
            let note = fields
                .get(3)
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(str::to_owned);
            rows.push(CurationRow { column, raw, chosen, note });
        }
        Ok(Self { rows })
    }

    pub fn from_tsv_path(path: impl AsRef<Path>) -> Result<Self, AlignError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AlignError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_tsv_str(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("column\traw_value\tchosen\tnote\n");
        for row in &self.rows {
            let chosen = match &row.chosen {
                CurationChoice::Term(t) => t.curie(),
                CurationChoice::Reject => "REJECT".to_owned(),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                row.column,
                row.raw,
                chosen,
                row.note.as_deref().unwrap_or("")
            ));
        }
        out
    }

    pub fn rows(&self) -> &[CurationRow] {
        &self.rows
    }

    /// The curated term for one `(column, raw)` pair, if any.
    pub fn lookup(&self, column: &str, raw: &str) -> Option<&CurationChoice> {
        self.rows
            .iter()
            .find(|r| r.column == column && r.raw == raw)
            .map(|r| &r.chosen)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Top-k accuracy for one column at each requested k.
#[derive(Debug, Clone, Serialize)]
pub struct ColumnAccuracy {
    /// Curated rows counted (rejections excluded).
    pub denominator: usize,
    /// Aligned with the report's `k_values`.
    pub accuracy: Vec<f64>,
}

/// Matching accuracy against a curation file.
///
/// Macro accuracy is the unweighted mean of per-column accuracies; micro
/// accuracy pools the unique `(raw value, chosen term)` pairs from all
/// columns and scores them once each. Rows rejected by the curator are
/// excluded from every denominator.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyReport {
    pub k_values: Vec<usize>,
    pub columns: BTreeMap<String, ColumnAccuracy>,
    pub macro_accuracy: Vec<f64>,
    pub micro_accuracy: Vec<f64>,
    pub micro_denominator: usize,
}

impl AccuracyReport {
    /// `scope \t denominator \t acc@k…` rows: columns sorted, then macro and
    /// micro summary rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scope\tdenominator");
        for k in &self.k_values {
            out.push_str(&format!("\tacc@{k}"));
        }
        out.push('\n');
        let fmt_accs = |accs: &[f64]| -> String {
            accs.iter().map(|a| format!("\t{a:.6}")).collect::<String>()
        };
        for (column, acc) in &self.columns {
            out.push_str(&format!("{column}\t{}{}\n", acc.denominator, fmt_accs(&acc.accuracy)));
        }
        out.push_str(&format!("macro\t{}{}\n", self.columns.len(), fmt_accs(&self.macro_accuracy)));
        out.push_str(&format!("micro\t{}{}\n", self.micro_denominator, fmt_accs(&self.micro_accuracy)));
        out
    }
}

/// Score [`match_term`] against curated ground truth at each k.
pub fn evaluate_matching(
    curation: &CurationFile,
    index: &TermIndex,
    k_values: &[usize],
) -> Result<AccuracyReport, AlignError> {
    if curation.is_empty() {
        return Err(AlignError::EmptyCuration);
    }
    let mut k_values: Vec<usize> = k_values.iter().copied().filter(|&k| k > 0).collect();
    k_values.sort_unstable();
    k_values.dedup();
    if k_values.is_empty() {
        return Err(AlignError::NoKValues);
    }
    let max_k = *k_values.last().expect("non-empty");

    // Score each distinct raw value once; matching ignores the column.
    let mut cache: HashMap<&str, Vec<MatchCandidate>> = HashMap::new();
    let mut columns: BTreeMap<&str, Vec<(&str, &OntologyTermRef)>> = BTreeMap::new();
    let mut pooled: BTreeSet<(&str, &OntologyTermRef)> = BTreeSet::new();
    for row in curation.rows() {
        let CurationChoice::Term(chosen) = &row.chosen else {
            continue;
        };
        cache
            .entry(row.raw.as_str())
            .or_insert_with(|| match_term(&row.raw, index, max_k));
        columns.entry(&row.column).or_default().push((&row.raw, chosen));
        pooled.insert((&row.raw, chosen));
    }

    let hit = |raw: &str, chosen: &OntologyTermRef, k: usize| -> bool {
        cache[raw].iter().take(k).any(|c| &c.term == chosen)
    };
    let accuracy_of = |rows: &[(&str, &OntologyTermRef)], k: usize| -> f64 {
        let hits = rows.iter().filter(|(raw, chosen)| hit(raw, chosen, k)).count();
        hits as f64 / rows.len() as f64
    };

    let mut report_columns = BTreeMap::new();
    for (column, rows) in &columns {
        let accuracy = k_values.iter().map(|&k| accuracy_of(rows, k)).collect();
        report_columns.insert(
            column.to_string(),
            ColumnAccuracy {
                denominator: rows.len(),
                accuracy,
            },
        );
    }
    let macro_accuracy: Vec<f64> = (0..k_values.len())
        .map(|i| {
            let sum: f64 = report_columns.values().map(|c| c.accuracy[i]).sum();
            sum / report_columns.len() as f64
        })
        .collect();
    let pooled_rows: Vec<(&str, &OntologyTermRef)> = pooled.into_iter().collect();
    let micro_accuracy: Vec<f64> = k_values.iter().map(|&k| accuracy_of(&pooled_rows, k)).collect();

    Ok(AccuracyReport {
        k_values,
        columns: report_columns,
        macro_accuracy,
        micro_accuracy,
        micro_denominator: pooled_rows.len(),
    })
}

/// Where a [`RemoteTermLookup`] answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupSource {
    /// The remote service or its on-disk replay cache.
    Remote,
    /// Local [`match_term`] after the network was unavailable.
    LocalFallback,
}

/// A remote lookup outcome: candidates plus where they came from.
#[derive(Debug, Clone)]
pub struct Lookup {
    pub candidates: Vec<MatchCandidate>,
    pub source: LookupSource,
}

/// Client for an OLS-style ontology search endpoint
/// (`GET {endpoint}/search?q=…&ontology=…&rows=…`).
///
/// Every response body is cached on disk keyed by the canonical
/// `(query, ontologies, rows)` identity, so a run that has seen a query
/// before — or ships recorded fixtures — never touches the network. With
/// `offline` set, cache misses fail with [`AlignError::NetworkUnavailable`]
/// instead of connecting.
#[derive(Debug)]
pub struct RemoteTermLookup {
    endpoint: String,
    cache_dir: PathBuf,
    offline: bool,
}

impl RemoteTermLookup {
    pub fn new(
        endpoint: impl Into<String>,
        cache_dir: impl Into<PathBuf>,
        offline: bool,
    ) -> Result<Self, AlignError> {
        let cache_dir = cache_dir.into();
        fs::create_dir_all(&cache_dir).map_err(|source| AlignError::Io {
            path: cache_dir.clone(),
            source,
        })?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            cache_dir,
            offline,
        })
    }

    /// The cache file this query reads and writes. Exposed so fixtures can be
    /// recorded ahead of time.
    pub fn cache_path(&self, raw: &str, ontologies: &BTreeSet<String>, k: usize) -> PathBuf {
        let mut attrs = BTreeMap::new();
        attrs.insert("q".to_owned(), raw.to_owned());
        attrs.insert(
            "ontologies".to_owned(),
            ontologies.iter().cloned().collect::<Vec<_>>().join(","),
        );
        attrs.insert("rows".to_owned(), k.to_string());
        let key = canonical_identity("ols-search", &attrs);
        self.cache_dir.join(format!("{}.json", hash_identity(&key)))
    }

    /// Search the remote service (or its cache) and convert the response into
    /// ranked candidates. Rank follows response order; each candidate's score
    /// and kind come from comparing its label against `raw` with the local
    /// scoring rules (a label unrelated to the query scores 0.0 but keeps its
    /// response-order rank).
    pub fn fetch_remote_candidates(
        &self,
        raw: &str,
        ontologies: &BTreeSet<String>,
        k: usize,
        reg: &NamespaceRegistry,
    ) -> Result<Vec<MatchCandidate>, AlignError> {
        let cache_path = self.cache_path(raw, ontologies, k);
        let body = if cache_path.exists() {
            fs::read_to_string(&cache_path).map_err(|source| AlignError::Io {
                path: cache_path.clone(),
                source,
            })?
        } else {
            if self.offline {
                return Err(AlignError::NetworkUnavailable { query: raw.to_owned() });
            }
            let body = self.request(raw, ontologies, k)?;
            // Write-then-rename keeps concurrent readers off half-written files.
            let tmp = cache_path.with_extension("json.tmp");
            fs::write(&tmp, &body)
                .and_then(|()| fs::rename(&tmp, &cache_path))
                .map_err(|source| AlignError::Io {
                    path: cache_path.clone(),
                    source,
                })?;
            body
        };
        parse_ols_response(&body, raw, k, reg)
    }

    fn request(&self, raw: &str, ontologies: &BTreeSet<String>, k: usize) -> Result<String, AlignError> {
        let ontology_param = ontologies
            .iter()
            .map(|o| o.to_lowercase())
            .collect::<Vec<_>>()
            .join(",");
        let url = format!("{}/search", self.endpoint);
        let send = || -> reqwest::Result<String> {
            reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(30))
                .build()?
                .get(&url)
                .query(&[
                    ("q", raw),
                    ("ontology", &ontology_param),
                    ("rows", &k.to_string()),
                    ("format", "json"),
                ])
                .send()?
                .error_for_status()?
                .text()
        };
        send().map_err(|e| AlignError::RemoteLookup {
            query: raw.to_owned(),
            message: e.to_string(),
        })
    }

    /// Remote lookup, falling back to the local index when the network is
    /// unavailable. The caller can tell which path answered from the source
    /// and surface a warning for fallbacks.
    pub fn lookup_with_fallback(
        &self,
        raw: &str,
        ontologies: &BTreeSet<String>,
        k: usize,
        index: &TermIndex,
        reg: &NamespaceRegistry,
    ) -> Result<Lookup, AlignError> {
        match self.fetch_remote_candidates(raw, ontologies, k, reg) {
            Ok(candidates) => Ok(Lookup {
                candidates,
                source: LookupSource::Remote,
            }),
            Err(AlignError::NetworkUnavailable { .. } | AlignError::RemoteLookup { .. }) => Ok(Lookup {
                candidates: match_term(raw, index, k),
                source: LookupSource::LocalFallback,
            }),
            Err(e) => Err(e),
        }
    }
}

/// Interpret an OLS-style search response (`response.docs[]` with `iri`,
/// `label`, optional `obo_id` and `ontology_name`).
fn parse_ols_response(
    body: &str,
    raw: &str,
    k: usize,
    reg: &NamespaceRegistry,
) -> Result<Vec<MatchCandidate>, AlignError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| AlignError::BadResponse(e.to_string()))?;
    let docs = value
        .get("response")
        .and_then(|r| r.get("docs"))
        .and_then(|d| d.as_array())
        .ok_or_else(|| AlignError::BadResponse("missing response.docs array".to_owned()))?;

    let raw_trim = raw.trim();
    let raw_lower = raw_trim.to_lowercase();
    let raw_tokens = lower_tokens(raw_trim);
    let mut candidates = Vec::new();
    for (i, doc) in docs.iter().take(k).enumerate() {
        let label = doc
            .get("label")
            .and_then(|l| l.as_str())
            .ok_or_else(|| AlignError::BadResponse(format!("doc {i} has no label")))?;
        let term = match doc.get("obo_id").and_then(|o| o.as_str()) {
            Some(curie) => OntologyTermRef::parse_curie(curie)?,
            None => {
                let iri = doc
                    .get("iri")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| AlignError::BadResponse(format!("doc {i} has neither obo_id nor iri")))?;
                let (prefix, local) = reg.compact_pair(iri).ok_or_else(|| {
                    AlignError::BadResponse(format!("doc {i} IRI `{iri}` is not under any bound namespace"))
                })?;
                OntologyTermRef::new(prefix, local)
            }
        };
        let mut term = term.with_label(label);
        if let Some(ontology) = doc.get("ontology_name").and_then(|o| o.as_str()) {
            term = term.with_source(ontology.to_uppercase());
        }
        let probe = TermEntry {
            term: term.clone(),
            iri: String::new(),
            label: label.to_owned(),
            synonyms: Vec::new(),
            ontology: String::new(),
        };
        let (match_kind, score) = classify(raw_trim, &raw_lower, &raw_tokens, &probe)
            .unwrap_or((MatchKind::EditDistance, 0.0));
        candidates.push(MatchCandidate {
            term,
            score,
            rank: (i + 1) as u32,
            match_kind,
        });
    }
    Ok(candidates)
}
