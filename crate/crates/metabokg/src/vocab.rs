//! Namespace registry and ontology term references.
//!
//! Every IRI the pipeline emits is built from a prefix registered here, so the
//! registry doubles as the single place where the graph's vocabulary is
//! declared. The core table ships in `data/namespaces.tsv`; the built-in
//! registry adds a handful of auxiliary prefixes (rdf, rdfs, xsd, dct, NPC,
//! CHMO, OBI) that the emitters and queries need but that are not part of the
//! core table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The core prefix table, embedded so a default registry needs no files.
pub const CORE_NAMESPACES_TSV: &str = include_str!("../data/namespaces.tsv");

/// Auxiliary prefixes needed by emitters and query templates beyond the core
/// table: RDF/XSD plumbing, Dublin Core terms, NPClassifier designators, and
/// two extra OBO ontologies consulted during term alignment.
const AUX_NAMESPACES: &[(&str, &str)] = &[
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
    ("xsd", "http://www.w3.org/2001/XMLSchema#"),
    ("dct", "http://purl.org/dc/terms/"),
    ("NPC", "https://ns.inria.fr/metaboKG/npclassifier/"),
    ("CHMO", "http://purl.obolibrary.org/obo/CHMO_"),
    ("OBI", "http://purl.obolibrary.org/obo/OBI_"),
];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("unknown namespace prefix `{0}`")]
    UnknownPrefix(String),
    #[error("prefix `{prefix}` is already bound to `{existing}`")]
    DuplicatePrefix { prefix: String, existing: String },
    #[error("namespace `{namespace}` is already bound to prefix `{prefix}`")]
    DuplicateNamespace { namespace: String, prefix: String },
    #[error("namespace `{0}` must end with '/', '#', or '_'")]
    BadNamespace(String),
    #[error("invalid prefix `{0}`: prefixes are non-empty and contain no whitespace or ':'")]
    BadPrefix(String),
    #[error("malformed namespace table at line {line}: expected `prefix<TAB>namespace`")]
    MalformedTable { line: usize },
    #[error("`{0}` is not a compact term: expected `prefix:local`")]
    NotACurie(String),
    #[error("failed to read namespace table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Bidirectional prefix ↔ namespace table.
///
/// Prefixes and namespace URIs are both unique, so [`NamespaceRegistry::expand`]
/// and [`NamespaceRegistry::compact`] are inverses wherever compaction
/// succeeds.
#[derive(Debug, Clone, Default)]
pub struct NamespaceRegistry {
    by_prefix: BTreeMap<String, String>,
}

impl NamespaceRegistry {
    /// An empty registry. Mostly useful in tests.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The nine core prefixes from `data/namespaces.tsv`.
    pub fn core() -> Self {
        Self::from_tsv_str(CORE_NAMESPACES_TSV)
            .expect("embedded namespace table is well-formed")
    }

    /// Core prefixes plus the auxiliary ones; the registry used throughout the
    /// pipeline unless a caller supplies a custom table.
    pub fn builtin() -> Self {
        let mut reg = Self::core();
        for (prefix, ns) in AUX_NAMESPACES {
            reg.bind(prefix, ns)
                .expect("built-in auxiliary namespaces are consistent");
        }
        reg
    }

    /// Parse a `prefix<TAB>namespace` table. A leading `prefix\tnamespace`
    /// header row is allowed; blank lines and `#` comments are skipped.
    pub fn from_tsv_str(table: &str) -> Result<Self, VocabError> {
        let mut reg = Self::empty();
        for (idx, line) in table.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (prefix, ns) = line
                .split_once('\t')
                .ok_or(VocabError::MalformedTable { line: idx + 1 })?;
            if idx == 0 && prefix == "prefix" && ns == "namespace" {
                continue;
            }
            reg.bind(prefix.trim(), ns.trim())?;
        }
        Ok(reg)
    }

    /// Load a table from disk; see [`NamespaceRegistry::from_tsv_str`].
    pub fn from_tsv_path(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv_str(&text)
    }

    /// Bind `prefix` to `namespace`.
    ///
    /// Both sides must be fresh: rebinding either a prefix or a namespace is
    /// rejected so that compaction stays unambiguous. Namespaces must end with
    /// `/`, `#`, or `_` — anything else almost certainly means a truncated
    /// URI, and it would make expanded terms unsplittable.
    pub fn bind(&mut self, prefix: &str, namespace: &str) -> Result<(), VocabError> {
        if prefix.is_empty() || prefix.contains(|c: char| c.is_whitespace() || c == ':') {
            return Err(VocabError::BadPrefix(prefix.to_owned()));
        }
        if !namespace.ends_with(['/', '#', '_']) {
            return Err(VocabError::BadNamespace(namespace.to_owned()));
        }
        if let Some(existing) = self.by_prefix.get(prefix) {
            return Err(VocabError::DuplicatePrefix {
                prefix: prefix.to_owned(),
                existing: existing.clone(),
            });
        }
        if let Some((p, _)) = self.by_prefix.iter().find(|(_, ns)| *ns == namespace) {
            return Err(VocabError::DuplicateNamespace {
                namespace: namespace.to_owned(),
                prefix: p.clone(),
            });
        }
        self.by_prefix.insert(prefix.to_owned(), namespace.to_owned());
        Ok(())
    }

    /// The namespace bound to `prefix`, if any.
    pub fn namespace(&self, prefix: &str) -> Option<&str> {
        self.by_prefix.get(prefix).map(String::as_str)
    }

    /// Number of bound prefixes.
    pub fn len(&self) -> usize {
        self.by_prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_prefix.is_empty()
    }

    /// Iterate `(prefix, namespace)` pairs in prefix order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.by_prefix.iter().map(|(p, ns)| (p.as_str(), ns.as_str()))
    }

    /// Expand a compact `prefix:local` term into a full IRI.
    pub fn expand(&self, curie: &str) -> Result<String, VocabError> {
        let (prefix, local) = curie
            .split_once(':')
            .ok_or_else(|| VocabError::NotACurie(curie.to_owned()))?;
        self.expand_pair(prefix, local)
    }

    /// Expand an explicit `(prefix, local)` pair.
    pub fn expand_pair(&self, prefix: &str, local: &str) -> Result<String, VocabError> {
        let ns = self
            .namespace(prefix)
            .ok_or_else(|| VocabError::UnknownPrefix(prefix.to_owned()))?;
        Ok(format!("{ns}{local}"))
    }

    /// Expand an [`OntologyTermRef`] into a full IRI.
    pub fn expand_term(&self, term: &OntologyTermRef) -> Result<String, VocabError> {
        self.expand_pair(&term.prefix, &term.local_id)
    }

    /// Compact a full IRI back into `prefix:local`, choosing the longest
    /// matching namespace. Returns `None` when no namespace matches or when
    /// the IRI has no local part beyond the namespace.
    pub fn compact(&self, iri: &str) -> Option<String> {
        self.compact_pair(iri)
            .map(|(prefix, local)| format!("{prefix}:{local}"))
    }

    /// Like [`NamespaceRegistry::compact`] but returns the raw pair.
    pub fn compact_pair<'s, 'i>(&'s self, iri: &'i str) -> Option<(&'s str, &'i str)> {
        let mut best: Option<(&'s str, &'i str)> = None;
        for (prefix, ns) in &self.by_prefix {
            if let Some(local) = iri.strip_prefix(ns.as_str()) {
                if local.is_empty() {
                    continue;
                }
                let better = match best {
                    Some((_, b)) => iri.len() - local.len() > iri.len() - b.len(),
                    None => true,
                };
                if better {
                    best = Some((prefix.as_str(), local));
                }
            }
        }
        best
    }

    /// Compact an IRI into an [`OntologyTermRef`], when a namespace matches.
    pub fn compact_term(&self, iri: &str) -> Option<OntologyTermRef> {
        self.compact_pair(iri)
            .map(|(prefix, local)| OntologyTermRef::new(prefix, local))
    }

    /// `PREFIX p: <ns>` lines for every bound prefix, sorted by prefix, each
    /// newline-terminated. Prepended to query templates.
    pub fn sparql_prefix_block(&self) -> String {
        let mut out = String::new();
        for (prefix, ns) in &self.by_prefix {
            out.push_str(&format!("PREFIX {prefix}: <{ns}>\n"));
        }
        out
    }

    /// `@prefix p: <ns> .` lines for every bound prefix, sorted by prefix.
    pub fn turtle_prefix_block(&self) -> String {
        let mut out = String::new();
        for (prefix, ns) in &self.by_prefix {
            out.push_str(&format!("@prefix {prefix}: <{ns}> .\n"));
        }
        out
    }

    /// Render the registry back to the TSV table format, header included.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("prefix\tnamespace\n");
        for (prefix, ns) in &self.by_prefix {
            out.push_str(prefix);
            out.push('\t');
            out.push_str(ns);
            out.push('\n');
        }
        out
    }
}

/// A reference to an ontology term as `prefix` + `local_id`, optionally
/// carrying a human-readable label and the name of the ontology it was taken
/// from.
///
/// Equality and ordering consider only `prefix` and `local_id`; the label and
/// source are annotations, and two references to `MS:1003172` are the same
/// term whether or not one of them happens to remember its label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OntologyTermRef {
    pub prefix: String,
    pub local_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ontology: Option<String>,
}

impl OntologyTermRef {
    pub fn new(prefix: impl Into<String>, local_id: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
            local_id: local_id.into(),
            label: None,
            source_ontology: None,
        }
    }

    /// Parse `prefix:local`, splitting at the first colon.
    pub fn parse_curie(curie: &str) -> Result<Self, VocabError> {
        let (prefix, local) = curie
            .split_once(':')
            .ok_or_else(|| VocabError::NotACurie(curie.to_owned()))?;
        if prefix.is_empty() || local.is_empty() {
            return Err(VocabError::NotACurie(curie.to_owned()));
        }
        Ok(Self::new(prefix, local))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source_ontology = Some(source.into());
        self
    }

    /// The compact `prefix:local` form.
    pub fn curie(&self) -> String {
        format!("{}:{}", self.prefix, self.local_id)
    }

    /// The ontology this term came from; defaults to the prefix when the
    /// reference was built in code rather than loaded from an index.
    pub fn source(&self) -> &str {
        self.source_ontology.as_deref().unwrap_or(&self.prefix)
    }
}

impl PartialEq for OntologyTermRef {
    fn eq(&self, other: &Self) -> bool {
        self.prefix == other.prefix && self.local_id == other.local_id
    }
}

impl Eq for OntologyTermRef {}

impl PartialOrd for OntologyTermRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OntologyTermRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.prefix, &self.local_id).cmp(&(&other.prefix, &other.local_id))
    }
}

impl std::hash::Hash for OntologyTermRef {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.prefix.hash(state);
        self.local_id.hash(state);
    }
}

impl fmt::Display for OntologyTermRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.prefix, self.local_id)
    }
}

/// Constructors for the terms the emitters use, so call sites read as
/// vocabulary rather than string soup.
pub mod terms {
    use super::OntologyTermRef;

    pub fn rdf_type() -> OntologyTermRef {
        OntologyTermRef::new("rdf", "type")
    }
    pub fn rdfs_label() -> OntologyTermRef {
        OntologyTermRef::new("rdfs", "label")
    }
    pub fn prov_entity() -> OntologyTermRef {
        OntologyTermRef::new("prov", "Entity")
    }
    pub fn prov_activity() -> OntologyTermRef {
        OntologyTermRef::new("prov", "Activity")
    }
    pub fn prov_value() -> OntologyTermRef {
        OntologyTermRef::new("prov", "value")
    }
    pub fn prov_had_member() -> OntologyTermRef {
        OntologyTermRef::new("prov", "had_member")
    }
    pub fn prov_has_primary_source() -> OntologyTermRef {
        OntologyTermRef::new("prov", "hasPrimarySource")
    }
    pub fn prov_was_derived_from() -> OntologyTermRef {
        OntologyTermRef::new("prov", "wasDerivedFrom")
    }
    pub fn prov_was_generated_by() -> OntologyTermRef {
        OntologyTermRef::new("prov", "wasGeneratedBy")
    }
    pub fn prov_used() -> OntologyTermRef {
        OntologyTermRef::new("prov", "used")
    }
    pub fn dct_title() -> OntologyTermRef {
        OntologyTermRef::new("dct", "title")
    }
    pub fn dct_publisher() -> OntologyTermRef {
        OntologyTermRef::new("dct", "publisher")
    }
    pub fn dcat_dataset() -> OntologyTermRef {
        OntologyTermRef::new("dcat", "Dataset")
    }
    pub fn dcat_distribution() -> OntologyTermRef {
        OntologyTermRef::new("dcat", "Distribution")
    }
    pub fn dcat_download_url() -> OntologyTermRef {
        OntologyTermRef::new("dcat", "downloadURL")
    }
    pub fn dcat_access_url() -> OntologyTermRef {
        OntologyTermRef::new("dcat", "accessURL")
    }

    /// SIO "has attribute".
    pub fn sio_has_attribute() -> OntologyTermRef {
        OntologyTermRef::new("SIO", "000008")
    }
    /// SIO "is denoted by": links an entity to its identifier node.
    pub fn sio_identifier_link() -> OntologyTermRef {
        OntologyTermRef::new("SIO", "000675")
    }
    /// SIO "is described by": links a value node to its designator term.
    pub fn sio_designator_link() -> OntologyTermRef {
        OntologyTermRef::new("SIO", "000223")
    }
    /// SIO "sample".
    pub fn sio_sample() -> OntologyTermRef {
        OntologyTermRef::new("SIO", "001050")
    }

    pub fn ms(local: &str) -> OntologyTermRef {
        OntologyTermRef::new("MS", local)
    }
    pub fn mbs(local: &str) -> OntologyTermRef {
        OntologyTermRef::new("MBS", local)
    }
    pub fn chebi(local: &str) -> OntologyTermRef {
        OntologyTermRef::new("ChEBI", local)
    }
    pub fn taxon(local: &str) -> OntologyTermRef {
        OntologyTermRef::new("NCBITaxon", local)
    }
    pub fn npc(local: &str) -> OntologyTermRef {
        OntologyTermRef::new("NPC", local)
    }

    /// MS "spectrum identification result".
    pub fn ms_identification_result() -> OntologyTermRef {
        ms("1001405")
    }
    /// MS "number of matched peaks".
    pub fn ms_shared_peaks() -> OntologyTermRef {
        ms("1003306")
    }
    /// MS "library spectrum".
    pub fn ms_library_spectrum() -> OntologyTermRef {
        ms("1003172")
    }
    /// MS "InChIKey".
    pub fn ms_inchikey() -> OntologyTermRef {
        ms("1002894")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The core table must carry exactly these nine bindings.
    const CORE_ROWS: &[(&str, &str)] = &[
        ("prov", "http://www.w3.org/ns/prov#"),
        ("SIO", "http://semanticscience.org/resource/"),
        ("MS", "http://purl.obolibrary.org/obo/MS_"),
        ("ChEBI", "http://purl.obolibrary.org/obo/CHEBI_"),
        ("NCBITaxon", "http://purl.obolibrary.org/obo/NCBITaxon_"),
        ("ENVO", "http://purl.obolibrary.org/obo/ENVO_"),
        ("NCIT", "http://purl.obolibrary.org/obo/NCIT_"),
        ("dcat", "http://www.w3.org/ns/dcat#"),
        ("MBS", "https://ns.inria.fr/metaboKG/schema/"),
    ];

    #[test]
    fn core_table_is_exactly_the_published_prefix_set() {
        let reg = NamespaceRegistry::core();
        assert_eq!(reg.len(), CORE_ROWS.len());
        for (prefix, ns) in CORE_ROWS {
            assert_eq!(reg.namespace(prefix), Some(*ns), "prefix {prefix}");
        }
        // And the shipped file carries those rows byte-for-byte.
        let mut expected = String::from("prefix\tnamespace\n");
        for (prefix, ns) in CORE_ROWS {
            expected.push_str(&format!("{prefix}\t{ns}\n"));
        }
        assert_eq!(CORE_NAMESPACES_TSV, expected);
    }

    #[test]
    fn builtin_adds_auxiliary_prefixes() {
        let reg = NamespaceRegistry::builtin();
        for p in ["rdf", "rdfs", "xsd", "dct", "NPC", "CHMO", "OBI"] {
            assert!(reg.namespace(p).is_some(), "missing auxiliary prefix {p}");
        }
        assert_eq!(reg.len(), CORE_ROWS.len() + 7);
    }

    #[test]
    fn expand_and_compact_are_inverse() {
        let reg = NamespaceRegistry::builtin();
        let iri = reg.expand("ChEBI:17790").unwrap();
        assert_eq!(iri, "http://purl.obolibrary.org/obo/CHEBI_17790");
        assert_eq!(reg.compact(&iri).as_deref(), Some("ChEBI:17790"));

        let term = terms::ms_library_spectrum();
        let iri = reg.expand_term(&term).unwrap();
        assert_eq!(iri, "http://purl.obolibrary.org/obo/MS_1003172");
        assert_eq!(reg.compact_term(&iri), Some(OntologyTermRef::new("MS", "1003172")));
    }

    #[test]
    fn compact_prefers_longest_namespace() {
        let mut reg = NamespaceRegistry::empty();
        reg.bind("obo", "http://purl.obolibrary.org/obo/").unwrap();
        reg.bind("MS", "http://purl.obolibrary.org/obo/MS_").unwrap();
        assert_eq!(
            reg.compact("http://purl.obolibrary.org/obo/MS_1003172").as_deref(),
            Some("MS:1003172")
        );
        assert_eq!(
            reg.compact("http://purl.obolibrary.org/obo/CHEBI_1").as_deref(),
            Some("obo:CHEBI_1")
        );
    }

    #[test]
    fn compact_needs_a_local_part() {
        let reg = NamespaceRegistry::core();
        assert_eq!(reg.compact("http://www.w3.org/ns/prov#"), None);
        assert_eq!(reg.compact("https://example.org/nothing"), None);
    }

    #[test]
    fn bind_rejects_duplicates_and_bad_shapes() {
        let mut reg = NamespaceRegistry::core();
        assert!(matches!(
            reg.bind("prov", "https://elsewhere.example/#"),
            Err(VocabError::DuplicatePrefix { .. })
        ));
        assert!(matches!(
            reg.bind("prov2", "http://www.w3.org/ns/prov#"),
            Err(VocabError::DuplicateNamespace { .. })
        ));
        assert!(matches!(
            reg.bind("trunc", "http://example.org/no-terminator"),
            Err(VocabError::BadNamespace(_))
        ));
        assert!(matches!(reg.bind("", "http://x.example/#"), Err(VocabError::BadPrefix(_))));
        assert!(matches!(
            reg.bind("a b", "http://x.example/#"),
            Err(VocabError::BadPrefix(_))
        ));
    }

    #[test]
    fn expand_unknown_prefix_fails() {
        let reg = NamespaceRegistry::core();
        assert!(matches!(reg.expand("nope:1"), Err(VocabError::UnknownPrefix(_))));
        assert!(matches!(reg.expand("justlocal"), Err(VocabError::NotACurie(_))));
    }

    #[test]
    fn tsv_round_trip_preserves_bindings() {
        let reg = NamespaceRegistry::builtin();
        let rendered = reg.to_tsv();
        let back = NamespaceRegistry::from_tsv_str(&rendered).unwrap();
        assert_eq!(
            reg.iter().collect::<Vec<_>>(),
            back.iter().collect::<Vec<_>>()
        );
    }

    #[test]
    fn prefix_blocks_are_sorted_and_complete() {
        let reg = NamespaceRegistry::core();
        let block = reg.sparql_prefix_block();
        let lines: Vec<&str> = block.lines().collect();
        assert_eq!(lines.len(), 9);
        let mut sorted = lines.clone();
        sorted.sort_unstable();
        assert_eq!(lines, sorted);
        assert!(lines.contains(&"PREFIX MBS: <https://ns.inria.fr/metaboKG/schema/>"));
        assert!(reg
            .turtle_prefix_block()
            .contains("@prefix prov: <http://www.w3.org/ns/prov#> .\n"));
    }

    #[test]
    fn curie_parsing_splits_at_first_colon() {
        let t = OntologyTermRef::parse_curie("MS:10:03").unwrap();
        assert_eq!(t.prefix, "MS");
        assert_eq!(t.local_id, "10:03");
        assert!(OntologyTermRef::parse_curie("noprefix").is_err());
        assert!(OntologyTermRef::parse_curie(":x").is_err());
        assert!(OntologyTermRef::parse_curie("x:").is_err());
    }

    #[test]
    fn term_identity_ignores_annotations() {
        let bare = OntologyTermRef::new("ChEBI", "17790");
        let dressed = OntologyTermRef::new("ChEBI", "17790")
            .with_label("methanol")
            .with_source("CHEBI");
        assert_eq!(bare, dressed);
        assert_eq!(dressed.source(), "CHEBI");
        assert_eq!(bare.source(), "ChEBI");
        assert_eq!(dressed.curie(), "ChEBI:17790");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// compact ∘ expand is the identity for any registered prefix and
            /// reasonable local id.
            #[test]
            fn expand_then_compact_round_trips(
                which in 0usize..9,
                local in "[A-Za-z0-9_.:-]{1,24}",
            ) {
                let reg = NamespaceRegistry::core();
                let prefix = reg.iter().nth(which).unwrap().0.to_owned();
                let iri = reg.expand_pair(&prefix, &local).unwrap();
                // Skip the rare case where the local part makes the IRI fall
                // under a *longer* sibling namespace (e.g. obo/MS_ vs obo/).
                // The core table has no such nesting, so compaction must
                // recover the original pair exactly.
                let (p2, l2) = reg.compact_pair(&iri).unwrap();
                prop_assert_eq!(p2, prefix.as_str());
                prop_assert_eq!(l2, local.as_str());
            }
        }
    }
}
