//! From node specs to triples: deterministic IRIs, content merging, and
//! canonical serializations.
//!
//! [`emit_into`] walks a [`NodeSpec`] tree, resolves every node to an IRI, and
//! inserts triples into a [`TripleDoc`] — a named graph held as an ordered
//! set, so duplicate assertions collapse and serialization order never
//! depends on insertion order. Value nodes and labeled individuals are merged
//! through a [`DedupRegistry`]; provenance entities and activities mint their
//! IRIs from their identity attributes and are exempt from content merging.
//!
//! Serialization is canonical: the N-Triples form is the byte-sorted line
//! set, so two runs over the same inputs produce byte-identical files. The
//! round-trip validator re-parses serialized output with an independent
//! parser (oxigraph's) and checks set equality against what was emitted.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use oxigraph::io::{RdfFormat, RdfParser};
use serde::Serialize;
use thiserror::Error;

use crate::ident::{hash_identity, IdentError, UriMinter};
use crate::node::{EdgeTarget, ModelError, NodeKind, NodeSpec, TypedLiteral, XSD_STRING};
use crate::vocab::{terms, NamespaceRegistry, VocabError};

#[derive(Debug, Error)]
pub enum EmitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Ident(#[from] IdentError),
    #[error("provenance {kind} spec `{concept}` has no identity attributes and no explicit IRI")]
    MissingIdentity { kind: NodeKind, concept: String },
    #[error("named individual spec `{concept}` has neither a label nor an explicit IRI")]
    UnnamedIndividual { concept: String },
    #[error("failed to parse N-Triples at line {line}: {message}")]
    ParseNtriples { line: usize, message: String },
    #[error("blank node `{0}` found; this graph never contains blank nodes")]
    UnexpectedBlankNode(String),
    #[error("language-tagged literal `{0}` found; literals here always carry plain datatypes")]
    UnexpectedLanguageTag(String),
    #[error("round-trip mismatch: {missing} emitted triples lost, {extra} foreign triples gained")]
    RoundTripMismatch { missing: usize, extra: usize },
}

/// An interned IRI. Cheap to clone; ordered and compared by string value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Iri(Arc<str>);

impl Iri {
    pub fn new(iri: impl Into<Arc<str>>) -> Self {
        Self(iri.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Iri {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

impl From<String> for Iri {
    fn from(s: String) -> Self {
        Self::new(s)
    }
}

/// A triple object: an IRI or a typed literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Object {
    Iri(Iri),
    Literal { lexical: Arc<str>, datatype: Iri },
}

impl Object {
    pub fn literal(value: &TypedLiteral) -> Self {
        Object::Literal {
            lexical: Arc::from(value.lexical()),
            datatype: Iri::new(value.datatype()),
        }
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Object::Iri(iri) => Some(iri),
            Object::Literal { .. } => None,
        }
    }

    pub fn as_lexical(&self) -> Option<&str> {
        match self {
            Object::Iri(_) => None,
            Object::Literal { lexical, .. } => Some(lexical),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: Iri,
    pub predicate: Iri,
    pub object: Object,
}

impl Triple {
    pub fn new(subject: impl Into<Iri>, predicate: impl Into<Iri>, object: Object) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
        }
    }
}

/// Emission counters, written next to each graph file as a sidecar.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DocStats {
    /// Node-spec trees walked into this document.
    pub specs_walked: u64,
    /// Distinct subjects first seen during emission, by node kind.
    pub nodes_by_kind: BTreeMap<String, u64>,
    /// Value-node occurrences that landed on an already-minted node.
    pub value_merges: u64,
    /// Labeled-individual occurrences that landed on an already-minted node.
    pub individual_merges: u64,
}

/// One named graph: an ordered, duplicate-free triple set plus counters.
#[derive(Debug, Clone)]
pub struct TripleDoc {
    pub graph_name: Iri,
    triples: BTreeSet<Triple>,
    pub stats: DocStats,
}

impl TripleDoc {
    pub fn new(graph_name: impl Into<Iri>) -> Self {
        Self {
            graph_name: graph_name.into(),
            triples: BTreeSet::new(),
            stats: DocStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn insert(&mut self, triple: Triple) -> bool {
        self.triples.insert(triple)
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triples.contains(triple)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    /// Union another document into this one (stats are added; the graph name
    /// of `self` wins).
    pub fn merge(&mut self, other: &TripleDoc) {
        for t in &other.triples {
            self.triples.insert(t.clone());
        }
        self.stats.specs_walked += other.stats.specs_walked;
        self.stats.value_merges += other.stats.value_merges;
        self.stats.individual_merges += other.stats.individual_merges;
        for (kind, n) in &other.stats.nodes_by_kind {
            *self.stats.nodes_by_kind.entry(kind.clone()).or_default() += n;
        }
    }

    /// Distinct subjects carrying `rdf:type <class>`.
    pub fn subjects_with_type(&self, class: &Iri) -> BTreeSet<&Iri> {
        let rdf_type = Iri::new(RDF_TYPE);
        self.triples
            .iter()
            .filter(|t| t.predicate == rdf_type && t.object.as_iri() == Some(class))
            .map(|t| &t.subject)
            .collect()
    }

    /// Objects of `(subject, predicate, _)` triples.
    pub fn objects_of<'a>(&'a self, subject: &'a Iri, predicate: &'a Iri) -> impl Iterator<Item = &'a Object> {
        self.triples
            .iter()
            .filter(move |t| &t.subject == subject && &t.predicate == predicate)
            .map(|t| &t.object)
    }

    /// All triples with the given predicate.
    pub fn with_predicate<'a>(&'a self, predicate: &'a Iri) -> impl Iterator<Item = &'a Triple> {
        self.triples.iter().filter(move |t| &t.predicate == predicate)
    }

    /// Count triples per predicate, for reports.
    pub fn predicate_counts(&self) -> BTreeMap<Iri, u64> {
        let mut counts = BTreeMap::new();
        for t in &self.triples {
            *counts.entry(t.predicate.clone()).or_default() += 1;
        }
        counts
    }
}

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

/// Mints and remembers the IRIs of content-merged nodes.
///
/// The maps are caches, not sources of truth: an IRI is a pure hash of the
/// node's merge key, so two registries fed the same content agree without
/// coordination. Holding the map still matters for the counters — merges are
/// what the dedup reports count — and to avoid rehashing hot values.
#[derive(Debug)]
pub struct DedupRegistry {
    minter: UriMinter,
    value_nodes: HashMap<String, Iri>,
    individuals: HashMap<String, Iri>,
}

impl DedupRegistry {
    pub fn new(minter: UriMinter) -> Self {
        Self {
            minter,
            value_nodes: HashMap::new(),
            individuals: HashMap::new(),
        }
    }

    pub fn minter(&self) -> &UriMinter {
        &self.minter
    }

    /// Distinct value nodes minted so far.
    pub fn value_node_count(&self) -> usize {
        self.value_nodes.len()
    }

    /// Distinct labeled individuals minted so far.
    pub fn individual_count(&self) -> usize {
        self.individuals.len()
    }

    /// Resolve a merge key to its node IRI. `concept` names the URI path
    /// segment ("value" or "individual"); the key is the canonical identity
    /// string, so the IRI is `<global>/<concept>/<hash(key)>`.
    fn resolve(&mut self, concept: &str, key: &str) -> (Iri, bool) {
        let map = match concept {
            "value" => &mut self.value_nodes,
            _ => &mut self.individuals,
        };
        if let Some(iri) = map.get(key) {
            return (iri.clone(), true);
        }
        let iri = Iri::new(format!(
            "{}{}/{}",
            self.minter.global_prefix(),
            concept,
            hash_identity(key)
        ));
        map.insert(key.to_owned(), iri.clone());
        (iri, false)
    }
}

/// Walk one spec tree into `doc`, returning the IRI the root resolved to.
pub fn emit_into(
    doc: &mut TripleDoc,
    spec: &NodeSpec,
    reg: &NamespaceRegistry,
    dedup: &mut DedupRegistry,
) -> Result<Iri, EmitError> {
    doc.stats.specs_walked += 1;
    emit_node(doc, spec, reg, dedup)
}

/// Emit a batch of spec trees into a fresh document.
pub fn emit(
    specs: &[NodeSpec],
    reg: &NamespaceRegistry,
    dedup: &mut DedupRegistry,
    graph_name: impl Into<Iri>,
) -> Result<TripleDoc, EmitError> {
    let mut doc = TripleDoc::new(graph_name);
    for spec in specs {
        emit_into(&mut doc, spec, reg, dedup)?;
    }
    Ok(doc)
}

fn emit_node(
    doc: &mut TripleDoc,
    spec: &NodeSpec,
    reg: &NamespaceRegistry,
    dedup: &mut DedupRegistry,
) -> Result<Iri, EmitError> {
    let (subject, merged) = resolve_iri(spec, reg, dedup)?;
    if merged {
        match spec.kind() {
            NodeKind::ValueNode => doc.stats.value_merges += 1,
            NodeKind::NamedIndividual => doc.stats.individual_merges += 1,
            _ => {}
        }
    }

    let rdf_type = Iri::new(RDF_TYPE);
    let mut first_seen = false;
    for term in spec.types() {
        let class = Iri::new(reg.expand_term(term)?);
        first_seen |= doc.insert(Triple::new(subject.clone(), rdf_type.clone(), Object::Iri(class)));
    }
    if first_seen {
        *doc.stats
            .nodes_by_kind
            .entry(spec.kind().to_string())
            .or_default() += 1;
    }

    if let Some(label) = spec.label() {
        let pred = Iri::new(reg.expand_term(&terms::rdfs_label())?);
        doc.insert(Triple::new(
            subject.clone(),
            pred,
            Object::Literal {
                lexical: Arc::from(label),
                datatype: Iri::new(XSD_STRING),
            },
        ));
    }

    if let Some(value) = spec.value() {
        let pred = Iri::new(reg.expand_term(&terms::prov_value())?);
        doc.insert(Triple::new(subject.clone(), pred, Object::literal(value)));
    }

    for edge in spec.edges() {
        let pred = Iri::new(reg.expand_term(&edge.predicate)?);
        let object = match &edge.target {
            EdgeTarget::Iri(iri) => Object::Iri(Iri::new(iri.as_str())),
            EdgeTarget::Literal(lit) => Object::literal(lit),
            EdgeTarget::Node(child) => Object::Iri(emit_node(doc, child, reg, dedup)?),
        };
        doc.insert(Triple::new(subject.clone(), pred, object));
    }

    Ok(subject)
}

/// Resolve a spec to its subject IRI. The second value reports whether a
/// content-merged node landed on an already-minted IRI.
fn resolve_iri(
    spec: &NodeSpec,
    reg: &NamespaceRegistry,
    dedup: &mut DedupRegistry,
) -> Result<(Iri, bool), EmitError> {
    if let Some(iri) = spec.explicit_iri() {
        return Ok((Iri::new(iri), false));
    }
    match spec.kind() {
        NodeKind::ValueNode => {
            let key = spec
                .merge_key(reg)?
                .expect("value nodes always have a merge key");
            let (iri, merged) = dedup.resolve("value", &key);
            Ok((iri, merged))
        }
        NodeKind::NamedIndividual => {
            let key = spec.merge_key(reg)?.ok_or_else(|| EmitError::UnnamedIndividual {
                concept: spec.concept().to_owned(),
            })?;
            let (iri, merged) = dedup.resolve("individual", &key);
            Ok((iri, merged))
        }
        NodeKind::ProvEntity | NodeKind::ProvActivity => {
            if spec.identity().is_empty() {
                return Err(EmitError::MissingIdentity {
                    kind: spec.kind(),
                    concept: spec.concept().to_owned(),
                });
            }
            let uri = dedup.minter.mint(spec.concept(), spec.identity())?;
            Ok((Iri::new(uri.iri()), false))
        }
    }
}

/// A downloadable or locally-held file attached to a graph entity.
#[derive(Debug, Clone)]
pub struct DistributionSpec {
    pub title: String,
    /// Where the bytes live: an absolute URL, or a bare path for local files.
    pub locator: String,
    /// Public repository the resource belongs to, when known.
    pub repository: Option<String>,
}

/// Type `entity` as a `dcat:Distribution` with a title and a location.
/// Remote locators (anything with a URL scheme) become `dcat:downloadURL`
/// for http(s) or `dcat:accessURL` otherwise; bare paths become `file:///`
/// access URLs.
pub fn attach_distribution(
    doc: &mut TripleDoc,
    entity: &Iri,
    dist: &DistributionSpec,
    reg: &NamespaceRegistry,
) -> Result<(), EmitError> {
    let rdf_type = Iri::new(RDF_TYPE);
    let dcat_distribution = Iri::new(reg.expand_term(&terms::dcat_distribution())?);
    doc.insert(Triple::new(entity.clone(), rdf_type, Object::Iri(dcat_distribution)));

    let title_pred = Iri::new(reg.expand_term(&terms::dct_title())?);
    doc.insert(Triple::new(
        entity.clone(),
        title_pred,
        Object::Literal {
            lexical: Arc::from(dist.title.as_str()),
            datatype: Iri::new(XSD_STRING),
        },
    ));

    let (pred_term, url) = locator_to_url(&dist.locator);
    let pred = Iri::new(reg.expand_term(&pred_term)?);
    doc.insert(Triple::new(entity.clone(), pred, Object::Iri(Iri::new(url))));

    if let Some(repository) = &dist.repository {
        let pred = Iri::new(reg.expand_term(&terms::dct_publisher())?);
        doc.insert(Triple::new(
            entity.clone(),
            pred,
            Object::Literal {
                lexical: Arc::from(repository.as_str()),
                datatype: Iri::new(XSD_STRING),
            },
        ));
    }
    Ok(())
}

/// Turn a locator into the DCAT predicate and URL that describe it: http(s)
/// URLs become `dcat:downloadURL`, other schemes stay `dcat:accessURL`, and
/// bare paths become percent-encoded `file:///` access URLs.
pub fn locator_to_url(locator: &str) -> (crate::vocab::OntologyTermRef, String) {
    if has_url_scheme(locator) {
        if locator.starts_with("http://") || locator.starts_with("https://") {
            (terms::dcat_download_url(), encode_iri(locator))
        } else {
            (terms::dcat_access_url(), encode_iri(locator))
        }
    } else {
        let path = locator.trim_start_matches('/');
        (terms::dcat_access_url(), format!("file:///{}", encode_iri(path)))
    }
}

fn has_url_scheme(s: &str) -> bool {
    let Some((scheme, _)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
}

/// Percent-encode the characters that would make a locator an invalid IRI,
/// leaving URL structure (`/:?#&=` …) alone.
fn encode_iri(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        let keep = b.is_ascii_alphanumeric()
            || matches!(
                b,
                b'-' | b'.' | b'_' | b'~' | b'/' | b':' | b'?' | b'#' | b'[' | b']' | b'@'
                    | b'!' | b'$' | b'&' | b'\'' | b'(' | b')' | b'*' | b'+' | b',' | b';'
                    | b'=' | b'%'
            );
        if keep {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn render_object_nt(object: &Object) -> String {
    match object {
        Object::Iri(iri) => format!("<{iri}>"),
        Object::Literal { lexical, datatype } => {
            if datatype.as_str() == XSD_STRING {
                format!("\"{}\"", escape_literal(lexical))
            } else {
                format!("\"{}\"^^<{}>", escape_literal(lexical), datatype)
            }
        }
    }
}

/// Canonical N-Triples: one line per triple, lines byte-sorted, trailing
/// newline. Two documents with equal triple sets serialize identically.
pub fn serialize_ntriples(doc: &TripleDoc) -> String {
    let mut lines: Vec<String> = doc
        .iter()
        .map(|t| format!("<{}> <{}> {} .", t.subject, t.predicate, render_object_nt(&t.object)))
        .collect();
    lines.sort_unstable();
    let mut out = lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

/// Canonical Turtle: the full prefix block, then subjects in IRI order with
/// predicates and objects sorted. `rdf:type` renders as `a` and sorts first.
pub fn serialize_turtle(doc: &TripleDoc, reg: &NamespaceRegistry) -> String {
    let mut out = reg.turtle_prefix_block();
    out.push('\n');
    out.push_str(&turtle_body(doc, reg, ""));
    out
}

/// Canonical TriG: the Turtle form wrapped in its named graph.
pub fn serialize_trig(doc: &TripleDoc, reg: &NamespaceRegistry) -> String {
    let mut out = reg.turtle_prefix_block();
    out.push('\n');
    out.push_str(&format!("<{}> {{\n", doc.graph_name));
    out.push_str(&turtle_body(doc, reg, "    "));
    out.push_str("}\n");
    out
}

fn turtle_term(iri: &Iri, reg: &NamespaceRegistry) -> String {
    match reg.compact(iri.as_str()) {
        Some(curie) if curie_is_turtle_safe(&curie) => curie,
        _ => format!("<{iri}>"),
    }
}

/// Only compact when the local part is a plain Turtle prefixed-name; anything
/// with path separators or exotic characters stays a full IRI.
fn curie_is_turtle_safe(curie: &str) -> bool {
    let (_, local) = curie.split_once(':').unwrap_or(("", curie));
    !local.is_empty()
        && local
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !local.starts_with('.')
        && !local.ends_with('.')
}

fn render_object_turtle(object: &Object, reg: &NamespaceRegistry) -> String {
    match object {
        Object::Iri(iri) => turtle_term(iri, reg),
        Object::Literal { lexical, datatype } => {
            if datatype.as_str() == XSD_STRING {
                format!("\"{}\"", escape_literal(lexical))
            } else {
                format!(
                    "\"{}\"^^{}",
                    escape_literal(lexical),
                    turtle_term(datatype, reg)
                )
            }
        }
    }
}

fn turtle_body(doc: &TripleDoc, reg: &NamespaceRegistry, indent: &str) -> String {
    // subject → predicate → object set, all ordered.
    let mut by_subject: BTreeMap<&Iri, BTreeMap<String, BTreeSet<String>>> = BTreeMap::new();
    for t in doc.iter() {
        let pred = if t.predicate.as_str() == RDF_TYPE {
            // Sorts before any IRI or curie rendering and reads as Turtle.
            "a".to_owned()
        } else {
            turtle_term(&t.predicate, reg)
        };
        by_subject
            .entry(&t.subject)
            .or_default()
            .entry(pred)
            .or_default()
            .insert(render_object_turtle(&t.object, reg));
    }
    let mut out = String::new();
    for (subject, preds) in by_subject {
        out.push_str(&format!("{indent}<{subject}>"));
        let mut first = true;
        for (pred, objects) in preds {
            if !first {
                out.push_str(&format!(" ;\n{indent}    "));
            } else {
                out.push(' ');
                first = false;
            }
            let objs: Vec<String> = objects.into_iter().collect();
            out.push_str(&format!("{} {}", pred, objs.join(", ")));
        }
        out.push_str(" .\n");
    }
    out
}

/// Parse canonical N-Triples back into a document, using oxigraph's parser —
/// deliberately not the serializer's own code — so round-trip checks catch
/// one-sided bugs. Blank nodes and language tags are rejected: the pipeline
/// never produces them.
pub fn parse_ntriples(text: &str, graph_name: impl Into<Iri>) -> Result<TripleDoc, EmitError> {
    use oxigraph::model::{NamedOrBlankNode, Term};

    let mut doc = TripleDoc::new(graph_name);
    let parser = RdfParser::from_format(RdfFormat::NTriples);
    for (idx, quad) in parser.for_slice(text.as_bytes()).enumerate() {
        let quad = quad.map_err(|e| EmitError::ParseNtriples {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let subject = match quad.subject {
            NamedOrBlankNode::NamedNode(n) => Iri::new(n.into_string()),
            NamedOrBlankNode::BlankNode(b) => {
                return Err(EmitError::UnexpectedBlankNode(b.into_string()))
            }
        };
        let predicate = Iri::new(quad.predicate.into_string());
        let object = match quad.object {
            Term::NamedNode(n) => Object::Iri(Iri::new(n.into_string())),
            Term::BlankNode(b) => return Err(EmitError::UnexpectedBlankNode(b.into_string())),
            Term::Literal(lit) => {
                if lit.language().is_some() {
                    return Err(EmitError::UnexpectedLanguageTag(lit.value().to_owned()));
                }
                let datatype = Iri::new(lit.datatype().as_str().to_owned());
                Object::Literal {
                    lexical: Arc::from(lit.value()),
                    datatype,
                }
            }
        };
        doc.insert(Triple::new(subject, predicate, object));
    }
    Ok(doc)
}

/// Serialize, re-parse with the independent parser, and require exact set
/// equality.
pub fn validate_round_trip(doc: &TripleDoc) -> Result<(), EmitError> {
    let text = serialize_ntriples(doc);
    let back = parse_ntriples(&text, doc.graph_name.clone())?;
    let ours: HashSet<&Triple> = doc.iter().collect();
    let theirs: HashSet<&Triple> = back.iter().collect();
    let missing = ours.difference(&theirs).count();
    let extra = theirs.difference(&ours).count();
    if missing != 0 || extra != 0 {
        return Err(EmitError::RoundTripMismatch { missing, extra });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::TypedLiteral;
    use crate::vocab::terms;

    fn setup() -> (NamespaceRegistry, DedupRegistry) {
        (
            NamespaceRegistry::builtin(),
            DedupRegistry::new(UriMinter::with_default_prefix()),
        )
    }

    fn graph() -> Iri {
        Iri::new("https://ns.inria.fr/metaboKG/graph/test")
    }

    #[test]
    fn value_nodes_merge_on_content() {
        let (reg, mut dedup) = setup();
        let lit = TypedLiteral::decimal("0.91").unwrap();
        let a = NodeSpec::value_node(vec![terms::mbs("MQScore")], lit.clone()).unwrap();
        let b = NodeSpec::value_node(vec![terms::mbs("MQScore")], lit.clone()).unwrap();
        let c = NodeSpec::value_node(vec![terms::mbs("MZErrorPPM")], lit).unwrap();

        let doc = emit(&[a, b, c], &reg, &mut dedup, graph()).unwrap();
        let mq = Iri::new(reg.expand("MBS:MQScore").unwrap());
        let ppm = Iri::new(reg.expand("MBS:MZErrorPPM").unwrap());
        assert_eq!(doc.subjects_with_type(&mq).len(), 1);
        assert_eq!(doc.subjects_with_type(&ppm).len(), 1);
        assert_eq!(dedup.value_node_count(), 2);
        assert_eq!(doc.stats.value_merges, 1);

        // The merged node carries exactly one prov:value triple.
        let value_pred = Iri::new(reg.expand("prov:value").unwrap());
        let subject = doc.subjects_with_type(&mq).into_iter().next().unwrap().clone();
        assert_eq!(doc.objects_of(&subject, &value_pred).count(), 1);
        // And its IRI is the content hash, reproducible from the merge key.
        assert!(subject.as_str().starts_with("https://ns.inria.fr/metaboKG/value/"));
    }

    #[test]
    fn individuals_merge_on_class_and_label() {
        let (reg, mut dedup) = setup();
        let mk = |label: &str| {
            NodeSpec::named_individual("attribute", vec![terms::mbs("SampleType")])
                .unwrap()
                .with_label(label)
        };
        let doc = emit(&[mk("blood"), mk("blood"), mk("plasma")], &reg, &mut dedup, graph()).unwrap();
        let class = Iri::new(reg.expand("MBS:SampleType").unwrap());
        assert_eq!(doc.subjects_with_type(&class).len(), 2);
        assert_eq!(doc.stats.individual_merges, 1);
    }

    #[test]
    fn prov_nodes_never_content_merge() {
        let (reg, mut dedup) = setup();
        // Identical content, different identity: two activities.
        let a1 = NodeSpec::prov_activity("job", vec![terms::mbs("MolecularNetworkingJob")])
            .with_identity("bundle", "job-a")
            .with_identity("step", "1");
        let a2 = NodeSpec::prov_activity("job", vec![terms::mbs("MolecularNetworkingJob")])
            .with_identity("bundle", "job-b")
            .with_identity("step", "1");
        // Same identity twice: one node, triples merge.
        let a3 = a1.clone();
        let doc = emit(&[a1, a2, a3], &reg, &mut dedup, graph()).unwrap();
        let class = Iri::new(reg.expand("MBS:MolecularNetworkingJob").unwrap());
        assert_eq!(doc.subjects_with_type(&class).len(), 2);
    }

    #[test]
    fn prov_nodes_without_identity_are_rejected() {
        let (reg, mut dedup) = setup();
        let spec = NodeSpec::prov_entity("sample", vec![]);
        let err = emit(&[spec], &reg, &mut dedup, graph()).unwrap_err();
        assert!(matches!(err, EmitError::MissingIdentity { .. }));

        // An explicit IRI satisfies the requirement.
        let pinned = NodeSpec::prov_entity("sample", vec![])
            .with_iri("https://ns.inria.fr/metaboKG/sample/XYZ");
        assert!(emit(&[pinned], &reg, &mut dedup, graph()).is_ok());
    }

    #[test]
    fn unlabeled_individuals_need_an_explicit_iri() {
        let (reg, mut dedup) = setup();
        let spec = NodeSpec::named_individual("attribute", vec![terms::mbs("SampleType")]).unwrap();
        let err = emit(&[spec.clone()], &reg, &mut dedup, graph()).unwrap_err();
        assert!(matches!(err, EmitError::UnnamedIndividual { .. }));
        let pinned = spec.with_iri("https://ns.inria.fr/metaboKG/schema/sampletype_blood");
        assert!(emit(&[pinned], &reg, &mut dedup, graph()).is_ok());
    }

    #[test]
    fn edges_walk_children_and_plain_targets() {
        let (reg, mut dedup) = setup();
        let score = NodeSpec::value_node(
            vec![terms::mbs("MQScore")],
            TypedLiteral::decimal("0.91").unwrap(),
        )
        .unwrap();
        let ir = NodeSpec::prov_entity("identification", vec![terms::ms_identification_result()])
            .with_identity("uai", "mzspec:C:f:annot:r.tsv:1")
            .with_node_edge(terms::prov_had_member(), score)
            .with_iri_edge(terms::prov_was_generated_by(), "https://example.org/job/1")
            .with_literal_edge(terms::mbs("note"), TypedLiteral::string("best hit").unwrap());
        let doc = emit(&[ir], &reg, &mut dedup, graph()).unwrap();

        let had_member = Iri::new(reg.expand("prov:had_member").unwrap());
        assert_eq!(doc.with_predicate(&had_member).count(), 1);
        let t = doc.with_predicate(&had_member).next().unwrap().clone();
        assert!(t.subject.as_str().contains("/identification/"));
        assert!(t.object.as_iri().unwrap().as_str().contains("/value/"));
    }

    #[test]
    fn ntriples_output_is_sorted_and_stable() {
        let (reg, mut dedup) = setup();
        let mk = |id: &str| {
            NodeSpec::prov_entity("sample", vec![terms::sio_sample()])
                .with_identity("collection", id)
                .with_label(format!("sample {id}"))
        };
        let doc_a = emit(&[mk("B"), mk("A"), mk("C")], &reg, &mut dedup, graph()).unwrap();
        let mut dedup2 = DedupRegistry::new(UriMinter::with_default_prefix());
        let doc_b = emit(&[mk("C"), mk("B"), mk("A")], &reg, &mut dedup2, graph()).unwrap();

        let nt_a = serialize_ntriples(&doc_a);
        let nt_b = serialize_ntriples(&doc_b);
        assert_eq!(nt_a, nt_b, "insertion order must not leak into output");
        let lines: Vec<&str> = nt_a.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort_unstable();
        assert_eq!(lines, sorted);
        assert!(nt_a.ends_with('\n'));
    }

    #[test]
    fn simple_string_literals_render_without_datatype() {
        let (reg, mut dedup) = setup();
        let spec = NodeSpec::prov_entity("collection", vec![terms::dcat_dataset()])
            .with_identity("collection", "MSV000001")
            .with_literal_edge(terms::dct_title(), TypedLiteral::string("MSV000001").unwrap())
            .with_literal_edge(
                terms::mbs("sampleCount"),
                TypedLiteral::integer("12").unwrap(),
            );
        let doc = emit(&[spec], &reg, &mut dedup, graph()).unwrap();
        let nt = serialize_ntriples(&doc);
        assert!(nt.contains("\"MSV000001\" ."));
        assert!(nt.contains("\"12\"^^<http://www.w3.org/2001/XMLSchema#integer>"));
    }

    #[test]
    fn round_trip_through_independent_parser() {
        let (reg, mut dedup) = setup();
        let nasty = TypedLiteral::string("line one\nline \"two\"\t\\backslash\u{1}").unwrap();
        let spec = NodeSpec::prov_entity("sample", vec![terms::sio_sample()])
            .with_identity("collection", "MSV000001")
            .with_literal_edge(terms::mbs("note"), nasty)
            .with_node_edge(
                terms::sio_has_attribute(),
                NodeSpec::value_node(
                    vec![terms::mbs("AgeInYears")],
                    TypedLiteral::decimal("41.5").unwrap(),
                )
                .unwrap(),
            );
        let doc = emit(&[spec], &reg, &mut dedup, graph()).unwrap();
        validate_round_trip(&doc).unwrap();

        let parsed = parse_ntriples(&serialize_ntriples(&doc), doc.graph_name.clone()).unwrap();
        assert_eq!(parsed.len(), doc.len());
    }

    #[test]
    fn parser_rejects_blank_nodes() {
        let err = parse_ntriples(
            "_:b0 <http://example.org/p> <http://example.org/o> .\n",
            graph(),
        )
        .unwrap_err();
        assert!(matches!(err, EmitError::UnexpectedBlankNode(_)));
    }

    #[test]
    fn turtle_and_trig_are_canonical() {
        let (reg, mut dedup) = setup();
        let spec = NodeSpec::prov_entity("collection", vec![terms::dcat_dataset()])
            .with_identity("collection", "MSV000001")
            .with_literal_edge(terms::dct_title(), TypedLiteral::string("MSV000001").unwrap());
        let doc = emit(&[spec], &reg, &mut dedup, graph()).unwrap();

        let ttl = serialize_turtle(&doc, &reg);
        assert!(ttl.starts_with("@prefix"));
        assert!(ttl.contains("a dcat:Dataset, prov:Entity"), "{ttl}");
        assert!(ttl.contains("dct:title \"MSV000001\""));

        let trig = serialize_trig(&doc, &reg);
        assert!(trig.contains(&format!("<{}> {{\n", doc.graph_name)));
        assert!(trig.trim_end().ends_with('}'));
    }

    #[test]
    fn distributions_attach_titles_and_locations() {
        let (reg, mut dedup) = setup();
        let file = NodeSpec::prov_entity("msrun-file", vec![])
            .with_identity("collection", "MSV000001")
            .with_identity("filename", "a 1.mzML");
        let doc0 = emit(&[file.clone()], &reg, &mut dedup, graph()).unwrap();
        let subject = doc0.iter().next().unwrap().subject.clone();

        let mut doc = doc0.clone();
        attach_distribution(
            &mut doc,
            &subject,
            &DistributionSpec {
                title: "a 1.mzML".to_owned(),
                locator: "peak/sub/a 1.mzML".to_owned(),
                repository: Some("MassIVE".to_owned()),
            },
            &reg,
        )
        .unwrap();
        let nt = serialize_ntriples(&doc);
        assert!(nt.contains("<http://www.w3.org/ns/dcat#accessURL> <file:///peak/sub/a%201.mzML>"));
        assert!(nt.contains("<http://purl.org/dc/terms/title> \"a 1.mzML\""));
        assert!(nt.contains("<http://purl.org/dc/terms/publisher> \"MassIVE\""));

        let mut doc2 = doc0;
        attach_distribution(
            &mut doc2,
            &subject,
            &DistributionSpec {
                title: "result.tsv".to_owned(),
                locator: "https://example.org/tasks/123/result.tsv".to_owned(),
                repository: None,
            },
            &reg,
        )
        .unwrap();
        let nt2 = serialize_ntriples(&doc2);
        assert!(nt2.contains("<http://www.w3.org/ns/dcat#downloadURL> <https://example.org/tasks/123/result.tsv>"));
        // Parse-back sanity: both forms are valid N-Triples.
        validate_round_trip(&doc2).unwrap();
    }

    #[test]
    fn merge_unions_triples() {
        let (reg, mut dedup) = setup();
        let a = NodeSpec::prov_entity("sample", vec![]).with_identity("collection", "A");
        let b = NodeSpec::prov_entity("sample", vec![]).with_identity("collection", "B");
        let doc_a = emit(&[a.clone()], &reg, &mut dedup, graph()).unwrap();
        let doc_b = emit(&[b, a], &reg, &mut dedup, graph()).unwrap();
        let mut merged = doc_a.clone();
        merged.merge(&doc_b);
        assert_eq!(merged.len(), 2); // two subjects, one type triple each
    }
}
