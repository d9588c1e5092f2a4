//! The node model: everything the emitters put into the graph is first
//! described as a [`NodeSpec`] tree.
//!
//! Four node kinds cover the whole graph:
//!
//! - **Provenance entities** and **activities** carry the data itself and the
//!   processes that produced it. They are never merged by content — two
//!   activities with identical descriptions in different jobs stay distinct —
//!   so each spec carries the identity attributes its URI is minted from.
//! - **Value nodes** reify a single typed literal (the n-ary attribute
//!   pattern). They are merged aggressively: one node per distinct
//!   (types, datatype, lexical) combination across the whole graph.
//! - **Named individuals** stand for controlled-vocabulary values (sample
//!   types, instruments, library spectra). They merge per (classes, label)
//!   unless a caller supplies an explicit IRI.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::vocab::{terms, NamespaceRegistry, OntologyTermRef, VocabError};

pub const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";
pub const XSD_DECIMAL: &str = "http://www.w3.org/2001/XMLSchema#decimal";
pub const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";
pub const XSD_BOOLEAN: &str = "http://www.w3.org/2001/XMLSchema#boolean";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("literal lexical form is empty after trimming")]
    EmptyLiteral,
    #[error("`{lexical}` is not a valid lexical form for {datatype}")]
    BadLexicalForm { lexical: String, datatype: String },
    #[error("{kind} nodes must carry at least one type")]
    MissingTypes { kind: NodeKind },
    #[error("value nodes must carry a typed literal value")]
    MissingValue,
    #[error("{kind} nodes must not carry a literal value")]
    ValueOnNonValueNode { kind: NodeKind },
    #[error("provenance nodes must carry at least one prov-namespace type")]
    MissingProvType,
}

/// The four kinds of subject the graph contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    ProvEntity,
    ProvActivity,
    ValueNode,
    NamedIndividual,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            NodeKind::ProvEntity => "provenance-entity",
            NodeKind::ProvActivity => "provenance-activity",
            NodeKind::ValueNode => "value",
            NodeKind::NamedIndividual => "individual",
        };
        f.write_str(name)
    }
}

/// A literal with an explicit datatype. The lexical form is NFC-normalized
/// and trimmed on construction, and numeric datatypes are validated.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypedLiteral {
    lexical: String,
    datatype: String,
}

impl TypedLiteral {
    pub fn new(lexical: &str, datatype: &str) -> Result<Self, ModelError> {
        let lexical: String = lexical.trim().nfc().collect();
        if lexical.is_empty() {
            return Err(ModelError::EmptyLiteral);
        }
        let ok = match datatype {
            XSD_DECIMAL => is_decimal_lexical(&lexical),
            XSD_INTEGER => is_integer_lexical(&lexical),
            XSD_BOOLEAN => lexical == "true" || lexical == "false",
            _ => true,
        };
        if !ok {
            return Err(ModelError::BadLexicalForm {
                lexical,
                datatype: datatype.to_owned(),
            });
        }
        Ok(Self {
            lexical,
            datatype: datatype.to_owned(),
        })
    }

    pub fn string(lexical: &str) -> Result<Self, ModelError> {
        Self::new(lexical, XSD_STRING)
    }

    pub fn decimal(lexical: &str) -> Result<Self, ModelError> {
        Self::new(lexical, XSD_DECIMAL)
    }

    pub fn integer(lexical: &str) -> Result<Self, ModelError> {
        Self::new(lexical, XSD_INTEGER)
    }

    pub fn lexical(&self) -> &str {
        &self.lexical
    }

    pub fn datatype(&self) -> &str {
        &self.datatype
    }
}

impl fmt::Display for TypedLiteral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{}\"^^<{}>", self.lexical, self.datatype)
    }
}

/// xsd:decimal lexical space: optional sign, digits with at most one decimal
/// point, at least one digit. Exponents are *not* part of the lexical space.
fn is_decimal_lexical(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    if body.is_empty() {
        return false;
    }
    let mut dots = 0usize;
    let mut digits = 0usize;
    for c in body.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return false,
        }
    }
    digits >= 1 && dots <= 1
}

fn is_integer_lexical(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    !body.is_empty() && body.chars().all(|c| c.is_ascii_digit())
}

/// Where an edge points: an inline child spec, an already-resolved IRI, or a
/// plain literal object.
#[derive(Debug, Clone)]
pub enum EdgeTarget {
    Node(Box<NodeSpec>),
    Iri(String),
    Literal(TypedLiteral),
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub predicate: OntologyTermRef,
    pub target: EdgeTarget,
}

/// A declarative description of one graph node and the edges leaving it.
///
/// Specs form trees: edge targets may be further specs, and the emitter walks
/// the tree, resolves each node to a deterministic IRI, and produces triples.
/// Re-emitting an identical spec is always safe — the triples land on the
/// same subject and set-union away.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    kind: NodeKind,
    concept: String,
    types: Vec<OntologyTermRef>,
    value: Option<TypedLiteral>,
    label: Option<String>,
    identity: BTreeMap<String, String>,
    explicit_iri: Option<String>,
    edges: Vec<Edge>,
}

impl NodeSpec {
    /// General constructor enforcing the per-kind invariants:
    ///
    /// - value nodes carry a literal and at least one type;
    /// - named individuals carry at least one type and never a literal;
    /// - provenance nodes carry at least one `prov:` type and never a literal.
    pub fn try_new(
        kind: NodeKind,
        concept: &str,
        types: Vec<OntologyTermRef>,
        value: Option<TypedLiteral>,
    ) -> Result<Self, ModelError> {
        match kind {
            NodeKind::ValueNode => {
                if types.is_empty() {
                    return Err(ModelError::MissingTypes { kind });
                }
                if value.is_none() {
                    return Err(ModelError::MissingValue);
                }
            }
            NodeKind::NamedIndividual => {
                if types.is_empty() {
                    return Err(ModelError::MissingTypes { kind });
                }
                if value.is_some() {
                    return Err(ModelError::ValueOnNonValueNode { kind });
                }
            }
            NodeKind::ProvEntity | NodeKind::ProvActivity => {
                if value.is_some() {
                    return Err(ModelError::ValueOnNonValueNode { kind });
                }
                if !types.iter().any(|t| t.prefix == "prov") {
                    return Err(ModelError::MissingProvType);
                }
            }
        }
        Ok(Self {
            kind,
            concept: concept.to_owned(),
            types,
            value,
            label: None,
            identity: BTreeMap::new(),
            explicit_iri: None,
            edges: Vec::new(),
        })
    }

    /// A provenance entity. `prov:Entity` is added if `types` lacks a prov
    /// type, so this constructor cannot fail.
    pub fn prov_entity(concept: &str, mut types: Vec<OntologyTermRef>) -> Self {
        if !types.iter().any(|t| t.prefix == "prov") {
            types.insert(0, terms::prov_entity());
        }
        Self::try_new(NodeKind::ProvEntity, concept, types, None)
            .expect("prov type was just ensured")
    }

    /// A provenance activity; `prov:Activity` is added when missing.
    pub fn prov_activity(concept: &str, mut types: Vec<OntologyTermRef>) -> Self {
        if !types.iter().any(|t| t.prefix == "prov") {
            types.insert(0, terms::prov_activity());
        }
        Self::try_new(NodeKind::ProvActivity, concept, types, None)
            .expect("prov type was just ensured")
    }

    /// A value node reifying one typed literal.
    pub fn value_node(types: Vec<OntologyTermRef>, value: TypedLiteral) -> Result<Self, ModelError> {
        Self::try_new(NodeKind::ValueNode, "value", types, Some(value))
    }

    /// A named individual for a controlled-vocabulary value.
    pub fn named_individual(concept: &str, types: Vec<OntologyTermRef>) -> Result<Self, ModelError> {
        Self::try_new(NodeKind::NamedIndividual, concept, types, None)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Add one identity attribute; provenance node URIs are minted from these.
    pub fn with_identity(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.identity.insert(key.into(), value.into());
        self
    }

    /// Pin the node to a pre-minted IRI instead of deriving one.
    pub fn with_iri(mut self, iri: impl Into<String>) -> Self {
        self.explicit_iri = Some(iri.into());
        self
    }

    pub fn with_edge(mut self, predicate: OntologyTermRef, target: EdgeTarget) -> Self {
        self.edges.push(Edge { predicate, target });
        self
    }

    pub fn with_node_edge(self, predicate: OntologyTermRef, child: NodeSpec) -> Self {
        self.with_edge(predicate, EdgeTarget::Node(Box::new(child)))
    }

    pub fn with_iri_edge(self, predicate: OntologyTermRef, iri: impl Into<String>) -> Self {
        self.with_edge(predicate, EdgeTarget::Iri(iri.into()))
    }

    pub fn with_literal_edge(self, predicate: OntologyTermRef, literal: TypedLiteral) -> Self {
        self.with_edge(predicate, EdgeTarget::Literal(literal))
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn concept(&self) -> &str {
        &self.concept
    }

    pub fn types(&self) -> &[OntologyTermRef] {
        &self.types
    }

    pub fn value(&self) -> Option<&TypedLiteral> {
        self.value.as_ref()
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn identity(&self) -> &BTreeMap<String, String> {
        &self.identity
    }

    pub fn explicit_iri(&self) -> Option<&str> {
        self.explicit_iri.as_deref()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// The sorted, expanded type IRIs — the stable half of most merge keys.
    pub fn expanded_types(&self, reg: &NamespaceRegistry) -> Result<Vec<String>, VocabError> {
        let mut iris = self
            .types
            .iter()
            .map(|t| reg.expand_term(t))
            .collect::<Result<Vec<_>, _>>()?;
        iris.sort_unstable();
        iris.dedup();
        Ok(iris)
    }

    /// The content key under which this node merges with others, or `None`
    /// for provenance nodes, which never merge by content.
    ///
    /// Value nodes merge on (types, datatype, lexical); named individuals on
    /// (classes, label). The key doubles as the canonical identity string the
    /// node's URI is minted from, so "same key" and "same URI" coincide by
    /// construction.
    pub fn merge_key(&self, reg: &NamespaceRegistry) -> Result<Option<String>, VocabError> {
        match self.kind {
            NodeKind::ProvEntity | NodeKind::ProvActivity => Ok(None),
            NodeKind::ValueNode => {
                let value = self.value.as_ref().expect("value nodes always carry a value");
                let attrs = self.value_merge_attrs(reg, value)?;
                Ok(Some(crate::ident::canonical_identity("value", &attrs)))
            }
            NodeKind::NamedIndividual => {
                let label = match &self.label {
                    Some(l) => l.clone(),
                    // An unlabeled individual has no content to merge on;
                    // the emitter requires an explicit IRI for those.
                    None => return Ok(None),
                };
                let mut attrs = BTreeMap::new();
                attrs.insert("class".to_owned(), self.expanded_types(reg)?.join(","));
                attrs.insert("label".to_owned(), label);
                Ok(Some(crate::ident::canonical_identity("individual", &attrs)))
            }
        }
    }

    /// Identity attributes for a value node: datatype, lexical form, and the
    /// sorted type IRIs.
    pub(crate) fn value_merge_attrs(
        &self,
        reg: &NamespaceRegistry,
        value: &TypedLiteral,
    ) -> Result<BTreeMap<String, String>, VocabError> {
        let mut attrs = BTreeMap::new();
        attrs.insert("dt".to_owned(), value.datatype().to_owned());
        attrs.insert("lex".to_owned(), value.lexical().to_owned());
        attrs.insert("types".to_owned(), self.expanded_types(reg)?.join(","));
        Ok(attrs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::terms;

    #[test]
    fn literals_normalize_and_validate() {
        let lit = TypedLiteral::string("  caf\u{0065}\u{0301}  ").unwrap();
        // NFC composes e + combining acute into é.
        assert_eq!(lit.lexical(), "caf\u{00e9}");
        assert_eq!(lit.datatype(), XSD_STRING);

        assert!(TypedLiteral::string("   ").is_err());
        assert!(TypedLiteral::decimal("0.91").is_ok());
        assert!(TypedLiteral::decimal("-4.").is_ok());
        assert!(TypedLiteral::decimal(".5").is_ok());
        assert!(TypedLiteral::decimal("1e3").is_err());
        assert!(TypedLiteral::decimal("four").is_err());
        assert!(TypedLiteral::integer("17").is_ok());
        assert!(TypedLiteral::integer("+17").is_ok());
        assert!(TypedLiteral::integer("17.0").is_err());
        assert!(TypedLiteral::new("true", XSD_BOOLEAN).is_ok());
        assert!(TypedLiteral::new("yes", XSD_BOOLEAN).is_err());
    }

    #[test]
    fn value_nodes_require_types_and_value() {
        let v = TypedLiteral::decimal("0.91").unwrap();
        assert!(matches!(
            NodeSpec::value_node(vec![], v.clone()),
            Err(ModelError::MissingTypes { kind: NodeKind::ValueNode })
        ));
        assert!(matches!(
            NodeSpec::try_new(NodeKind::ValueNode, "value", vec![terms::mbs("MQScore")], None),
            Err(ModelError::MissingValue)
        ));
        let ok = NodeSpec::value_node(vec![terms::mbs("MQScore")], v).unwrap();
        assert_eq!(ok.kind(), NodeKind::ValueNode);
    }

    #[test]
    fn individuals_require_types_and_reject_values() {
        assert!(matches!(
            NodeSpec::named_individual("attribute", vec![]),
            Err(ModelError::MissingTypes { kind: NodeKind::NamedIndividual })
        ));
        let v = TypedLiteral::string("x").unwrap();
        assert!(matches!(
            NodeSpec::try_new(
                NodeKind::NamedIndividual,
                "attribute",
                vec![terms::mbs("SampleType")],
                Some(v)
            ),
            Err(ModelError::ValueOnNonValueNode { .. })
        ));
    }

    #[test]
    fn prov_nodes_require_a_prov_type() {
        assert!(matches!(
            NodeSpec::try_new(NodeKind::ProvEntity, "sample", vec![terms::sio_sample()], None),
            Err(ModelError::MissingProvType)
        ));
        // The ergonomic constructors add the prov type themselves.
        let e = NodeSpec::prov_entity("sample", vec![terms::sio_sample()]);
        assert!(e.types().contains(&terms::prov_entity()));
        let a = NodeSpec::prov_activity("sampling", vec![terms::mbs("SamplingProcess")]);
        assert!(a.types().contains(&terms::prov_activity()));
        // And they don't double-add when one is present.
        let e2 = NodeSpec::prov_entity("sample", vec![terms::prov_entity()]);
        assert_eq!(e2.types().len(), 1);
        let v = TypedLiteral::string("x").unwrap();
        assert!(matches!(
            NodeSpec::try_new(NodeKind::ProvEntity, "sample", vec![terms::prov_entity()], Some(v)),
            Err(ModelError::ValueOnNonValueNode { .. })
        ));
    }

    #[test]
    fn merge_keys_follow_content() {
        let reg = NamespaceRegistry::builtin();
        let v = TypedLiteral::decimal("0.91").unwrap();
        let a = NodeSpec::value_node(vec![terms::mbs("MQScore")], v.clone()).unwrap();
        let b = NodeSpec::value_node(vec![terms::mbs("MQScore")], v.clone()).unwrap();
        assert_eq!(a.merge_key(&reg).unwrap(), b.merge_key(&reg).unwrap());
        let key = a.merge_key(&reg).unwrap().unwrap();
        assert_eq!(
            key,
            "value|dt=http://www.w3.org/2001/XMLSchema#decimal|lex=0.91\
             |types=https://ns.inria.fr/metaboKG/schema/MQScore"
        );

        // Different type, same literal: different key.
        let c = NodeSpec::value_node(vec![terms::mbs("MZErrorPPM")], v).unwrap();
        assert_ne!(a.merge_key(&reg).unwrap(), c.merge_key(&reg).unwrap());

        // Type order does not matter.
        let v2 = TypedLiteral::string("plasma").unwrap();
        let d = NodeSpec::value_node(vec![terms::mbs("A"), terms::mbs("B")], v2.clone()).unwrap();
        let e = NodeSpec::value_node(vec![terms::mbs("B"), terms::mbs("A")], v2).unwrap();
        assert_eq!(d.merge_key(&reg).unwrap(), e.merge_key(&reg).unwrap());

        // Individuals merge on (classes, label).
        let i1 = NodeSpec::named_individual("attribute", vec![terms::mbs("SampleType")])
            .unwrap()
            .with_label("blood");
        let i2 = NodeSpec::named_individual("attribute", vec![terms::mbs("SampleType")])
            .unwrap()
            .with_label("blood");
        let i3 = NodeSpec::named_individual("attribute", vec![terms::mbs("SampleType")])
            .unwrap()
            .with_label("plasma");
        assert_eq!(i1.merge_key(&reg).unwrap(), i2.merge_key(&reg).unwrap());
        assert_ne!(i1.merge_key(&reg).unwrap(), i3.merge_key(&reg).unwrap());

        // Provenance nodes never merge by content.
        let p = NodeSpec::prov_entity("sample", vec![]).with_identity("collection", "MSV1");
        assert_eq!(p.merge_key(&reg).unwrap(), None);
    }

    #[test]
    fn unlabeled_individuals_have_no_merge_key() {
        let reg = NamespaceRegistry::builtin();
        let spec = NodeSpec::named_individual("attribute", vec![terms::mbs("SampleType")]).unwrap();
        assert_eq!(spec.merge_key(&reg).unwrap(), None);
    }
}
