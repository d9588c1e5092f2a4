//! Build a provenance-aware metabolomics knowledge graph from sample-metadata
//! tables and molecular-networking annotation exports.
//!
//! The pipeline turns two kinds of tabular input — repository sample-metadata
//! TSVs and GNPS-style molecular-networking result tables — into one RDF graph
//! in which every measurement, annotation, and protocol detail keeps a link to
//! where it came from. The crate is organized bottom-up:
//!
//! - [`vocab`]: namespace registry and ontology term references.
//! - [`node`]: the four node kinds every emitted subject belongs to, plus
//!   typed literals and edge specs.
//! - [`ident`]: deterministic URI minting and the universal annotation
//!   identifier (UAI) grammar.
//! - [`emit`]: node specs → deduplicated triples → canonical serializations.
//! - [`align`]: string-to-ontology term matching, curation files, and the
//!   remote lookup client.
//! - [`metadata`]: sample-metadata ingestion, organism deduplication, and
//!   compositional value parsers.
//! - [`gnps`]: molecular-networking bundle ingestion (classical and
//!   feature-based).
//! - [`linkage`]: cross-batch identity links between annotation identifiers.
//! - [`query`]: competency-question templates and SPARQL endpoints (embedded
//!   and remote).
//! - [`synth`]: deterministic synthetic corpus generation for scale tests.
//! - [`config`] and [`pipeline`]: run configuration and the end-to-end steps
//!   the command-line driver calls.
//!
//! The `book/` directory of the repository walks through the same layers with
//! runnable examples; those snippets compile as doc-tests of this crate.

pub mod align;
pub mod emit;
pub mod ident;
pub mod metadata;
pub mod node;
pub mod vocab;

pub use align::{MatchCandidate, TermIndex};
pub use emit::{DedupRegistry, Iri, Object, Triple, TripleDoc};
pub use ident::{Uai, UriMinter};
pub use metadata::{MappingDictionary, MappingEngine, MetadataManifest, MetadataTable, SolventMixture};
pub use node::{NodeKind, NodeSpec, TypedLiteral};
pub use vocab::{NamespaceRegistry, OntologyTermRef};
