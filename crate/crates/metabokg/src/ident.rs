//! Deterministic identifiers: URI minting and the universal annotation
//! identifier (UAI).
//!
//! Minting is a pure function of content. Each node's identity is reduced to
//! a canonical string — concept plus sorted, escaped `key=value` pairs — and
//! hashed; the first 128 bits of the SHA-256 digest are rendered in a
//! 57-character alphabet that avoids visually ambiguous glyphs. Anyone can
//! recompute any URI from the same inputs, which is what makes independent
//! batches mergeable and reruns reproducible.
//!
//! A UAI names the provenance coordinates of one annotation or sample:
//! which repository collection, which run file, which scan, which annotation
//! table and hit, which feature. Components are optional but constrained
//! (an annotation file without a collection is meaningless, hit numbers are
//! positive), and the string form round-trips losslessly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::num::NonZeroU64;

use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Base-57 alphabet: alphanumerics minus `0`, `1`, `I`, `O`, `l`.
pub const BASE57_ALPHABET: &[u8; 57] =
    b"23456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

/// Hash length in the base-57 alphabet: 57^22 > 2^128, and 22 is the least
/// such width, so every 128-bit hash fits in exactly 22 characters.
pub const HASH_WIDTH: usize = 22;

/// Instance URIs live directly under this root (schema terms live under its
/// `schema/` subtree, which the namespace registry binds separately).
pub const DEFAULT_GLOBAL_PREFIX: &str = "https://ns.inria.fr/metaboKG/";

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("global prefix `{0}` must be a non-empty IRI ending in '/'")]
    BadGlobalPrefix(String),
    #[error("concept segment `{0}` must match [a-z0-9-]+")]
    BadConcept(String),
    #[error("cannot mint a URI for `{0}`: identity attributes are empty and no fallback was given")]
    EmptyIdentity(String),
    #[error("malformed annotation identifier at byte {position}: {reason} in `{input}`")]
    MalformedUai {
        input: String,
        position: usize,
        reason: String,
    },
    #[error("annotation identifier component {0} must be a non-empty string")]
    EmptyComponent(UaiComponent),
    #[error("an annotation identifier needs at least one component")]
    EmptyUai,
    #[error("an annotation file reference requires a collection id")]
    AnnotationWithoutCollection,
    #[error("hit numbers are positive integers")]
    ZeroHitNumber,
    #[error("annotations from molecular-networking exports carry exactly one hit, found hit number {0}")]
    GnpsHitNumber(u64),
}

/// Render a 128-bit value in the base-57 alphabet, zero-padded ('2') to
/// [`HASH_WIDTH`] characters.
pub fn base57_encode(mut n: u128) -> String {
    let mut buf = [BASE57_ALPHABET[0]; HASH_WIDTH];
    let mut i = HASH_WIDTH;
    while n > 0 {
        i -= 1;
        buf[i] = BASE57_ALPHABET[(n % 57) as usize];
        n /= 57;
    }
    String::from_utf8(buf.to_vec()).expect("alphabet is ASCII")
}

/// Escape `%`, `|`, and `=` (in that order) so keys and values can never
/// forge the separators of a canonical identity string.
fn escape_identity(s: &str) -> String {
    s.replace('%', "%25").replace('|', "%7C").replace('=', "%3D")
}

/// The canonical identity string for a concept and its attributes:
/// `concept|key=value|key=value…` with pairs sorted by key, values
/// NFC-normalized, and both sides escaped.
///
/// This string is the *only* input to URI hashing, and it doubles as the
/// content-merge key for value nodes and named individuals, so "same
/// canonical string" and "same node" coincide everywhere.
pub fn canonical_identity(concept: &str, attrs: &BTreeMap<String, String>) -> String {
    let mut out = String::from(concept);
    for (k, v) in attrs {
        let v: String = v.nfc().collect();
        out.push('|');
        out.push_str(&escape_identity(k));
        out.push('=');
        out.push_str(&escape_identity(&v));
    }
    out
}

/// A minted URI, kept in parts so callers can inspect the concept and hash.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UriSpec {
    pub global_prefix: String,
    pub concept: String,
    pub hash: String,
}

impl UriSpec {
    pub fn iri(&self) -> String {
        format!("{}{}/{}", self.global_prefix, self.concept, self.hash)
    }
}

impl fmt::Display for UriSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.iri())
    }
}

/// Last-resort identity for records whose mapped attributes are all absent:
/// the source identifier and file name they came from.
#[derive(Debug, Clone)]
pub struct FallbackIdentity {
    pub source_id: String,
    pub filename: String,
}

impl FallbackIdentity {
    fn attrs(&self) -> BTreeMap<String, String> {
        let mut attrs = BTreeMap::new();
        attrs.insert("file".to_owned(), self.filename.clone());
        attrs.insert("src".to_owned(), self.source_id.clone());
        attrs
    }
}

/// Mints URIs under one global prefix.
#[derive(Debug, Clone)]
pub struct UriMinter {
    global_prefix: String,
}

impl UriMinter {
    pub fn new(global_prefix: &str) -> Result<Self, IdentError> {
        if global_prefix.is_empty() || !global_prefix.ends_with('/') {
            return Err(IdentError::BadGlobalPrefix(global_prefix.to_owned()));
        }
        Ok(Self {
            global_prefix: global_prefix.to_owned(),
        })
    }

    pub fn with_default_prefix() -> Self {
        Self::new(DEFAULT_GLOBAL_PREFIX).expect("default prefix is well-formed")
    }

    pub fn global_prefix(&self) -> &str {
        &self.global_prefix
    }

    /// Mint the URI for `concept` + `attrs`. Empty attributes are an error:
    /// a node with no distinguishing identity has no stable name.
    pub fn mint(
        &self,
        concept: &str,
        attrs: &BTreeMap<String, String>,
    ) -> Result<UriSpec, IdentError> {
        self.mint_with_fallback(concept, attrs, None)
    }

    /// Like [`UriMinter::mint`], but when `attrs` is empty fall back to the
    /// record's source identity instead of failing.
    pub fn mint_with_fallback(
        &self,
        concept: &str,
        attrs: &BTreeMap<String, String>,
        fallback: Option<&FallbackIdentity>,
    ) -> Result<UriSpec, IdentError> {
        if concept.is_empty()
            || !concept
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
        {
            return Err(IdentError::BadConcept(concept.to_owned()));
        }
        let canonical = if !attrs.is_empty() {
            canonical_identity(concept, attrs)
        } else if let Some(fb) = fallback {
            canonical_identity(concept, &fb.attrs())
        } else {
            return Err(IdentError::EmptyIdentity(concept.to_owned()));
        };
        Ok(UriSpec {
            global_prefix: self.global_prefix.clone(),
            concept: concept.to_owned(),
            hash: hash_identity(&canonical),
        })
    }
}

/// First 128 bits of SHA-256 over the canonical string, base-57 encoded.
pub fn hash_identity(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    let head: [u8; 16] = digest[..16].try_into().expect("digest is 32 bytes");
    base57_encode(u128::from_be_bytes(head))
}

/// The seven UAI component slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UaiComponent {
    CollectionId,
    Mzml,
    Scan,
    AnnotationFile,
    HitNumber,
    FeatureId,
    FeatureTable,
}

impl fmt::Display for UaiComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            UaiComponent::CollectionId => "collection_id",
            UaiComponent::Mzml => "mzml",
            UaiComponent::Scan => "scan",
            UaiComponent::AnnotationFile => "annotation_file",
            UaiComponent::HitNumber => "hit_number",
            UaiComponent::FeatureId => "feature_id",
            UaiComponent::FeatureTable => "feature_table",
        };
        f.write_str(name)
    }
}

/// Result of comparing two UAIs component-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Overlap {
    /// A component present on both sides disagrees; the identifiers describe
    /// different things and must not be linked on any tier.
    Conflict(UaiComponent),
    /// The set of components present on both sides with equal values.
    Shared(BTreeSet<UaiComponent>),
}

/// A universal annotation identifier.
///
/// Components are opaque strings (kept exactly as given); only presence and
/// equality matter. Construct via [`Uai::builder`] or [`Uai::parse`]; both
/// enforce the structural invariants, so every `Uai` value serializes and
/// parses back to itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Uai {
    collection_id: Option<String>,
    mzml: Option<String>,
    scan: Option<String>,
    annotation_file: Option<String>,
    hit_number: Option<NonZeroU64>,
    feature_id: Option<String>,
    feature_table: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct UaiBuilder {
    collection_id: Option<String>,
    mzml: Option<String>,
    scan: Option<String>,
    annotation_file: Option<String>,
    hit_number: Option<u64>,
    feature_id: Option<String>,
    feature_table: Option<String>,
}

impl UaiBuilder {
    pub fn collection_id(mut self, v: impl Into<String>) -> Self {
        self.collection_id = Some(v.into());
        self
    }
    pub fn mzml(mut self, v: impl Into<String>) -> Self {
        self.mzml = Some(v.into());
        self
    }
    pub fn scan(mut self, v: impl Into<String>) -> Self {
        self.scan = Some(v.into());
        self
    }
    pub fn annotation_file(mut self, v: impl Into<String>) -> Self {
        self.annotation_file = Some(v.into());
        self
    }
    pub fn hit_number(mut self, n: u64) -> Self {
        self.hit_number = Some(n);
        self
    }
    pub fn feature_id(mut self, v: impl Into<String>) -> Self {
        self.feature_id = Some(v.into());
        self
    }
    pub fn feature_table(mut self, v: impl Into<String>) -> Self {
        self.feature_table = Some(v.into());
        self
    }

    pub fn build(self) -> Result<Uai, IdentError> {
        fn check(
            v: Option<String>,
            component: UaiComponent,
        ) -> Result<Option<String>, IdentError> {
            match v {
                Some(s) if s.trim().is_empty() => Err(IdentError::EmptyComponent(component)),
                other => Ok(other),
            }
        }
        let collection_id = check(self.collection_id, UaiComponent::CollectionId)?;
        let mzml = check(self.mzml, UaiComponent::Mzml)?;
        let scan = check(self.scan, UaiComponent::Scan)?;
        let annotation_file = check(self.annotation_file, UaiComponent::AnnotationFile)?;
        let feature_id = check(self.feature_id, UaiComponent::FeatureId)?;
        let feature_table = check(self.feature_table, UaiComponent::FeatureTable)?;
        let hit_number = match self.hit_number {
            Some(n) => Some(NonZeroU64::new(n).ok_or(IdentError::ZeroHitNumber)?),
            None => None,
        };
        if annotation_file.is_some() && collection_id.is_none() {
            return Err(IdentError::AnnotationWithoutCollection);
        }
        let uai = Uai {
            collection_id,
            mzml,
            scan,
            annotation_file,
            hit_number,
            feature_id,
            feature_table,
        };
        if uai.is_empty() {
            return Err(IdentError::EmptyUai);
        }
        Ok(uai)
    }
}

impl Uai {
    pub fn builder() -> UaiBuilder {
        UaiBuilder::default()
    }

    pub fn collection_id(&self) -> Option<&str> {
        self.collection_id.as_deref()
    }
    pub fn mzml(&self) -> Option<&str> {
        self.mzml.as_deref()
    }
    pub fn scan(&self) -> Option<&str> {
        self.scan.as_deref()
    }
    pub fn annotation_file(&self) -> Option<&str> {
        self.annotation_file.as_deref()
    }
    pub fn hit_number(&self) -> Option<u64> {
        self.hit_number.map(NonZeroU64::get)
    }
    pub fn feature_id(&self) -> Option<&str> {
        self.feature_id.as_deref()
    }
    pub fn feature_table(&self) -> Option<&str> {
        self.feature_table.as_deref()
    }

    fn is_empty(&self) -> bool {
        self.collection_id.is_none()
            && self.mzml.is_none()
            && self.scan.is_none()
            && self.annotation_file.is_none()
            && self.hit_number.is_none()
            && self.feature_id.is_none()
            && self.feature_table.is_none()
    }

    /// The components present in this identifier, in slot order.
    pub fn components(&self) -> BTreeSet<UaiComponent> {
        let mut set = BTreeSet::new();
        if self.collection_id.is_some() {
            set.insert(UaiComponent::CollectionId);
        }
        if self.mzml.is_some() {
            set.insert(UaiComponent::Mzml);
        }
        if self.scan.is_some() {
            set.insert(UaiComponent::Scan);
        }
        if self.annotation_file.is_some() {
            set.insert(UaiComponent::AnnotationFile);
        }
        if self.hit_number.is_some() {
            set.insert(UaiComponent::HitNumber);
        }
        if self.feature_id.is_some() {
            set.insert(UaiComponent::FeatureId);
        }
        if self.feature_table.is_some() {
            set.insert(UaiComponent::FeatureTable);
        }
        set
    }

    /// Render the string form:
    /// `mzspec:<collection>:<run>[:scan:<scan>][:annot:<file>:<hit>][:feature:<id>:ftable:<table>]`.
    ///
    /// The collection and run slots are always written (empty when absent);
    /// the tagged groups appear only when at least one of their members is
    /// present. `:` and `%` inside component values are escaped as `%3A` and
    /// `%25`.
    pub fn serialize(&self) -> String {
        fn esc(s: &str) -> String {
            s.replace('%', "%25").replace(':', "%3A")
        }
        let mut out = String::from("mzspec:");
        out.push_str(&esc(self.collection_id.as_deref().unwrap_or("")));
        out.push(':');
        out.push_str(&esc(self.mzml.as_deref().unwrap_or("")));
        if let Some(scan) = &self.scan {
            out.push_str(":scan:");
            out.push_str(&esc(scan));
        }
        if self.annotation_file.is_some() || self.hit_number.is_some() {
            out.push_str(":annot:");
            out.push_str(&esc(self.annotation_file.as_deref().unwrap_or("")));
            out.push(':');
            if let Some(hit) = self.hit_number {
                out.push_str(&hit.to_string());
            }
        }
        if self.feature_id.is_some() || self.feature_table.is_some() {
            out.push_str(":feature:");
            out.push_str(&esc(self.feature_id.as_deref().unwrap_or("")));
            out.push_str(":ftable:");
            out.push_str(&esc(self.feature_table.as_deref().unwrap_or("")));
        }
        out
    }

    /// Parse the string form produced by [`Uai::serialize`]. Unknown tags,
    /// truncated groups, stray segments, and invalid escapes are rejected
    /// with the byte position of the offending segment.
    pub fn parse(input: &str) -> Result<Self, IdentError> {
        const SCHEME: &str = "mzspec:";
        let rest = input.strip_prefix(SCHEME).ok_or_else(|| {
            malformed(input, 0, "expected the `mzspec:` scheme".to_owned())
        })?;

        let mut segs: Vec<(usize, &str)> = Vec::new();
        let mut offset = SCHEME.len();
        for seg in rest.split(':') {
            segs.push((offset, seg));
            offset += seg.len() + 1;
        }
        if segs.len() < 2 {
            return Err(malformed(
                input,
                input.len(),
                "expected `<collection>:<run>` after the scheme".to_owned(),
            ));
        }

        let mut b = Uai::builder();
        let (o, s) = segs[0];
        if !s.is_empty() {
            b = b.collection_id(unescape(input, o, s)?);
        }
        let (o, s) = segs[1];
        if !s.is_empty() {
            b = b.mzml(unescape(input, o, s)?);
        }

        let mut i = 2;
        if i < segs.len() && segs[i].1 == "scan" {
            let (ov, sv) = *segs.get(i + 1).ok_or_else(|| {
                malformed(input, input.len(), "`scan` tag without a value".to_owned())
            })?;
            if sv.is_empty() {
                return Err(malformed(input, ov, "`scan` tag with an empty value".to_owned()));
            }
            b = b.scan(unescape(input, ov, sv)?);
            i += 2;
        }
        if i < segs.len() && segs[i].1 == "annot" {
            if i + 2 >= segs.len() {
                return Err(malformed(
                    input,
                    segs[i].0,
                    "`annot` group must be `annot:<file>:<hit>`".to_owned(),
                ));
            }
            let (of, sf) = segs[i + 1];
            let (oh, sh) = segs[i + 2];
            if sf.is_empty() && sh.is_empty() {
                return Err(malformed(input, of, "`annot` group with no members".to_owned()));
            }
            if !sf.is_empty() {
                b = b.annotation_file(unescape(input, of, sf)?);
            }
            if !sh.is_empty() {
                let n: u64 = sh.parse().map_err(|_| {
                    malformed(input, oh, "hit number is not a positive integer".to_owned())
                })?;
                if n == 0 {
                    return Err(malformed(
                        input,
                        oh,
                        "hit number is not a positive integer".to_owned(),
                    ));
                }
                b = b.hit_number(n);
            }
            i += 3;
        }
        if i < segs.len() && segs[i].1 == "feature" {
            if i + 3 >= segs.len() || segs[i + 2].1 != "ftable" {
                return Err(malformed(
                    input,
                    segs[i].0,
                    "`feature` group must be `feature:<id>:ftable:<table>`".to_owned(),
                ));
            }
            let (ofid, sfid) = segs[i + 1];
            let (oft, sft) = segs[i + 3];
            if sfid.is_empty() && sft.is_empty() {
                return Err(malformed(input, ofid, "`feature` group with no members".to_owned()));
            }
            if !sfid.is_empty() {
                b = b.feature_id(unescape(input, ofid, sfid)?);
            }
            if !sft.is_empty() {
                b = b.feature_table(unescape(input, oft, sft)?);
            }
            i += 4;
        }
        if i != segs.len() {
            let (o, s) = segs[i];
            return Err(malformed(input, o, format!("unexpected segment `{s}`")));
        }
        b.build()
    }

    /// Compare two identifiers component-wise: the components present on both
    /// sides with equal values, or the first conflicting component.
    pub fn shared_components(&self, other: &Uai) -> Overlap {
        let mut shared = BTreeSet::new();
        macro_rules! cmp {
            ($field:ident, $component:expr) => {
                match (&self.$field, &other.$field) {
                    (Some(a), Some(b)) if a == b => {
                        shared.insert($component);
                    }
                    (Some(_), Some(_)) => return Overlap::Conflict($component),
                    _ => {}
                }
            };
        }
        cmp!(collection_id, UaiComponent::CollectionId);
        cmp!(mzml, UaiComponent::Mzml);
        cmp!(scan, UaiComponent::Scan);
        cmp!(annotation_file, UaiComponent::AnnotationFile);
        cmp!(hit_number, UaiComponent::HitNumber);
        cmp!(feature_id, UaiComponent::FeatureId);
        cmp!(feature_table, UaiComponent::FeatureTable);
        Overlap::Shared(shared)
    }

    /// Enforce the molecular-networking context rule: exported annotations
    /// keep only their best hit, so a hit number other than 1 means the
    /// record was misread.
    pub fn validate_gnps_context(&self) -> Result<(), IdentError> {
        match self.hit_number() {
            Some(n) if n != 1 => Err(IdentError::GnpsHitNumber(n)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Uai {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn malformed(input: &str, position: usize, reason: String) -> IdentError {
    IdentError::MalformedUai {
        input: input.to_owned(),
        position,
        reason,
    }
}

fn unescape(input: &str, offset: usize, seg: &str) -> Result<String, IdentError> {
    let bytes = seg.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let code = seg.get(i + 1..i + 3).ok_or_else(|| {
                malformed(input, offset + i, "truncated escape sequence".to_owned())
            })?;
            match code {
                "25" => out.push(b'%'),
                "3A" => out.push(b':'),
                _ => {
                    return Err(malformed(
                        input,
                        offset + i,
                        format!("unknown escape `%{code}` (only %25 and %3A are defined)"),
                    ))
                }
            }
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    // Only ASCII byte triplets were rewritten, so UTF-8 validity is preserved.
    Ok(String::from_utf8(out).expect("unescaping preserves UTF-8"))
}
