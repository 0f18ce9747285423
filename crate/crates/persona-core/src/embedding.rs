//! Unit-vector embedding table and similarity primitives.
//!
//! All stored vectors are L2-normalized on insert, so cosine similarity
//! reduces to a dot product. The table backs cohesion scoring, the
//! clustering baseline, and ranking evaluation. Fetching vectors from a
//! service goes through the [`EmbeddingClient`] trait; the HTTP
//! implementation (and the on-disk cache) live in the pipeline crate, while
//! this module owns the invariants: unit norms, consistent dimensions, and
//! order-stable batch results.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{IntentMemory, Persona};
use crate::mathx;

/// How far a stored norm may drift from 1.0.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Text convention for embedding one intent memory.
pub fn memory_text(m: &IntentMemory) -> String {
    alloc::format!("{}: {}", m.label, m.description)
}

/// Text convention for embedding a persona for ranking: the label followed
/// by its descriptions, newline-joined.
pub fn persona_text(p: &Persona) -> String {
    let mut out = p.label.clone();
    for d in &p.descriptions {
        out.push('\n');
        out.push_str(d);
    }
    out
}

/// Errors from table construction and batch embedding.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("no embedding records provided")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got} for key '{key}'")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        key: String,
    },
    #[error("zero-norm vector for key '{key}'")]
    ZeroNorm { key: String },
    #[error("duplicate key '{key}'")]
    DuplicateKey { key: String },
    #[error("request keys and texts differ in length ({keys} vs {texts})")]
    UnevenRequest { keys: usize, texts: usize },
    #[error("embedding service returned {got} vectors for {expected} texts")]
    Cardinality { expected: usize, got: usize },
    #[error("no embedding stored for key '{key}'")]
    MissingKey { key: String },
    #[error("embedding transport failed: {message}")]
    Transport { message: String },
}

/// An immutable map from text key to unit vector, all of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Build a table from `(key, vector)` records. The dimension is
    /// inferred from the first record; every vector is re-normalized to
    /// unit length. Errors on an empty input, a dimension mismatch, a
    /// zero-norm vector, or a repeated key.
    pub fn from_records(
        records: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, EmbedError> {
        let mut dim = None;
        let mut entries = BTreeMap::new();
        for (key, vec) in records {
            let d = *dim.get_or_insert(vec.len());
            if vec.len() != d {
                return Err(EmbedError::DimensionMismatch {
                    expected: d,
                    got: vec.len(),
                    key,
                });
            }
            let unit = normalize(&vec).ok_or(EmbedError::ZeroNorm { key: key.clone() })?;
            if entries.insert(key.clone(), unit).is_some() {
                return Err(EmbedError::DuplicateKey { key });
            }
        }
        match dim {
            None => Err(EmbedError::Empty),
            Some(dim) => Ok(EmbeddingTable { dim, entries }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(|v| v.as_slice())
    }

    /// Like [`get`](Self::get) but with a typed missing-key error.
    pub fn require(&self, key: &str) -> Result<&[f64], EmbedError> {
        self.get(key).ok_or_else(|| EmbedError::MissingKey {
            key: String::from(key),
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Cosine similarity between two stored keys.
    pub fn cosine_between(&self, a: &str, b: &str) -> Result<f64, EmbedError> {
        Ok(cosine(self.require(a)?, self.require(b)?))
    }

    /// Merge another table into this one (same dimension required);
    /// existing keys keep their vectors.
    pub fn absorb(&mut self, other: EmbeddingTable) -> Result<(), EmbedError> {
        if other.dim != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
                key: String::new(),
            });
        }
        for (k, v) in other.entries {
            self.entries.entry(k).or_insert(v);
        }
        Ok(())
    }
}

/// Scale a vector to unit length; `None` for (near-)zero norms.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = mathx::norm(v);
    if n <= f64::EPSILON {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity of two equal-length vectors. For unit vectors this is
/// the plain dot product; general vectors are normalized by their norms.
/// Zero-norm inputs yield 0.0 (callers that must reject them should
/// normalize first).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len(), "cosine of mismatched dimensions");
    let na = mathx::norm(a);
    let nb = mathx::norm(b);
    if na <= f64::EPSILON || nb <= f64::EPSILON {
        return 0.0;
    }
    mathx::dot(a, b) / (na * nb)
}

/// A batch request: parallel lists of cache keys and the texts to embed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub keys: Vec<String>,
    pub texts: Vec<String>,
}

impl EmbeddingRequest {
    /// Validate lengths and key uniqueness.
    pub fn new(keys: Vec<String>, texts: Vec<String>) -> Result<Self, EmbedError> {
        if keys.len() != texts.len() {
            return Err(EmbedError::UnevenRequest {
                keys: keys.len(),
                texts: texts.len(),
            });
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for k in &keys {
            if !seen.insert(k.as_str()) {
                return Err(EmbedError::DuplicateKey { key: k.clone() });
            }
        }
        Ok(EmbeddingRequest { keys, texts })
    }
}

/// A source of raw embedding vectors: one vector per input text, in input
/// order. Implementations decide batching, retries, and transport.
pub trait EmbeddingClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Embed a batch of texts into a fresh table.
///
/// The result is keyed by `req.keys`, order-independent of how the client
/// produced the vectors (it must return them in input order). Errors on a
/// cardinality mismatch between texts and returned vectors.
pub fn embed_batch(
    req: &EmbeddingRequest,
    client: &dyn EmbeddingClient,
) -> Result<EmbeddingTable, EmbedError> {
    let vectors = client.embed(&req.texts)?;
    if vectors.len() != req.texts.len() {
        return Err(EmbedError::Cardinality {
            expected: req.texts.len(),
            got: vectors.len(),
        });
    }
    EmbeddingTable::from_records(req.keys.iter().cloned().zip(vectors))
}
