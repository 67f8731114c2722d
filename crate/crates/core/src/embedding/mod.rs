//! Embedding sets: validated containers, normalization and source/target
//! pairing for adapter training.

mod codec;
mod csv_io;

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub use codec::{
    decode_embeddings, decode_pairs, encode_embeddings, encode_pairs, read_embeddings, read_pairs,
    write_embeddings, write_pairs, EMBEDDING_MAGIC, EMBEDDING_VERSION, PAIRS_MAGIC, PAIRS_VERSION,
};
pub use csv_io::{read_embeddings_csv, write_embeddings_csv};

/// Identifies one image: `(subject_id, sample_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleKey {
    pub subject_id: String,
    pub sample_id: String,
}

impl SampleKey {
    pub fn new(subject_id: impl Into<String>, sample_id: impl Into<String>) -> Self {
        Self { subject_id: subject_id.into(), sample_id: sample_id.into() }
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.subject_id, self.sample_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub key: SampleKey,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(subject_id: impl Into<String>, sample_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self { key: SampleKey::new(subject_id, sample_id), vector }
    }
}

/// Embeddings of one extractor model. Immutable once constructed; the
/// constructor enforces finite components, a common dimension and unique keys.
#[derive(Clone)]
pub struct EmbeddingSet {
    model_id: String,
    dim: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<SampleKey, usize>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id && self.dim == other.dim && self.records == other.records
    }
}

impl fmt::Debug for EmbeddingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingSet")
            .field("model_id", &self.model_id)
            .field("dim", &self.dim)
            .field("len", &self.records.len())
            .finish()
    }
}

impl EmbeddingSet {
    pub fn new(model_id: impl Into<String>, dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let model_id = model_id.into();
        if model_id.is_empty() {
            return Err(Error::validation("model_id must be non-empty"));
        }
        if dim == 0 {
            return Err(Error::validation("embedding dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::validation(format!(
                    "record {} has dimension {}, set dimension is {dim}",
                    r.key,
                    r.vector.len()
                )));
            }
            if let Some(j) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!("record {} has non-finite component e{j}", r.key)));
            }
            if index.insert(r.key.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate key {} in set {model_id}", r.key)));
            }
        }
        Ok(Self { model_id, dim, records, index })
    }

    pub fn empty(model_id: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new(model_id, dim, Vec::new())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &SampleKey) -> Option<&EmbeddingRecord> {
        self.index.get(key).map(|&i| &self.records[i])
    }

    pub fn contains(&self, key: &SampleKey) -> bool {
        self.index.contains_key(key)
    }

    /// Same records under a different provenance label.
    pub fn relabeled(&self, model_id: impl Into<String>) -> Result<Self> {
        Self::new(model_id, self.dim, self.records.clone())
    }

    /// Records as rows of an `N × dim` matrix.
    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        rows_to_matrix(self.records.iter().map(|r| r.vector.as_slice()), self.records.len(), self.dim)
    }
}

pub(crate) fn rows_to_matrix<'a, T: Scalar>(
    rows: impl Iterator<Item = &'a [f32]>,
    n: usize,
    dim: usize,
) -> Matrix<T> {
    let mut data = Vec::with_capacity(n * dim);
    for row in rows {
        data.extend(row.iter().map(|&v| T::from_stored(v)));
    }
    Matrix::from_vec(n, dim, data)
}

/// Scales every vector to unit Euclidean norm (accumulating in f64).
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut records = Vec::with_capacity(set.len());
    for r in set.records() {
        records.push(EmbeddingRecord { key: r.key.clone(), vector: unit_vector(&r.vector, &r.key)? });
    }
    EmbeddingSet::new(set.model_id(), set.dim(), records)
}

pub(crate) fn unit_vector(v: &[f32], key: &SampleKey) -> Result<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateInput(format!("vector {key} has zero norm")));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub key: SampleKey,
    pub source: Vec<f32>,
    pub target: Vec<f32>,
}

/// Aligned (source, target) embeddings of the same images; adapter training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEmbeddings {
    source_model_id: String,
    target_model_id: String,
    dim_source: usize,
    dim_target: usize,
    pairs: Vec<EmbeddingPair>,
}

impl PairedEmbeddings {
    pub fn new(
        source_model_id: impl Into<String>,
        target_model_id: impl Into<String>,
        dim_source: usize,
        dim_target: usize,
        pairs: Vec<EmbeddingPair>,
    ) -> Result<Self> {
        let source_model_id = source_model_id.into();
        let target_model_id = target_model_id.into();
        if source_model_id.is_empty() || target_model_id.is_empty() {
            return Err(Error::validation("model ids must be non-empty"));
        }
        if dim_source == 0 || dim_target == 0 {
            return Err(Error::validation("pair dimensions must be positive"));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyPairing);
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if p.source.len() != dim_source || p.target.len() != dim_target {
                return Err(Error::validation(format!(
                    "pair {} has dims {}→{}, expected {dim_source}→{dim_target}",
                    p.key,
                    p.source.len(),
                    p.target.len()
                )));
            }
            if p.source.iter().chain(&p.target).any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("pair {} has a non-finite component", p.key)));
            }
            if !seen.insert(&p.key) {
                return Err(Error::validation(format!("duplicate pair key {}", p.key)));
            }
        }
        Ok(Self { source_model_id, target_model_id, dim_source, dim_target, pairs })
    }

    pub fn source_model_id(&self) -> &str {
        &self.source_model_id
    }

    pub fn target_model_id(&self) -> &str {
        &self.target_model_id
    }

    pub fn dim_source(&self) -> usize {
        self.dim_source
    }

    pub fn dim_target(&self) -> usize {
        self.dim_target
    }

    pub fn pairs(&self) -> &[EmbeddingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The first `n` pairs.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::validation(format!("prefix size {n} outside 1..={}", self.len())));
        }
        Self::new(
            self.source_model_id.clone(),
            self.target_model_id.clone(),
            self.dim_source,
            self.dim_target,
            self.pairs[..n].to_vec(),
        )
    }

    /// Seeded permutation of the pairs.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut pairs = self.pairs.clone();
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { pairs, ..self.clone() }
    }

    /// Source and target swapped.
    pub fn swapped(&self) -> Self {
        Self {
            source_model_id: self.target_model_id.clone(),
            target_model_id: self.source_model_id.clone(),
            dim_source: self.dim_target,
            dim_target: self.dim_source,
            pairs: self
                .pairs
                .iter()
                .map(|p| EmbeddingPair { key: p.key.clone(), source: p.target.clone(), target: p.source.clone() })
                .collect(),
        }
    }

    /// L2-normalizes the source side of every pair.
    pub fn with_normalized_sources(&self) -> Result<Self> {
        let pairs = self
            .pairs
            .iter()
            .map(|p| Ok(EmbeddingPair { key: p.key.clone(), source: unit_vector(&p.source, &p.key)?, target: p.target.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs, ..self.clone() })
    }

    pub fn source_matrix<T: Scalar>(&self) -> Matrix<T> {
        rows_to_matrix(self.pairs.iter().map(|p| p.source.as_slice()), self.len(), self.dim_source)
    }

    pub fn target_matrix<T: Scalar>(&self) -> Matrix<T> {
        rows_to_matrix(self.pairs.iter().map(|p| p.target.as_slice()), self.len(), self.dim_target)
    }

    /// The source side as an embedding set.
    pub fn source_set(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::new(
            self.source_model_id.clone(),
            self.dim_source,
            self.pairs.iter().map(|p| EmbeddingRecord { key: p.key.clone(), vector: p.source.clone() }).collect(),
        )
    }

    pub fn target_set(&self) -> Result<EmbeddingSet> {
        self.swapped().source_set()
    }
}

/// Joins two sets on `(subject_id, sample_id)`, keeping source order.
pub fn pair(source: &EmbeddingSet, target: &EmbeddingSet) -> Result<PairedEmbeddings> {
    let pairs: Vec<EmbeddingPair> = source
        .records()
        .iter()
        .filter_map(|r| {
            target.get(&r.key).map(|t| EmbeddingPair {
                key: r.key.clone(),
                source: r.vector.clone(),
                target: t.vector.clone(),
            })
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyPairing);
    }
    PairedEmbeddings::new(source.model_id(), target.model_id(), source.dim(), target.dim(), pairs)
}
