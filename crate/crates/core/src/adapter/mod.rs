//! Linear adapter `y = W·x + b` translating one extractor's embedding space
//! into another's, fitted on paired embeddings by minimizing mean squared
//! error.
//!
//! Two solvers minimize the same objective `Σ‖W·x + b − y‖² / N`:
//!
//! * [`fit_iterative`]: minibatch Adam, the production route (learning rate
//!   `1e-3`, 20 epochs by default);
//! * [`fit_closed_form`]: the ridge-regularized normal equations solved by
//!   Cholesky, used as an exact reference.
//!
//! Both are generic over the compute precision; the fitted weights are stored
//! as `f32`, like the embeddings themselves.

mod closed_form;
mod codec;
mod iterative;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{unit_vector, EmbeddingRecord, EmbeddingSet, PairedEmbeddings};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::AdamParams;
use crate::scalar::Scalar;

pub use closed_form::fit_closed_form;
pub use codec::{decode_adapter, encode_adapter, load_adapter, save_adapter, ADAPTER_MAGIC, ADAPTER_VERSION};
pub use iterative::fit_iterative;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    /// Ridge penalty on `‖W‖²_F`, closed form only.
    pub ridge_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_bias: bool,
    /// L2-normalize source embeddings before fitting (and before applying).
    pub normalize_inputs: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Iterative,
            ridge_lambda: 0.0,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            use_bias: true,
            normalize_inputs: false,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn closed_form(ridge_lambda: f64) -> Self {
        Self { method: Method::ClosedForm, ridge_lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda >= 0.0) || !self.ridge_lambda.is_finite() {
            return Err(Error::validation(format!("ridge_lambda must be finite and >= 0, got {}", self.ridge_lambda)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { learning_rate: self.learning_rate, ..AdamParams::default() }
    }
}

/// Provenance of a fitted adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub n_pairs: usize,
    /// `Σ‖W·x + b − y‖² / N` on the training pairs, evaluated with the stored weights.
    pub final_mse: f64,
    /// Training MSE at initialization (iterative only).
    pub initial_mse: Option<f64>,
    /// Mean training loss of each epoch (iterative only).
    pub loss_history: Vec<f64>,
    pub wall_time_seconds: f64,
    pub seed: u64,
    pub ridge_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub use_bias: bool,
    pub normalize_inputs: bool,
    pub precision: Precision,
    pub heldout_mse: Option<f64>,
}

impl TrainReport {
    pub fn new(config: &TrainConfig, method: Method, n_pairs: usize, precision: Precision) -> Self {
        let adam = AdamParams::default();
        Self {
            method,
            n_pairs,
            final_mse: 0.0,
            initial_mse: None,
            loss_history: Vec::new(),
            wall_time_seconds: 0.0,
            seed: config.seed,
            ridge_lambda: config.ridge_lambda,
            learning_rate: config.learning_rate,
            epochs: config.epochs,
            batch_size: config.batch_size,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            use_bias: config.use_bias,
            normalize_inputs: config.normalize_inputs,
            precision,
            heldout_mse: None,
        }
    }
}

/// Fitted linear map from `source_model_id` space to `target_model_id` space.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    source_model_id: String,
    target_model_id: String,
    dim_source: usize,
    dim_target: usize,
    /// Row-major `dim_target × dim_source`.
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
    meta: TrainReport,
}

impl AdapterModel {
    pub fn new(
        source_model_id: impl Into<String>,
        target_model_id: impl Into<String>,
        dim_source: usize,
        dim_target: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        meta: TrainReport,
    ) -> Result<Self> {
        let source_model_id = source_model_id.into();
        let target_model_id = target_model_id.into();
        if source_model_id.is_empty() || target_model_id.is_empty() {
            return Err(Error::validation("adapter model ids must be non-empty"));
        }
        if dim_source == 0 || dim_target == 0 {
            return Err(Error::validation("adapter dimensions must be positive"));
        }
        if weights.len() != dim_source * dim_target {
            return Err(Error::validation(format!(
                "weights hold {} entries, expected {dim_target}×{dim_source}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != dim_target {
                return Err(Error::validation(format!("bias has {} entries, expected {dim_target}", b.len())));
            }
        }
        if weights.iter().chain(bias.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::validation("adapter parameters must be finite"));
        }
        Ok(Self { source_model_id, target_model_id, dim_source, dim_target, weights, bias, meta })
    }

    /// Wraps a fitted matrix `dim_target × dim_source` and optional bias.
    pub(crate) fn from_parts<T: Scalar>(
        pairs: &PairedEmbeddings,
        weights: &Matrix<T>,
        bias: Option<&[T]>,
        meta: TrainReport,
    ) -> Result<Self> {
        Self::new(
            pairs.source_model_id(),
            pairs.target_model_id(),
            pairs.dim_source(),
            pairs.dim_target(),
            weights.as_slice().iter().map(|v| v.to_stored()).collect(),
            bias.map(|b| b.iter().map(|v| v.to_stored()).collect()),
            meta,
        )
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

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn meta(&self) -> &TrainReport {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut TrainReport {
        &mut self.meta
    }

    pub fn weight_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_vec(self.dim_target, self.dim_source, self.weights.iter().map(|&v| T::from_stored(v)).collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Translates `x` (accumulating in f64). Input normalization recorded in
    /// the training metadata is applied first.
    pub fn map_vector(&self, x: &[f32]) -> Vec<f64> {
        let w = &self.weights;
        (0..self.dim_target)
            .map(|i| {
                let row = &w[i * self.dim_source..(i + 1) * self.dim_source];
                let acc: f64 = row.iter().zip(x).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                acc + self.bias.as_ref().map_or(0.0, |b| f64::from(b[i]))
            })
            .collect()
    }
}

/// Options for [`apply_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyOptions {
    /// Proceed when the set's model id differs from the adapter's source id.
    pub allow_model_mismatch: bool,
    /// L2-normalize each translated vector.
    pub normalize_output: bool,
}

/// Maps every vector of `set` through the adapter. The set must come from the
/// adapter's source model.
pub fn apply(adapter: &AdapterModel, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    apply_with(adapter, set, ApplyOptions::default())
}

pub fn apply_with(adapter: &AdapterModel, set: &EmbeddingSet, options: ApplyOptions) -> Result<EmbeddingSet> {
    if set.dim() != adapter.dim_source {
        return Err(Error::validation(format!(
            "set dimension {} does not match adapter source dimension {}",
            set.dim(),
            adapter.dim_source
        )));
    }
    if set.model_id() != adapter.source_model_id && !options.allow_model_mismatch {
        return Err(Error::validation(format!(
            "set comes from model {:?} but adapter expects {:?} (allow the mismatch explicitly to proceed)",
            set.model_id(),
            adapter.source_model_id
        )));
    }
    let inputs = if adapter.meta.normalize_inputs {
        set.records()
            .iter()
            .map(|r| Ok(EmbeddingRecord { key: r.key.clone(), vector: unit_vector(&r.vector, &r.key)? }))
            .collect::<Result<Vec<_>>>()?
    } else {
        set.records().to_vec()
    };
    let mut records = Vec::with_capacity(inputs.len());
    if !inputs.is_empty() {
        let x = crate::embedding::rows_to_matrix::<f64>(inputs.iter().map(|r| r.vector.as_slice()), inputs.len(), set.dim());
        let w = adapter.weight_matrix::<f64>();
        let mut y = x.matmul_t(&w);
        if let Some(b) = &adapter.bias {
            for i in 0..y.rows() {
                y.row_mut(i).iter_mut().zip(b).for_each(|(v, &bi)| *v += f64::from(bi));
            }
        }
        for (i, r) in inputs.into_iter().enumerate() {
            let row = y.row(i);
            let vector: Vec<f32> = if options.normalize_output {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Err(Error::DegenerateInput(format!("translated vector {} has zero norm", r.key)));
                }
                row.iter().map(|v| (v / norm) as f32).collect()
            } else {
                row.iter().map(|&v| v as f32).collect()
            };
            records.push(EmbeddingRecord { key: r.key, vector });
        }
    }
    EmbeddingSet::new(adapter.target_model_id.clone(), adapter.dim_target, records)
}

/// `Σ‖W·x + b − y‖² / N` of the adapter on `pairs`, in f64.
pub fn evaluate_mse(adapter: &AdapterModel, pairs: &PairedEmbeddings) -> Result<f64> {
    if pairs.dim_source() != adapter.dim_source || pairs.dim_target() != adapter.dim_target {
        return Err(Error::validation(format!(
            "pairs are {}→{}, adapter is {}→{}",
            pairs.dim_source(),
            pairs.dim_target(),
            adapter.dim_source,
            adapter.dim_target
        )));
    }
    let pairs = if adapter.meta.normalize_inputs { pairs.with_normalized_sources()? } else { pairs.clone() };
    let x = pairs.source_matrix::<f64>();
    let y = pairs.target_matrix::<f64>();
    let pred = x.matmul_t(&adapter.weight_matrix::<f64>());
    let mut total = 0.0;
    for i in 0..pairs.len() {
        for (j, (&p, &t)) in pred.row(i).iter().zip(y.row(i)).enumerate() {
            let r = p + adapter.bias.as_ref().map_or(0.0, |b| f64::from(b[j])) - t;
            total += r * r;
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Fits an adapter according to `config`, timing the solve.
pub fn fit(pairs: &PairedEmbeddings, config: &TrainConfig) -> Result<AdapterModel> {
    config.validate()?;
    let start = Instant::now();
    let prepared;
    let data = if config.normalize_inputs {
        prepared = pairs.with_normalized_sources()?;
        &prepared
    } else {
        pairs
    };
    let mut adapter = match (config.method, config.precision) {
        (Method::ClosedForm, Precision::F64) => fit_closed_form::<f64>(data, config.ridge_lambda, config.use_bias)?,
        (Method::ClosedForm, Precision::F32) => fit_closed_form::<f32>(data, config.ridge_lambda, config.use_bias)?,
        (Method::Iterative, Precision::F64) => fit_iterative::<f64>(data, config)?,
        (Method::Iterative, Precision::F32) => fit_iterative::<f32>(data, config)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let meta = adapter.meta_mut();
    meta.seed = config.seed;
    meta.normalize_inputs = config.normalize_inputs;
    meta.wall_time_seconds = elapsed;
    Ok(adapter)
}

/// [`fit`], then records the MSE on held-out pairs.
pub fn fit_validated(
    pairs: &PairedEmbeddings,
    validation: &PairedEmbeddings,
    config: &TrainConfig,
) -> Result<AdapterModel> {
    let mut adapter = fit(pairs, config)?;
    let heldout = evaluate_mse(&adapter, validation)?;
    adapter.meta_mut().heldout_mse = Some(heldout);
    Ok(adapter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingPair;

    fn report() -> TrainReport {
        TrainReport::new(&TrainConfig::default(), Method::ClosedForm, 1, Precision::F64)
    }

    fn set(vectors: &[Vec<f32>]) -> EmbeddingSet {
        let records = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| EmbeddingRecord::new(format!("s{i}"), "0", v.clone()))
            .collect();
        EmbeddingSet::new("victim", vectors[0].len(), records).unwrap()
    }

    #[test]
    fn default_config_matches_reference_recipe() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.epochs, 20);
        assert_eq!(c.batch_size, 128);
        assert!(c.use_bias && !c.normalize_inputs);
        assert_eq!(c.method, Method::Iterative);
    }

    #[test]
    fn zero_epochs_rejected() {
        let c = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
        let c = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { ridge_lambda: -1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn identity_adapter_is_identity() {
        let a = AdapterModel::new("victim", "fm", 3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], Some(vec![0.0; 3]), report())
            .unwrap();
        let s = set(&[vec![0.3, -0.2, 0.9], vec![1.5, 2.5, -3.5]]);
        let out = apply(&a, &s).unwrap();
        assert_eq!(out.model_id(), "fm");
        for (o, i) in out.records().iter().zip(s.records()) {
            assert_eq!(o.key, i.key);
            for (x, y) in o.vector.iter().zip(&i.vector) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn doubling_adapter() {
        let a = AdapterModel::new("victim", "fm", 2, 2, vec![2.0, 0.0, 0.0, 2.0], None, report()).unwrap();
        let out = apply(&a, &set(&[vec![1.0, -1.0]])).unwrap();
        assert_eq!(out.records()[0].vector, vec![2.0, -2.0]);
    }

    #[test]
    fn empty_set_maps_to_empty_target_set() {
        let a = AdapterModel::new("victim", "fm", 2, 3, vec![0.7; 6], Some(vec![0.1; 3]), report()).unwrap();
        let out = apply(&a, &EmbeddingSet::empty("victim", 2).unwrap()).unwrap();
        assert!(out.is_empty());
        assert_eq!((out.model_id(), out.dim()), ("fm", 3));
    }

    #[test]
    fn apply_checks_dimension_and_model() {
        let a = AdapterModel::new("victim", "fm", 2, 2, vec![1.0; 4], None, report()).unwrap();
        assert!(matches!(apply(&a, &set(&[vec![1.0, 2.0, 3.0]])), Err(Error::Validation(_))));
        let other = set(&[vec![1.0, 2.0]]).relabeled("someone-else").unwrap();
        assert!(matches!(apply(&a, &other), Err(Error::Validation(_))));
        let opts = ApplyOptions { allow_model_mismatch: true, ..Default::default() };
        assert_eq!(apply_with(&a, &other, opts).unwrap().len(), 1);
    }

    #[test]
    fn normalize_output_flag() {
        let a = AdapterModel::new("victim", "fm", 2, 2, vec![3.0, 0.0, 0.0, 4.0], None, report()).unwrap();
        let opts = ApplyOptions { normalize_output: true, ..Default::default() };
        let out = apply_with(&a, &set(&[vec![1.0, 1.0]]), opts).unwrap();
        assert_eq!(out.records()[0].vector, vec![0.6, 0.8]);
    }

    #[test]
    fn no_bias_adapter_is_linear() {
        let w: Vec<f32> = (0..12).map(|i| (i as f32 * 0.37).sin()).collect();
        let a = AdapterModel::new("victim", "fm", 4, 3, w, None, report()).unwrap();
        let x = vec![0.25f32, -1.5, 2.0, 0.125];
        let base = a.map_vector(&x);
        for alpha in [2.0f32, -0.5, 8.0] {
            let scaled: Vec<f32> = x.iter().map(|v| v * alpha).collect();
            for (s, b) in a.map_vector(&scaled).iter().zip(&base) {
                assert!((s - f64::from(alpha) * b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(AdapterModel::new("a", "b", 2, 2, vec![1.0; 3], None, report()).is_err());
        assert!(AdapterModel::new("a", "b", 2, 2, vec![f32::NAN; 4], None, report()).is_err());
        assert!(AdapterModel::new("a", "b", 2, 2, vec![1.0; 4], Some(vec![0.0]), report()).is_err());
    }

    #[test]
    fn evaluate_mse_by_hand() {
        let a = AdapterModel::new("victim", "fm", 1, 1, vec![2.0], Some(vec![1.0]), report()).unwrap();
        let pairs = PairedEmbeddings::new(
            "victim",
            "fm",
            1,
            1,
            vec![
                EmbeddingPair { key: crate::SampleKey::new("a", "1"), source: vec![1.0], target: vec![3.0] },
                EmbeddingPair { key: crate::SampleKey::new("a", "2"), source: vec![2.0], target: vec![3.0] },
            ],
        )
        .unwrap();
        // residuals 0 and 2 → (0 + 4) / 2
        assert_eq!(evaluate_mse(&a, &pairs).unwrap(), 2.0);
    }

    #[test]
    fn parameter_count_of_default_shape() {
        let a = AdapterModel::new("a", "b", 512, 512, vec![0.0; 512 * 512], Some(vec![0.0; 512]), report()).unwrap();
        assert_eq!(a.parameter_count(), 512 * 512 + 512);
    }
}
