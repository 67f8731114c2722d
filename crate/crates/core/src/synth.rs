//! Desk-scale synthetic world: latent identities, stand-in feature extractors
//! and a simulated generate-then-re-embed reconstruction channel.
//!
//! A synthetic extractor maps a latent identity `z ∈ ℝᵏ` to
//! `normalize(φ(A·z) + ε)` with `A` a `D×k` matrix with orthonormal columns,
//! `φ(x) = x + γ·tanh(x)` element-wise and `ε ~ N(0, σ_s²·I)` per image.
//!
//! The reconstruction channel estimates the latent from a foundation-space
//! embedding with `ẑ = A_fmᵀ·e` (the nonlinearity is *not* inverted, which
//! leaves a systematic reconstruction error), perturbs it with generation
//! noise `η ~ N(0, σ_g²·I)` and re-embeds it with the target extractor.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::{EmbeddingRecord, EmbeddingSet, SampleKey};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_columns, Matrix};
use crate::seed;

/// Stand-in names echoing the six recognition backbones of the reference
/// evaluation; further models get numbered names.
pub const MODEL_NAMES: [&str; 6] = [
    "synth-arcface",
    "synth-elasticface",
    "synth-attentionnet",
    "synth-hrnet",
    "synth-repvgg",
    "synth-swin",
];

pub const FOUNDATION_MODEL_ID: &str = "synth-fm";

/// Latent identities drawn i.i.d. from a standard Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityPopulation {
    latent_dim: usize,
    identities: Vec<(String, Vec<f64>)>,
    seed: u64,
}

impl IdentityPopulation {
    /// `count` identities named `{prefix}-{index:05}`.
    pub fn generate(prefix: &str, count: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::validation("latent_dim must be positive"));
        }
        let identities = (0..count)
            .map(|i| {
                let mut rng = seed::stream(seed, "latent", i as u64);
                let z = (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect();
                (format!("{prefix}-{i:05}"), z)
            })
            .collect();
        Ok(Self { latent_dim, identities, seed })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn identities(&self) -> &[(String, Vec<f64>)] {
        &self.identities
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn latent_matrix(&self) -> Matrix<f64> {
        let mut data = Vec::with_capacity(self.len() * self.latent_dim);
        for (_, z) in &self.identities {
            data.extend_from_slice(z);
        }
        Matrix::from_vec(self.len(), self.latent_dim, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    model_id: String,
    /// `D × k`, orthonormal columns.
    projection: Matrix<f64>,
    gamma: f64,
    sample_noise: f64,
    seed: u64,
}

impl SyntheticModel {
    /// Draws the projection by orthonormalizing a seeded Gaussian matrix.
    pub fn generate(
        model_id: impl Into<String>,
        dim: usize,
        latent_dim: usize,
        gamma: f64,
        sample_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 || dim < latent_dim {
            return Err(Error::validation(format!("need 0 < latent_dim <= dim, got k={latent_dim}, D={dim}")));
        }
        let mut rng = seed::stream(seed, "projection", 0);
        let gaussian = Matrix::from_fn(dim, latent_dim, |_, _| rng.sample(StandardNormal));
        let projection = orthonormalize_columns(&gaussian)
            .map_err(|_| Error::validation("random projection was rank-deficient"))?;
        Self::with_projection(model_id, projection, gamma, sample_noise, seed)
    }

    pub fn with_projection(
        model_id: impl Into<String>,
        projection: Matrix<f64>,
        gamma: f64,
        sample_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let model_id = model_id.into();
        if model_id.is_empty() {
            return Err(Error::validation("model_id must be non-empty"));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) || !(sample_noise >= 0.0 && sample_noise.is_finite()) {
            return Err(Error::validation("gamma and sample_noise must be finite and >= 0"));
        }
        if projection.cols() == 0 || projection.rows() < projection.cols() {
            return Err(Error::validation("projection must be D×k with D >= k > 0"));
        }
        let gram = projection.t_matmul(&projection);
        if gram.sub(&Matrix::identity(projection.cols())).max_abs() > 1e-6 {
            return Err(Error::validation("projection columns are not orthonormal"));
        }
        Ok(Self { model_id, projection, gamma, sample_noise, seed })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn projection(&self) -> &Matrix<f64> {
        &self.projection
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sample_noise(&self) -> f64 {
        self.sample_noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `φ(A·z)` for each row of `latents` (rows × k) → rows × D.
    fn features(&self, latents: &Matrix<f64>) -> Matrix<f64> {
        let mut f = latents.matmul_t(&self.projection);
        if self.gamma != 0.0 {
            f.as_mut_slice().iter_mut().for_each(|x| *x += self.gamma * x.tanh());
        }
        f
    }
}

fn unit_f32(v: &[f64], key: &SampleKey) -> Result<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateInput(format!("synthetic feature {key} has zero norm")));
    }
    Ok(v.iter().map(|x| (x / norm) as f32).collect())
}

/// Embeddings of every identity, `samples_per_id` images each; sample ids are
/// `"0"`, `"1"`, …. Noise is derived per (model, population, subject, sample),
/// so the output does not depend on record order.
pub fn embed(model: &SyntheticModel, population: &IdentityPopulation, samples_per_id: usize) -> Result<EmbeddingSet> {
    if model.latent_dim() != population.latent_dim() {
        return Err(Error::validation(format!(
            "model {} expects latent dim {}, population has {}",
            model.model_id,
            model.latent_dim(),
            population.latent_dim()
        )));
    }
    if samples_per_id == 0 {
        return Err(Error::validation("samples_per_id must be positive"));
    }
    let features = model.features(&population.latent_matrix());
    let noise_base = seed::derive(model.seed, "sample-noise", population.seed());
    let mut records = Vec::with_capacity(population.len() * samples_per_id);
    let mut buf = vec![0.0f64; model.dim()];
    for (i, (subject, _)) in population.identities().iter().enumerate() {
        for j in 0..samples_per_id {
            let key = SampleKey::new(subject.clone(), j.to_string());
            buf.copy_from_slice(features.row(i));
            if model.sample_noise > 0.0 {
                let mut rng = seed::stream(noise_base, subject, j as u64);
                for v in buf.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v += model.sample_noise * e;
                }
            }
            let vector = unit_f32(&buf, &key)?;
            records.push(EmbeddingRecord { key, vector });
        }
    }
    EmbeddingSet::new(model.model_id.clone(), model.dim(), records)
}

/// Stand-in for "generate a face from a foundation-space embedding, then
/// extract it with the target model".
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionChannel {
    pub fm_model: SyntheticModel,
    pub generation_noise: f64,
    pub seed: u64,
}

impl ReconstructionChannel {
    pub fn new(fm_model: SyntheticModel, generation_noise: f64, seed: u64) -> Result<Self> {
        if !(generation_noise >= 0.0 && generation_noise.is_finite()) {
            return Err(Error::validation("generation_noise must be finite and >= 0"));
        }
        Ok(Self { fm_model, generation_noise, seed })
    }
}

/// Reconstructs target-space embeddings from translated (foundation-space)
/// embeddings. Keys are preserved; the output model id is the target's.
pub fn simulate_reconstruction(
    translated: &EmbeddingSet,
    channel: &ReconstructionChannel,
    target: &SyntheticModel,
) -> Result<EmbeddingSet> {
    let fm = &channel.fm_model;
    if translated.dim() != fm.dim() {
        return Err(Error::validation(format!(
            "translated set has dim {}, foundation model has {}",
            translated.dim(),
            fm.dim()
        )));
    }
    if target.latent_dim() != fm.latent_dim() {
        return Err(Error::validation("target and foundation models disagree on latent dim"));
    }
    if translated.is_empty() {
        return EmbeddingSet::empty(target.model_id.clone(), target.dim());
    }
    let e = translated.to_matrix::<f64>();
    // ẑ = A_fmᵀ·e for every row
    let mut latents = e.matmul(&fm.projection);
    if channel.generation_noise > 0.0 {
        let base = seed::derive(channel.seed, "generation-noise", 0);
        for (i, r) in translated.records().iter().enumerate() {
            let mut rng = seed::stream(base, &format!("{}\u{1f}{}", r.key.subject_id, r.key.sample_id), 0);
            for v in latents.row_mut(i) {
                let n: f64 = rng.sample(StandardNormal);
                *v += channel.generation_noise * n;
            }
        }
    }
    let features = target.features(&latents);
    let records = translated
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| Ok(EmbeddingRecord { key: r.key.clone(), vector: unit_f32(features.row(i), &r.key)? }))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(target.model_id.clone(), target.dim(), records)
}

/// Parameters of a synthetic world. Persisted as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub latent_dim: usize,
    pub dim: usize,
    /// Enrolled test identities.
    pub identities: usize,
    pub samples_per_id: usize,
    pub gamma: f64,
    pub sample_noise: f64,
    pub generation_noise: f64,
    pub models: usize,
    /// Unlabeled images available for adapter training.
    pub train_images: usize,
    /// Unlabeled images held out for adapter validation.
    pub heldout_images: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            dim: 512,
            identities: 300,
            samples_per_id: 2,
            gamma: 0.2,
            sample_noise: 0.3,
            generation_noise: 0.2,
            models: 6,
            train_images: 5000,
            heldout_images: 1000,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("latent_dim", self.latent_dim),
            ("dim", self.dim),
            ("identities", self.identities),
            ("samples_per_id", self.samples_per_id),
            ("models", self.models),
            ("train_images", self.train_images),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("world config: {name} must be positive")));
        }
        if self.dim < self.latent_dim {
            return Err(Error::validation(format!(
                "world config: dim ({}) must be >= latent_dim ({})",
                self.dim, self.latent_dim
            )));
        }
        for (name, v) in [("gamma", self.gamma), ("sample_noise", self.sample_noise), ("generation_noise", self.generation_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("world config: {name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl fmt::Display for WorldConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "latent_dim = {}", self.latent_dim)?;
        writeln!(f, "dim = {}", self.dim)?;
        writeln!(f, "identities = {}", self.identities)?;
        writeln!(f, "samples_per_id = {}", self.samples_per_id)?;
        writeln!(f, "gamma = {}", self.gamma)?;
        writeln!(f, "sample_noise = {}", self.sample_noise)?;
        writeln!(f, "generation_noise = {}", self.generation_noise)?;
        writeln!(f, "models = {}", self.models)?;
        writeln!(f, "train_images = {}", self.train_images)?;
        writeln!(f, "heldout_images = {}", self.heldout_images)?;
        writeln!(f, "seed = {}", self.seed)
    }
}

impl FromStr for WorldConfig {
    type Err = Error;

    /// Unknown keys are errors; missing keys keep their defaults.
    fn from_str(text: &str) -> Result<Self> {
        fn num<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
            v.parse().map_err(|_| Error::format(format!("world config line {line}: bad value {v:?} for {key}")))
        }
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("world config line {}: expected key = value", i + 1)))?;
            let (key, value, n) = (key.trim(), value.trim(), i + 1);
            match key {
                "latent_dim" => c.latent_dim = num(key, value, n)?,
                "dim" => c.dim = num(key, value, n)?,
                "identities" => c.identities = num(key, value, n)?,
                "samples_per_id" => c.samples_per_id = num(key, value, n)?,
                "gamma" => c.gamma = num(key, value, n)?,
                "sample_noise" => c.sample_noise = num(key, value, n)?,
                "generation_noise" => c.generation_noise = num(key, value, n)?,
                "models" => c.models = num(key, value, n)?,
                "train_images" => c.train_images = num(key, value, n)?,
                "heldout_images" => c.heldout_images = num(key, value, n)?,
                "seed" => c.seed = num(key, value, n)?,
                other => return Err(Error::format(format!("world config line {n}: unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// A reproducible bundle of populations, extractors and the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    /// Enrolled identities the attacks target.
    pub population: IdentityPopulation,
    /// Unlabeled images for adapter training (one sample each).
    pub train_population: IdentityPopulation,
    pub heldout_population: IdentityPopulation,
    /// Victim/target extractors.
    pub models: Vec<SyntheticModel>,
    pub channel: ReconstructionChannel,
}

pub fn model_name(index: usize) -> String {
    MODEL_NAMES.get(index).map_or_else(|| format!("synth-model-{index}"), |s| (*s).to_string())
}

pub fn make_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let s = config.seed;
    let k = config.latent_dim;
    let population = IdentityPopulation::generate("id", config.identities, k, seed::derive(s, "population", 0))?;
    let train_population = IdentityPopulation::generate("train", config.train_images, k, seed::derive(s, "train-population", 0))?;
    let heldout_population =
        IdentityPopulation::generate("heldout", config.heldout_images, k, seed::derive(s, "heldout-population", 0))?;
    let models = (0..config.models)
        .map(|i| {
            SyntheticModel::generate(model_name(i), config.dim, k, config.gamma, config.sample_noise, seed::derive(s, "model", i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let fm = SyntheticModel::generate(FOUNDATION_MODEL_ID, config.dim, k, config.gamma, config.sample_noise, seed::derive(s, "fm", 0))?;
    let channel = ReconstructionChannel::new(fm, config.generation_noise, seed::derive(s, "channel", 0))?;
    Ok(World { config: config.clone(), population, train_population, heldout_population, models, channel })
}

impl World {
    pub fn model(&self, index: usize) -> Result<&SyntheticModel> {
        self.models
            .get(index)
            .ok_or_else(|| Error::validation(format!("world has {} models, index {index} requested", self.models.len())))
    }

    pub fn fm_model(&self) -> &SyntheticModel {
        &self.channel.fm_model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cosine_f32;

    fn small() -> WorldConfig {
        WorldConfig { latent_dim: 8, dim: 32, identities: 10, train_images: 50, heldout_images: 10, ..WorldConfig::default() }
    }

    #[test]
    fn projections_are_orthonormal() {
        let w = make_world(&small()).unwrap();
        for m in w.models.iter().chain([w.fm_model()]) {
            let gram = m.projection().t_matmul(m.projection());
            assert!(gram.sub(&Matrix::identity(8)).max_abs() <= 1e-6);
        }
    }

    #[test]
    fn noiseless_embedding_is_normalized_projection() {
        let pop = IdentityPopulation::generate("p", 3, 4, 1).unwrap();
        let m = SyntheticModel::generate("m", 16, 4, 0.0, 0.0, 2).unwrap();
        let e = embed(&m, &pop, 1).unwrap();
        for (r, (_, z)) in e.records().iter().zip(pop.identities()) {
            let az: Vec<f64> = (0..16).map(|i| (0..4).map(|j| m.projection().get(i, j) * z[j]).sum()).collect();
            let norm = az.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in r.vector.iter().zip(&az) {
                assert!((f64::from(*a) - b / norm).abs() < 1e-6);
            }
            assert!((cosine_f32(&r.vector, &r.vector).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_noise_separates_samples() {
        let pop = IdentityPopulation::generate("p", 2, 4, 1).unwrap();
        let m = SyntheticModel::generate("m", 16, 4, 0.2, 0.1, 2).unwrap();
        let e = embed(&m, &pop, 2).unwrap();
        let a = &e.records()[0].vector;
        let b = &e.records()[1].vector;
        assert_ne!(a, b);
        assert!(cosine_f32(a, b).unwrap() < 1.0);
    }

    #[test]
    fn shared_projection_gives_identical_embeddings() {
        let pop = IdentityPopulation::generate("p", 5, 4, 1).unwrap();
        let a = SyntheticModel::generate("a", 16, 4, 0.0, 0.0, 11).unwrap();
        let b = SyntheticModel::with_projection("b", a.projection().clone(), 0.0, 0.0, 99).unwrap();
        let ea = embed(&a, &pop, 1).unwrap();
        let eb = embed(&b, &pop, 1).unwrap();
        assert_eq!(ea.records(), eb.records());
    }

    #[test]
    fn embed_checks_latent_dim() {
        let pop = IdentityPopulation::generate("p", 2, 5, 1).unwrap();
        let m = SyntheticModel::generate("m", 16, 4, 0.0, 0.0, 2).unwrap();
        assert!(matches!(embed(&m, &pop, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn lossless_channel_recovers_embeddings() {
        let pop = IdentityPopulation::generate("p", 20, 8, 3).unwrap();
        let fm = SyntheticModel::generate("fm", 32, 8, 0.0, 0.0, 4).unwrap();
        let channel = ReconstructionChannel::new(fm.clone(), 0.0, 5).unwrap();
        let original = embed(&fm, &pop, 1).unwrap();
        let rec = simulate_reconstruction(&original, &channel, &fm).unwrap();
        for (a, b) in rec.records().iter().zip(original.records()) {
            assert_eq!(a.key, b.key);
            assert!(cosine_f32(&a.vector, &b.vector).unwrap() >= 0.999);
        }
    }

    #[test]
    fn reconstruction_checks_dims() {
        let fm = SyntheticModel::generate("fm", 32, 8, 0.0, 0.0, 4).unwrap();
        let channel = ReconstructionChannel::new(fm.clone(), 0.1, 5).unwrap();
        let wrong = EmbeddingSet::new("x", 16, vec![EmbeddingRecord::new("a", "0", vec![1.0; 16])]).unwrap();
        assert!(matches!(simulate_reconstruction(&wrong, &channel, &fm), Err(Error::Validation(_))));
    }

    #[test]
    fn world_is_deterministic() {
        assert_eq!(make_world(&small()).unwrap(), make_world(&small()).unwrap());
        assert_ne!(make_world(&small()).unwrap(), make_world(&small().with_seed(1)).unwrap());
    }

    #[test]
    fn invalid_world_configs() {
        let c = WorldConfig { dim: 4, latent_dim: 8, ..small() };
        assert!(matches!(make_world(&c), Err(Error::Validation(_))));
        let c = WorldConfig { identities: 0, ..small() };
        assert!(make_world(&c).is_err());
        let c = WorldConfig { generation_noise: -0.1, ..small() };
        assert!(make_world(&c).is_err());
    }

    #[test]
    fn adding_models_keeps_existing_draws() {
        let few = make_world(&WorldConfig { models: 2, ..small() }).unwrap();
        let many = make_world(&WorldConfig { models: 5, ..small() }).unwrap();
        assert_eq!(few.models[..], many.models[..2]);
        assert_eq!(few.channel, many.channel);
    }

    #[test]
    fn config_text_round_trip() {
        let c = WorldConfig { gamma: 0.125, seed: 42, ..WorldConfig::default() };
        assert_eq!(c.to_string().parse::<WorldConfig>().unwrap(), c);
        let parsed: WorldConfig = "# comment\n dim = 128 \nlatent_dim=16\n".parse().unwrap();
        assert_eq!((parsed.dim, parsed.latent_dim, parsed.identities), (128, 16, 300));
        assert!("bogus = 1".parse::<WorldConfig>().is_err());
        assert!("dim = x".parse::<WorldConfig>().is_err());
        assert!("dim".parse::<WorldConfig>().is_err());
    }

    #[test]
    fn default_world_shape() {
        let c = WorldConfig::default();
        assert_eq!((c.latent_dim, c.dim, c.identities, c.samples_per_id), (64, 512, 300, 2));
        assert_eq!((c.gamma, c.sample_noise, c.generation_noise, c.models), (0.2, 0.3, 0.2, 6));
    }
}
