//! End-to-end attack in a synthetic world:
//! leak victim templates → adapter into the foundation space → reconstruction
//! channel → target extractor → compare against the enrolled templates at an
//! operating point calibrated on bona fide target scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{apply, fit, AdapterModel, Precision, TrainConfig};
use crate::attack::{ablation_curve, evaluate_sar, AblationPoint, AttackReport, AttackRun, ReferenceMode};
use crate::embedding::{pair, EmbeddingSet, PairedEmbeddings};
use crate::error::{Error, Result};
use crate::metrics::{build_scores, calibrate_threshold, OperatingPoint};
use crate::synth::{embed, make_world, simulate_reconstruction, World, WorldConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub train: TrainConfig,
    pub target_fmr: f64,
    pub reference: ReferenceMode,
}

impl Default for AttackSettings {
    /// The production adapter recipe, computed in `f32`.
    fn default() -> Self {
        Self {
            train: TrainConfig { precision: Precision::F32, ..TrainConfig::default() },
            target_fmr: 1e-3,
            reference: ReferenceMode::SelfTemplate,
        }
    }
}

/// Victim→foundation pairs on the world's unlabeled training images.
pub fn training_pairs(world: &World, victim: usize) -> Result<PairedEmbeddings> {
    let source = embed(world.model(victim)?, &world.train_population, 1)?;
    let target = embed(world.fm_model(), &world.train_population, 1)?;
    pair(&source, &target)
}

/// Victim→foundation pairs on the held-out images, if the world has any.
pub fn heldout_pairs(world: &World, victim: usize) -> Result<Option<PairedEmbeddings>> {
    if world.heldout_population.is_empty() {
        return Ok(None);
    }
    let source = embed(world.model(victim)?, &world.heldout_population, 1)?;
    let target = embed(world.fm_model(), &world.heldout_population, 1)?;
    pair(&source, &target).map(Some)
}

/// A deployed recognition system: its enrolled templates and the operating
/// point calibrated on their bona fide scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrolledSystem {
    pub model_index: usize,
    pub enrolled: EmbeddingSet,
    pub operating_point: OperatingPoint,
}

pub fn enroll(world: &World, model_index: usize, target_fmr: f64) -> Result<EnrolledSystem> {
    let enrolled = embed(world.model(model_index)?, &world.population, world.config.samples_per_id)?;
    let scores = build_scores(&enrolled, &enrolled)?;
    let operating_point = calibrate_threshold(&scores, target_fmr)?;
    Ok(EnrolledSystem { model_index, enrolled, operating_point })
}

/// All systems of a world, enrolled once and attacked many times.
#[derive(Debug, Clone)]
pub struct SyntheticAttack<'w> {
    world: &'w World,
    systems: Vec<EnrolledSystem>,
    reference: ReferenceMode,
}

impl<'w> SyntheticAttack<'w> {
    pub fn new(world: &'w World, target_fmr: f64, reference: ReferenceMode) -> Result<Self> {
        let systems = (0..world.models.len()).map(|i| enroll(world, i, target_fmr)).collect::<Result<Vec<_>>>()?;
        Ok(Self { world, systems, reference })
    }

    pub fn world(&self) -> &World {
        self.world
    }

    pub fn system(&self, index: usize) -> Result<&EnrolledSystem> {
        self.systems
            .get(index)
            .ok_or_else(|| Error::validation(format!("world has {} models, index {index} requested", self.systems.len())))
    }

    /// The templates leaked from the victim's database.
    pub fn leaked(&self, victim: usize) -> Result<&EmbeddingSet> {
        Ok(&self.system(victim)?.enrolled)
    }

    /// Reconstructs the victim's leaked templates as seen by `target`.
    pub fn reconstruct(&self, adapter: &AdapterModel, victim: usize, target: usize) -> Result<EmbeddingSet> {
        let translated = apply(adapter, self.leaked(victim)?)?;
        simulate_reconstruction(&translated, &self.world.channel, self.world.model(target)?)
    }

    pub fn run(&self, adapter: &AdapterModel, victim: usize, target: usize) -> Result<AttackRun> {
        let system = self.system(target)?;
        let run = AttackRun {
            victim_model_id: self.world.model(victim)?.model_id().to_string(),
            target_model_id: self.world.model(target)?.model_id().to_string(),
            enrolled: system.enrolled.clone(),
            reconstructed: self.reconstruct(adapter, victim, target)?,
            operating_point: system.operating_point,
            reference: self.reference,
        };
        run.validate()?;
        Ok(run)
    }

    pub fn attack(&self, adapter: &AdapterModel, victim: usize, target: usize) -> Result<AttackReport> {
        evaluate_sar(&self.run(adapter, victim, target)?)
    }
}

/// Trains the victim→foundation adapter of a world.
pub fn train_adapter(world: &World, victim: usize, train: &TrainConfig) -> Result<AdapterModel> {
    fit(&training_pairs(world, victim)?, train)
}

/// SAR for every (victim, target) pair of one world; `sar[v][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferGrid {
    pub seed: u64,
    pub model_ids: Vec<String>,
    pub sar: Vec<Vec<f64>>,
    pub train_time_seconds: Vec<f64>,
}

pub fn transfer_grid(world: &World, settings: &AttackSettings) -> Result<TransferGrid> {
    let attack = SyntheticAttack::new(world, settings.target_fmr, settings.reference)?;
    let n = world.models.len();
    let mut sar = vec![vec![0.0; n]; n];
    let mut times = vec![0.0; n];
    for v in 0..n {
        let adapter = train_adapter(world, v, &settings.train)?;
        times[v] = adapter.meta().wall_time_seconds;
        for t in 0..n {
            sar[v][t] = attack.attack(&adapter, v, t)?.sar;
        }
    }
    Ok(TransferGrid {
        seed: world.config.seed,
        model_ids: world.models.iter().map(|m| m.model_id().to_string()).collect(),
        sar,
        train_time_seconds: times,
    })
}

/// Seed-averaged transfer grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub model_ids: Vec<String>,
    pub grids: Vec<TransferGrid>,
    /// `mean_sar[v][t]` over seeds.
    pub mean_sar: Vec<Vec<f64>>,
}

impl TransferSummary {
    /// Seed-averaged SAR into `target` from its own templates.
    pub fn same_model(&self, target: usize) -> f64 {
        self.mean_sar[target][target]
    }

    /// Seed-averaged SAR into `target` from templates of every other model.
    pub fn cross_model(&self, target: usize) -> f64 {
        let n = self.mean_sar.len();
        if n < 2 {
            return f64::NAN;
        }
        (0..n).filter(|&v| v != target).map(|v| self.mean_sar[v][target]).sum::<f64>() / (n - 1) as f64
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::validation("at least one seed is required"));
    }
    Ok(())
}

/// One world per seed; the adapter seed follows the world seed.
pub fn transfer_experiment(config: &WorldConfig, seeds: &[u64], settings: &AttackSettings) -> Result<TransferSummary> {
    check_seeds(seeds)?;
    let grids = seeds
        .par_iter()
        .map(|&s| {
            let world = make_world(&config.with_seed(s))?;
            let settings = AttackSettings { train: TrainConfig { seed: s, ..settings.train.clone() }, ..settings.clone() };
            transfer_grid(&world, &settings)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = grids[0].model_ids.len();
    let mut mean_sar = vec![vec![0.0; n]; n];
    for g in &grids {
        for v in 0..n {
            for t in 0..n {
                mean_sar[v][t] += g.sar[v][t] / grids.len() as f64;
            }
        }
    }
    Ok(TransferSummary { model_ids: grids[0].model_ids.clone(), grids, mean_sar })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub victim_model_id: String,
    pub target_model_id: String,
    pub sizes: Vec<usize>,
    /// One curve per seed.
    pub curves: Vec<Vec<AblationPoint>>,
    pub mean_sar: Vec<f64>,
    pub mean_train_time_seconds: Vec<f64>,
}

/// Training-size ablation of the `victim → target` attack over seeds.
pub fn ablation_experiment(
    config: &WorldConfig,
    seeds: &[u64],
    sizes: &[usize],
    victim: usize,
    target: usize,
    settings: &AttackSettings,
) -> Result<AblationSummary> {
    check_seeds(seeds)?;
    let curves = seeds
        .par_iter()
        .map(|&s| {
            let world = make_world(&config.with_seed(s))?;
            let attack = SyntheticAttack::new(&world, settings.target_fmr, settings.reference)?;
            let train = TrainConfig { seed: s, ..settings.train.clone() };
            ablation_curve(&training_pairs(&world, victim)?, sizes, &train, |adapter| attack.attack(adapter, victim, target))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = seeds.len() as f64;
    let mean_sar = (0..sizes.len()).map(|i| curves.iter().map(|c| c[i].sar).sum::<f64>() / k).collect();
    let mean_train_time_seconds =
        (0..sizes.len()).map(|i| curves.iter().map(|c| c[i].train_time_seconds).sum::<f64>() / k).collect();
    let names = crate::synth::model_name;
    Ok(AblationSummary {
        victim_model_id: names(victim),
        target_model_id: names(target),
        sizes: sizes.to_vec(),
        curves,
        mean_sar,
        mean_train_time_seconds,
    })
}
