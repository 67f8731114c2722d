//! `embedadapt`: staged pipeline for adapter-based template inversion
//! experiments. Each stage reads and writes files, so external tools can be
//! spliced in between (a real generator instead of the synthetic channel, real
//! extractors instead of synthetic ones).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use embedadapt::adapter::{apply_with, fit, fit_validated, load_adapter, save_adapter, ApplyOptions, Method, Precision, TrainConfig};
use embedadapt::attack::{read_report_csv, render_report, ReferenceMode, ReportFormat, ReportRecord};
use embedadapt::embedding::{pair, read_embeddings, read_pairs, write_embeddings, write_pairs};
use embedadapt::metrics::{build_scores, calibrate_threshold, read_scores_csv};
use embedadapt::pipeline::{ablation_experiment, training_pairs, transfer_experiment, AttackSettings};
use embedadapt::synth::{embed, make_world, simulate_reconstruction, WorldConfig, FOUNDATION_MODEL_ID};
use embedadapt::{evaluate_sar, AttackRun, Error};

#[derive(Parser)]
#[command(name = "embedadapt", version, about = "Linear adapters between face-embedding spaces and template-inversion attack evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Join two embedding files on (subject_id, sample_id) into a pairs file.
    Pair(PairArgs),
    /// Fit an adapter on a pairs file.
    Fit(FitArgs),
    /// Map an embedding file through an adapter.
    Apply(ApplyArgs),
    /// Calibrate the threshold at a target FMR.
    Calibrate(CalibrateArgs),
    /// Score reconstructed probes against enrolled templates.
    Attack(AttackArgs),
    /// Transferability grid in the synthetic world.
    Transfer(TransferArgs),
    /// Training-size ablation in the synthetic world.
    Ablate(AblateArgs),
    /// Generate synthetic-world embeddings, or run the synthetic reconstruction channel.
    SynthGen(SynthGenArgs),
    /// Render report CSV files as a table.
    Report(ReportArgs),
    /// Validate an externally produced embedding file.
    ExtractCheck(ExtractCheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Closed,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    #[value(name = "self")]
    SelfTemplate,
    OtherSample,
}

impl From<ReferenceArg> for ReferenceMode {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::SelfTemplate => Self::SelfTemplate,
            ReferenceArg::OtherSample => Self::OtherSample,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => Self::Markdown,
            FormatArg::Csv => Self::Csv,
        }
    }
}

#[derive(Args)]
struct SeedArg {
    #[arg(long, env = "EMBEDADAPT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "iterative")]
    method: MethodArg,
    /// Ridge penalty (closed form).
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long)]
    no_bias: bool,
    #[arg(long)]
    normalize_inputs: bool,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            method: match self.method {
                MethodArg::Closed => Method::ClosedForm,
                MethodArg::Iterative => Method::Iterative,
            },
            ridge_lambda: self.ridge,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            use_bias: !self.no_bias,
            normalize_inputs: self.normalize_inputs,
            precision: match self.precision {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            },
        }
    }
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Held-out pairs; their MSE is stored in the adapter metadata.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Keep the measured wall time in the adapter file.
    #[arg(long)]
    record_timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    adapter: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    allow_model_mismatch: bool,
    #[arg(long)]
    normalize_output: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Score CSV with `label,score` rows.
    #[arg(long, required_unless_present = "source", conflicts_with = "source")]
    scores: Option<PathBuf>,
    /// Embedding file scored all-against-all.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    target_fmr: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Reconstructed probes in the target model's space.
    #[arg(long)]
    source: PathBuf,
    /// Enrolled templates of the target system.
    #[arg(long)]
    target: PathBuf,
    /// Model the probed templates leaked from (defaults to the target's).
    #[arg(long)]
    victim: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    target_fmr: f64,
    #[arg(long, value_enum, default_value = "self")]
    reference: ReferenceArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WorldArgs {
    /// World config (`key = value` lines); defaults when absent.
    #[arg(long)]
    world: Option<PathBuf>,
}

impl WorldArgs {
    fn load(&self) -> embedadapt::Result<WorldConfig> {
        self.world.as_ref().map_or_else(|| Ok(WorldConfig::default()), WorldConfig::load)
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Number of worlds, seeded `seed, seed+1, …`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-3)]
    target_fmr: f64,
    #[arg(long, value_enum, default_value = "self")]
    reference: ReferenceArg,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    record_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn seeds(&self) -> Vec<u64> {
        (0..self.seeds).map(|i| self.seed.seed.wrapping_add(i)).collect()
    }

    fn settings(&self) -> AttackSettings {
        AttackSettings {
            train: self.train.config(self.seed.seed),
            target_fmr: self.target_fmr,
            reference: self.reference.into(),
        }
    }
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000,5000")]
    sizes: Vec<usize>,
    /// Index of the victim model.
    #[arg(long, default_value_t = 0)]
    victim_index: usize,
    /// Index of the target model (defaults to the victim).
    #[arg(long)]
    target_index: Option<usize>,
}

#[derive(Args)]
struct SynthGenArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Foundation-space embeddings to push through the channel instead of
    /// generating a world.
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    /// Target model id for the channel.
    #[arg(long)]
    target: Option<String>,
    /// Output directory, or output file with `--source`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractCheckArgs {
    file: PathBuf,
    /// Required embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
}

fn write_or_print(out: Option<&Path>, text: &str) -> embedadapt::Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> embedadapt::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn run(command: Command) -> embedadapt::Result<Value> {
    match command {
        Command::Pair(a) => {
            let source = read_embeddings(&a.source)?;
            let target = read_embeddings(&a.target)?;
            let pairs = pair(&source, &target)?;
            write_pairs(&pairs, &a.out)?;
            Ok(json!({
                "command": "pair",
                "n_pairs": pairs.len(),
                "unmatched_source": source.len() - pairs.len(),
                "unmatched_target": target.len() - pairs.len(),
            }))
        }
        Command::Fit(a) => {
            let pairs = read_pairs(&a.pairs)?;
            let config = a.train.config(a.seed.seed);
            let mut adapter = match &a.validation {
                Some(path) => fit_validated(&pairs, &read_pairs(path)?, &config)?,
                None => fit(&pairs, &config)?,
            };
            let wall_time = adapter.meta().wall_time_seconds;
            if !a.record_timing {
                adapter.meta_mut().wall_time_seconds = 0.0;
            }
            save_adapter(&adapter, &a.out)?;
            let meta = adapter.meta();
            Ok(json!({
                "command": "fit",
                "method": meta.method,
                "n_pairs": meta.n_pairs,
                "learning_rate": meta.learning_rate,
                "epochs": meta.epochs,
                "batch_size": meta.batch_size,
                "ridge_lambda": meta.ridge_lambda,
                "seed": meta.seed,
                "final_mse": meta.final_mse,
                "heldout_mse": meta.heldout_mse,
                "wall_time_seconds": wall_time,
            }))
        }
        Command::Apply(a) => {
            let adapter = load_adapter(&a.adapter)?;
            let set = read_embeddings(&a.source)?;
            let options = ApplyOptions { allow_model_mismatch: a.allow_model_mismatch, normalize_output: a.normalize_output };
            let out = apply_with(&adapter, &set, options)?;
            write_embeddings(&out, &a.out)?;
            Ok(json!({ "command": "apply", "n_records": out.len(), "model_id": out.model_id(), "dim": out.dim() }))
        }
        Command::Calibrate(a) => {
            let scores = match (&a.scores, &a.source) {
                (Some(path), _) => read_scores_csv(fs::File::open(path)?)?,
                (None, Some(path)) => {
                    let set = read_embeddings(path)?;
                    build_scores(&set, &set)?
                }
                (None, None) => return Err(Error::Validation("either --scores or --source is required".into())),
            };
            let op = calibrate_threshold(&scores, a.target_fmr)?;
            if let Some(out) = &a.out {
                write_json(out, &op)?;
            }
            Ok(json!({
                "command": "calibrate",
                "target_fmr": op.target_fmr,
                "threshold": op.threshold,
                "achieved_fmr": op.achieved_fmr,
                "tmr": op.tmr,
                "n_genuine": scores.genuine.len(),
                "n_impostor": scores.impostor.len(),
            }))
        }
        Command::Attack(a) => {
            let reconstructed = read_embeddings(&a.source)?;
            let enrolled = read_embeddings(&a.target)?;
            let op = calibrate_threshold(&build_scores(&enrolled, &enrolled)?, a.target_fmr)?;
            let run = AttackRun {
                victim_model_id: a.victim.unwrap_or_else(|| enrolled.model_id().to_string()),
                target_model_id: enrolled.model_id().to_string(),
                enrolled,
                reconstructed,
                operating_point: op,
                reference: a.reference.into(),
            };
            let report = evaluate_sar(&run)?;
            if let Some(out) = &a.out {
                write_json(out, &report)?;
            }
            Ok(json!({
                "command": "attack",
                "victim": report.victim_model_id,
                "target": report.target_model_id,
                "sar": report.sar,
                "n_attacks": report.n_attacks,
                "n_success": report.n_success,
                "threshold": report.threshold,
                "bona_fide_tmr": report.bona_fide_tmr,
            }))
        }
        Command::Transfer(a) => {
            let e = &a.experiment;
            let config = e.world.load()?;
            let start = Instant::now();
            let summary = transfer_experiment(&config, &e.seeds(), &e.settings())?;
            let n_train = config.train_images;
            let mut records = Vec::new();
            for (v, victim) in summary.model_ids.iter().enumerate() {
                let time = summary.grids.iter().map(|g| g.train_time_seconds[v]).sum::<f64>() / summary.grids.len() as f64;
                for (t, target) in summary.model_ids.iter().enumerate() {
                    records.push(ReportRecord {
                        method: victim.clone(),
                        victim: victim.clone(),
                        target: target.clone(),
                        dataset: "synthetic".into(),
                        n_train,
                        sar: summary.mean_sar[v][t],
                        train_time_s: if e.record_timing { time } else { 0.0 },
                    });
                }
            }
            write_or_print(e.out.as_deref(), &render_report(&records, e.format.into()))?;
            let same: Vec<f64> = (0..summary.model_ids.len()).map(|t| summary.same_model(t)).collect();
            let cross: Vec<f64> = (0..summary.model_ids.len()).map(|t| summary.cross_model(t)).collect();
            Ok(json!({
                "command": "transfer",
                "models": summary.model_ids,
                "seeds": e.seeds(),
                "same_model_sar": same,
                "cross_model_sar": cross,
                "wall_time_seconds": start.elapsed().as_secs_f64(),
            }))
        }
        Command::Ablate(a) => {
            let e = &a.experiment;
            let config = e.world.load()?;
            let target = a.target_index.unwrap_or(a.victim_index);
            let start = Instant::now();
            let summary = ablation_experiment(&config, &e.seeds(), &a.sizes, a.victim_index, target, &e.settings())?;
            let records: Vec<ReportRecord> = summary
                .sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| ReportRecord {
                    method: n.to_string(),
                    victim: summary.victim_model_id.clone(),
                    target: summary.target_model_id.clone(),
                    dataset: "synthetic".into(),
                    n_train: n,
                    sar: summary.mean_sar[i],
                    train_time_s: if e.record_timing { summary.mean_train_time_seconds[i] } else { 0.0 },
                })
                .collect();
            write_or_print(e.out.as_deref(), &render_report(&records, e.format.into()))?;
            Ok(json!({
                "command": "ablate",
                "sizes": summary.sizes,
                "mean_sar": summary.mean_sar,
                "seeds": e.seeds(),
                "wall_time_seconds": start.elapsed().as_secs_f64(),
            }))
        }
        Command::SynthGen(a) => {
            let config = a.world.load()?.with_seed(a.seed.seed);
            let world = make_world(&config)?;
            if let Some(source) = &a.source {
                let translated = read_embeddings(source)?;
                let target_id = a.target.as_deref().unwrap_or_default();
                let target = world
                    .models
                    .iter()
                    .find(|m| m.model_id() == target_id)
                    .ok_or_else(|| Error::Validation(format!("world has no model {target_id:?}")))?;
                let reconstructed = simulate_reconstruction(&translated, &world.channel, target)?;
                write_embeddings(&reconstructed, &a.out)?;
                return Ok(json!({
                    "command": "synth-gen",
                    "mode": "channel",
                    "target": target_id,
                    "n_records": reconstructed.len(),
                }));
            }
            fs::create_dir_all(&a.out)?;
            config.save(a.out.join("world.cfg"))?;
            let mut files = Vec::new();
            for (i, model) in world.models.iter().enumerate() {
                let enrolled = embed(model, &world.population, config.samples_per_id)?;
                let name = format!("{}.enrolled.emb", model.model_id());
                write_embeddings(&enrolled, a.out.join(&name))?;
                files.push(name);
                let pairs = training_pairs(&world, i)?;
                let name = format!("{}.train.emb2", model.model_id());
                write_pairs(&pairs, a.out.join(&name))?;
                files.push(name);
            }
            let fm = embed(world.fm_model(), &world.train_population, 1)?;
            let name = format!("{FOUNDATION_MODEL_ID}.train.emb");
            write_embeddings(&fm, a.out.join(&name))?;
            files.push(name);
            Ok(json!({ "command": "synth-gen", "mode": "world", "seed": config.seed, "files": files }))
        }
        Command::Report(a) => {
            let mut records = Vec::new();
            for path in &a.inputs {
                records.extend(read_report_csv(fs::File::open(path)?)?);
            }
            write_or_print(a.out.as_deref(), &render_report(&records, a.format.into()))?;
            Ok(json!({ "command": "report", "n_records": records.len() }))
        }
        Command::ExtractCheck(a) => {
            let set = read_embeddings(&a.file)?;
            if let Some(dim) = a.dim {
                if set.dim() != dim {
                    return Err(Error::Validation(format!("file has dimension {}, expected {dim}", set.dim())));
                }
            }
            Ok(json!({
                "command": "extract-check",
                "ok": true,
                "model_id": set.model_id(),
                "dim": set.dim(),
                "count": set.len(),
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("embedadapt: {e}");
            ExitCode::from(1)
        }
    }
}
