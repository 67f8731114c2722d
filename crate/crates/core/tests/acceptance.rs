//! Acceptance suite, run without the libtest harness so the per-criterion
//! lines are always printed. Criteria run in sequence so the timing budgets
//! are measured without other tests competing for the CPU. The process exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use embedadapt::adapter::{decode_adapter, encode_adapter, fit, load_adapter, save_adapter, AdapterModel, TrainConfig, TrainReport};
use embedadapt::attack::{render_report, spearman, ReferenceMode, ReportFormat, ReportRecord};
use embedadapt::embedding::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, EmbeddingPair, PairedEmbeddings};
use embedadapt::linalg::{orthonormalize_columns, Matrix};
use embedadapt::metrics::{calibrate_threshold, ScoreSet, SENTINEL_OFFSET};
use embedadapt::pipeline::{ablation_experiment, train_adapter, transfer_experiment, AttackSettings, SyntheticAttack};
use embedadapt::synth::{make_world, ReconstructionChannel, SyntheticModel, WorldConfig};
use embedadapt::{seed, EmbeddingRecord, EmbeddingSet, Error, Method, Precision, SampleKey};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    name: &'static str,
    pass: bool,
    line: String,
}

/// Runs `check` and compares its wall time (or the time it reports) with
/// `budget`.
fn criterion(name: &'static str, budget: Option<Duration>, check: impl FnOnce() -> (bool, String, Option<Duration>)) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check));
    let wall = start.elapsed();
    let (ok, detail, timed) = match result {
        Ok(r) => r,
        Err(_) => (false, "panicked".to_string(), None),
    };
    let elapsed = timed.unwrap_or(wall);
    let in_budget = budget.is_none_or(|b| elapsed <= b);
    let pass = ok && in_budget;
    let budget_text = budget.map_or(String::new(), |b| format!(" / budget {:.0} s", b.as_secs_f64()));
    let line = format!(
        "{} {name}: {detail}{} [{:.2} s{budget_text}]",
        if pass { "PASS" } else { "FAIL" },
        if in_budget { "" } else { "; over time budget" },
        elapsed.as_secs_f64()
    );
    println!("{line}");
    Outcome { name, pass, line }
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

// ---------------------------------------------------------------------------
// calibration oracle

/// Exhaustive reference: every distinct impostor score and the sentinel are
/// tried in ascending order; FMR is counted directly for each.
fn brute_force_threshold(impostor: &[f64], target: f64) -> (f64, f64) {
    let mut sorted = impostor.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut candidates = sorted.clone();
    candidates.dedup();
    candidates.push(sorted[sorted.len() - 1] + SENTINEL_OFFSET);
    for c in candidates {
        // sorted ascending: everything from the first index with s >= c is accepted
        let accepted = sorted.len() - sorted.partition_point(|&s| s < c);
        let fmr = accepted as f64 / n;
        if fmr <= target {
            return (c, fmr);
        }
    }
    unreachable!("the sentinel accepts nothing")
}

fn calibration_oracle() -> (bool, String, Option<Duration>) {
    let mut rng = seed::stream(7, "acceptance/calibration", 0);
    let mut mismatches = 0;
    let mut calibrate_time = Duration::ZERO;
    for case in 0..1000 {
        let n = rng.random_range(1..=10_000);
        // a third of the sets are coarsely quantized to force ties
        let levels = if case % 3 == 0 { Some(rng.random_range(2..200) as f64) } else { None };
        let impostor: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random_range(-1.0..1.0);
                levels.map_or(s, |l| (s * l).round() / l)
            })
            .collect();
        let genuine: Vec<f64> = (0..rng.random_range(0..50)).map(|_| rng.random_range(0.0..1.0)).collect();
        let target = match case % 4 {
            0 => 1e-3,
            1 => 10f64.powf(rng.random_range(-5.0..0.0)),
            2 => rng.random_range(0.0001..0.9999),
            _ => rng.random_range(1..=n) as f64 / n as f64,
        };
        let scores = ScoreSet::new(genuine, impostor).unwrap();
        let start = Instant::now();
        let op = calibrate_threshold(&scores, target).unwrap();
        calibrate_time += start.elapsed();
        let (tau, fmr) = brute_force_threshold(&scores.impostor, target);
        if op.threshold != tau || op.achieved_fmr != fmr {
            mismatches += 1;
        }
    }
    (
        mismatches == 0,
        format!(
            "1000 score sets, {mismatches} mismatches against exhaustive scan ({:.2} s calibrating)",
            calibrate_time.as_secs_f64()
        ),
        None,
    )
}

// ---------------------------------------------------------------------------
// closed-form recovery and iterative agreement

fn linear_pairs(q: &Matrix<f64>, n: usize, noise: f64, rng: &mut impl Rng) -> PairedEmbeddings {
    let d = q.rows();
    let pairs = (0..n)
        .map(|i| {
            let x = gaussian_vec(rng, d);
            let y = (0..d)
                .map(|r| {
                    let clean: f64 = q.row(r).iter().zip(&x).map(|(a, &b)| a * f64::from(b)).sum();
                    (clean + noise * rng.sample::<f64, _>(StandardNormal)) as f32
                })
                .collect();
            EmbeddingPair { key: SampleKey::new(format!("s{i}"), "0"), source: x, target: y }
        })
        .collect();
    PairedEmbeddings::new("x", "y", d, d, pairs).unwrap()
}

fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Matrix<f64> {
    orthonormalize_columns(&Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal))).unwrap()
}

fn closed_form_recovery() -> (bool, String, Option<Duration>) {
    let mut rng = seed::stream(11, "acceptance/recovery", 0);
    let d = 64;
    let q = random_orthogonal(d, &mut rng);
    let pairs = linear_pairs(&q, 2048, 0.0, &mut rng);
    let exact = fit(&pairs, &TrainConfig::closed_form(0.0)).unwrap();
    let err = exact.weight_matrix::<f64>().sub(&q).frobenius_norm();
    let recovered = err <= 1e-4;

    // iterative agreement on noisy Gaussian data, N = 128·D
    let mut worst: f64 = 0.0;
    let mut all_within = true;
    for s in SEEDS {
        let mut rng = seed::stream(s, "acceptance/iterative-data", 0);
        let q = random_orthogonal(d, &mut rng);
        let pairs = linear_pairs(&q, 128 * d, 0.1, &mut rng);
        let optimum = fit(&pairs, &TrainConfig::closed_form(0.0)).unwrap().meta().final_mse;
        let iterative = fit(&pairs, &TrainConfig { seed: s, ..TrainConfig::default() }).unwrap();
        let rel = (iterative.meta().final_mse - optimum) / optimum;
        worst = worst.max(rel);
        all_within &= rel <= 0.05;
    }
    (
        recovered && all_within,
        format!("‖Ŵ−Q‖_F = {err:.2e} (≤ 1e-4); iterative MSE worst relative excess over closed form = {:.3}% (≤ 5%, 5 seeds)", worst * 100.0),
        None,
    )
}

// ---------------------------------------------------------------------------
// lossless channel

fn lossless_channel() -> (bool, String, Option<Duration>) {
    let config = WorldConfig { gamma: 0.0, sample_noise: 0.0, generation_noise: 0.0, ..WorldConfig::default() };
    let mut world = make_world(&config).unwrap();
    let fm = world.fm_model().clone();
    // the victim and target extractor is the foundation extractor itself
    world.models = vec![SyntheticModel::with_projection("synth-fm-victim", fm.projection().clone(), 0.0, 0.0, fm.seed()).unwrap()];
    world.channel = ReconstructionChannel::new(fm, 0.0, world.channel.seed).unwrap();
    // embeddings span a k-dimensional subspace, so the exact solve needs a vanishing ridge
    let adapter = train_adapter(&world, 0, &TrainConfig::closed_form(1e-10)).unwrap();
    let attack = SyntheticAttack::new(&world, 1e-3, ReferenceMode::SelfTemplate).unwrap();
    let report = attack.attack(&adapter, 0, 0).unwrap();
    let min_score = report.outcomes.iter().map(|o| o.score).fold(f64::INFINITY, f64::min);
    (
        report.sar == 1.0,
        format!(
            "SAR = {} over {} attacks at τ = {:.4} (lowest score {min_score:.4})",
            report.sar, report.n_attacks, report.threshold
        ),
        None,
    )
}

// ---------------------------------------------------------------------------
// ablation trend

fn ablation_trend() -> (bool, String, Option<Duration>) {
    let sizes = [100, 500, 1000, 5000];
    let summary = ablation_experiment(&WorldConfig::default(), &SEEDS, &sizes, 0, 0, &AttackSettings::default()).unwrap();
    let x: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let rho = spearman(&x, &summary.mean_sar);
    let means: Vec<String> = summary.mean_sar.iter().map(|s| format!("{:.2}%", s * 100.0)).collect();
    (
        rho.is_some_and(|r| r >= 0.9),
        format!("mean SAR by size {sizes:?} = [{}]; Spearman = {} (≥ 0.9)", means.join(", "), rho.map_or("undefined".into(), |r| format!("{r:.3}"))),
        None,
    )
}

// ---------------------------------------------------------------------------
// transferability ordering

fn transfer_ordering() -> (bool, String, Option<Duration>) {
    let summary = transfer_experiment(&WorldConfig::default(), &SEEDS, &AttackSettings::default()).unwrap();
    let n = summary.model_ids.len();
    let per_target_ok = (0..n).all(|t| summary.same_model(t) >= summary.cross_model(t));
    let row_ok = (1..n).all(|t| summary.mean_sar[0][0] >= summary.mean_sar[0][t]);
    let cells: Vec<String> =
        (0..n).map(|t| format!("{} {:.2}/{:.2}", summary.model_ids[t], summary.same_model(t) * 100.0, summary.cross_model(t) * 100.0)).collect();
    let row: Vec<String> = summary.mean_sar[0].iter().map(|s| format!("{:.2}", s * 100.0)).collect();
    (
        n == 6 && per_target_ok && row_ok,
        format!("same/cross-model SAR % per target: {}; victim {} row: [{}]", cells.join(", "), summary.model_ids[0], row.join(", ")),
        None,
    )
}

// ---------------------------------------------------------------------------
// cost envelope

fn gaussian_pairs(n: usize, d: usize, rng: &mut impl Rng) -> PairedEmbeddings {
    let mix: Vec<f32> = gaussian_vec(rng, d * d).into_iter().map(|v| v / (d as f32).sqrt()).collect();
    let pairs = (0..n)
        .map(|i| {
            let x = gaussian_vec(rng, d);
            let y = (0..d)
                .map(|r| mix[r * d..(r + 1) * d].iter().zip(&x).map(|(a, b)| a * b).sum::<f32>() + 0.1 * rng.sample::<f32, _>(StandardNormal))
                .collect();
            EmbeddingPair { key: SampleKey::new(format!("img{i}"), "0"), source: x, target: y }
        })
        .collect();
    PairedEmbeddings::new("x", "y", d, d, pairs).unwrap()
}

fn cost_envelope() -> (bool, String, Option<Duration>) {
    let mut rng = seed::stream(3, "acceptance/cost", 0);
    let pairs = gaussian_pairs(10_000, 512, &mut rng);
    let iterative = fit(&pairs, &TrainConfig::default()).unwrap();
    let t_iter = iterative.meta().wall_time_seconds;
    drop(pairs);
    let pairs = gaussian_pairs(60_000, 512, &mut rng);
    let closed = fit(&pairs, &TrainConfig::closed_form(0.0)).unwrap();
    let t_closed = closed.meta().wall_time_seconds;
    let ok = t_iter <= 60.0 && t_closed <= 10.0 && iterative.meta().method == Method::Iterative;
    (
        ok,
        format!(
            "iterative 512×512 on 10,000 pairs ({:?}, 20 epochs) {t_iter:.2} s (≤ 60 s); closed form on 60,000 pairs {t_closed:.2} s (≤ 10 s)",
            Precision::default()
        ),
        Some(Duration::from_secs_f64(t_iter + t_closed)),
    )
}

// ---------------------------------------------------------------------------
// serialization fuzz

fn random_set(rng: &mut impl Rng, case: usize) -> EmbeddingSet {
    let dim = rng.random_range(1..=64);
    let n = rng.random_range(0..=12);
    let records = (0..n)
        .map(|i| {
            let vector = (0..dim)
                .map(|_| match rng.random_range(0..10) {
                    0 => f32::from_bits(rng.next_u32() & 0x807f_ffff), // zero exponent: ±0 and subnormals
                    1 => -0.0,
                    _ => {
                        let v = f32::from_bits(rng.next_u32());
                        if v.is_finite() { v } else { 1.5 }
                    }
                })
                .collect();
            EmbeddingRecord::new(format!("subject-{case}-{}", i / 3), format!("{}é", i % 3), vector)
        })
        .collect();
    EmbeddingSet::new(format!("model-{case}"), dim, records).unwrap()
}

fn random_adapter(rng: &mut impl Rng, case: usize) -> AdapterModel {
    let ds = rng.random_range(1..=16);
    let dt = rng.random_range(1..=16);
    let weights = (0..ds * dt).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let bias = rng.random_bool(0.5).then(|| (0..dt).map(|_| rng.sample::<f32, _>(StandardNormal)).collect());
    let mut meta = TrainReport::new(&TrainConfig { seed: rng.next_u64(), ..TrainConfig::default() }, Method::Iterative, case + 1, Precision::F64);
    meta.final_mse = rng.random();
    meta.loss_history = (0..rng.random_range(0..5)).map(|_| rng.random()).collect();
    AdapterModel::new(format!("src-{case}"), format!("dst-{case}"), ds, dt, weights, bias, meta).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// A damaged input must be rejected with a typed error, unless the damage
/// happened to produce another canonical file (e.g. a new dim on an empty set),
/// in which case decoding it is correct.
fn rejected_or_canonical<T>(input: &[u8], result: Result<T, Error>, encode: impl Fn(&T) -> Result<Vec<u8>, Error>) -> bool {
    match result {
        Ok(value) => encode(&value).is_ok_and(|bytes| bytes == input),
        Err(e) => matches!(e, Error::Format(_) | Error::Corruption(_) | Error::Validation(_)),
    }
}

fn serialization_fuzz() -> (bool, String, Option<Duration>) {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seed::stream(5, "acceptance/fuzz", 0);
    let mut mismatches = 0usize;
    for case in 0..10_000 {
        let set = random_set(&mut rng, case);
        let path = dir.path().join(format!("e{case}.emb"));
        write_embeddings(&set, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        let same = back.model_id() == set.model_id()
            && back.dim() == set.dim()
            && back.len() == set.len()
            && back.records().iter().zip(set.records()).all(|(a, b)| a.key == b.key && bits(&a.vector) == bits(&b.vector));
        mismatches += usize::from(!same);

        let adapter = random_adapter(&mut rng, case);
        let path = dir.path().join(format!("a{case}.adp"));
        save_adapter(&adapter, &path).unwrap();
        let back = load_adapter(&path).unwrap();
        let same = back == adapter && bits(back.weights()) == bits(adapter.weights()) && back.bias().map(bits) == adapter.bias().map(bits);
        mismatches += usize::from(!same);
    }

    // header corruption: single-byte changes inside the fixed header, and truncations
    let mut untyped = 0usize;
    let mut panics = 0usize;
    let trials = 5_000;
    for case in 0..trials {
        let emb = encode_embeddings(&random_set(&mut rng, case)).unwrap();
        let adp = encode_adapter(&random_adapter(&mut rng, case)).unwrap();
        for (bytes, header_len, decode) in [
            (emb, 20usize, (|b: &[u8]| rejected_or_canonical(b, decode_embeddings(b), encode_embeddings)) as fn(&[u8]) -> bool),
            (adp, 17usize, |b: &[u8]| rejected_or_canonical(b, decode_adapter(b), encode_adapter)),
        ] {
            let mut damaged = bytes.clone();
            let at = rng.random_range(0..header_len);
            damaged[at] ^= rng.random_range(1..=255u8);
            let cut = rng.random_range(0..bytes.len());
            for input in [&damaged[..], &bytes[..cut]] {
                match catch_unwind(|| decode(input)) {
                    Ok(true) => {}
                    Ok(false) => untyped += 1,
                    Err(_) => panics += 1,
                }
            }
        }
    }
    (
        mismatches == 0 && untyped == 0 && panics == 0,
        format!(
            "10,000 EMB1 + 10,000 ADP1 files, {mismatches} round-trip mismatches; {} corrupted inputs, {untyped} accepted as non-canonical or untyped, {panics} panics",
            trials * 4
        ),
        None,
    )
}

// ---------------------------------------------------------------------------
// report fixture

fn report_fixture() -> (bool, String, Option<Duration>) {
    let models = ["ArcFace", "ElasticFace", "AttentionNet", "HRNet", "RepVGG", "Swin"];
    let stored = [1.0, 0.9905, 0.9952, 0.9952, 0.9857, 0.9952];
    let records: Vec<ReportRecord> = models
        .iter()
        .zip(stored)
        .map(|(m, sar)| ReportRecord {
            method: "Ours".into(),
            victim: (*m).into(),
            target: (*m).into(),
            dataset: "MOBIO".into(),
            n_train: 0,
            sar,
            train_time_s: 0.0,
        })
        .collect();
    let md = render_report(&records, ReportFormat::Markdown);
    let row = md.lines().nth(2).unwrap_or_default();
    let expected_row = "| MOBIO | Ours | 100.0 | 99.05 | 99.52 | 99.52 | 98.57 | 99.52 |";
    let cells: Vec<&str> = row.trim_matches('|').split('|').map(str::trim).skip(2).collect();
    let joined = cells.join(" / ");
    (
        row == expected_row && joined == "100.0 / 99.05 / 99.52 / 99.52 / 98.57 / 99.52",
        format!("rendered row {row:?}"),
        None,
    )
}

fn main() {
    let outcomes = [
        criterion("threshold-calibration oracle", Some(Duration::from_secs(10)), calibration_oracle),
        criterion("closed-form recovery", Some(Duration::from_secs(30)), closed_form_recovery),
        criterion("lossless-channel limit", Some(Duration::from_secs(10)), lossless_channel),
        criterion("ablation trend", Some(Duration::from_secs(60)), ablation_trend),
        criterion("transferability ordering", Some(Duration::from_secs(120)), transfer_ordering),
        criterion("adapter training cost envelope", None, cost_envelope),
        criterion("serialization fuzz", None, serialization_fuzz),
        criterion("report fixture", None, report_fixture),
    ];
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    println!("acceptance: {}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        for o in outcomes.iter().filter(|o| !o.pass) {
            eprintln!("{}", o.line);
        }
        std::process::exit(1);
    }
}
