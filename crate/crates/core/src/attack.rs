//! Attack evaluation: success attack rate (SAR) of reconstructed probes
//! against enrolled templates, transferability tables, training-size
//! ablations and report rendering.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::{fit, AdapterModel, TrainConfig};
use crate::embedding::{EmbeddingSet, PairedEmbeddings, SampleKey};
use crate::error::{Error, Result};
use crate::metrics::{cosine_f32, OperatingPoint};
use crate::seed;

/// Which enrolled template a probe is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// The enrolled template with the probe's own `(subject_id, sample_id)`.
    #[default]
    #[serde(rename = "self")]
    SelfTemplate,
    /// Another enrolled sample of the same subject.
    OtherSample,
}

impl FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(Self::SelfTemplate),
            "other-sample" => Ok(Self::OtherSample),
            other => Err(Error::validation(format!("unknown reference mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRun {
    pub victim_model_id: String,
    pub target_model_id: String,
    /// Target-model embeddings of the enrolled subjects.
    pub enrolled: EmbeddingSet,
    /// Target-model embeddings of the reconstructed probes, keyed like the
    /// leaked templates.
    pub reconstructed: EmbeddingSet,
    pub operating_point: OperatingPoint,
    pub reference: ReferenceMode,
}

impl AttackRun {
    /// Checks dims and that every probe has an enrolled counterpart.
    pub fn validate(&self) -> Result<()> {
        if self.enrolled.dim() != self.reconstructed.dim() {
            return Err(Error::validation(format!(
                "enrolled dim {} differs from reconstructed dim {}",
                self.enrolled.dim(),
                self.reconstructed.dim()
            )));
        }
        if !self.operating_point.threshold.is_finite() {
            return Err(Error::validation("operating point threshold must be finite"));
        }
        for r in self.reconstructed.records() {
            self.reference_for(&r.key)?;
        }
        Ok(())
    }

    fn reference_for(&self, key: &SampleKey) -> Result<&[f32]> {
        match self.reference {
            ReferenceMode::SelfTemplate => self
                .enrolled
                .get(key)
                .map(|r| r.vector.as_slice())
                .ok_or_else(|| Error::validation(format!("probe {key} has no enrolled template"))),
            ReferenceMode::OtherSample => self
                .enrolled
                .records()
                .iter()
                .find(|r| r.key.subject_id == key.subject_id && r.key.sample_id != key.sample_id)
                .map(|r| r.vector.as_slice())
                .ok_or_else(|| Error::validation(format!("probe {key} has no other enrolled sample of its subject"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub subject_id: String,
    pub sample_id: String,
    pub score: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub victim_model_id: String,
    pub target_model_id: String,
    pub sar: f64,
    pub n_attacks: usize,
    pub n_success: usize,
    pub threshold: f64,
    pub target_fmr: f64,
    pub achieved_fmr: f64,
    pub bona_fide_tmr: f64,
    pub reference: ReferenceMode,
    pub outcomes: Vec<AttackOutcome>,
}

/// Scores every reconstructed probe against its reference template and
/// counts `score ≥ τ` as a successful attack.
pub fn evaluate_sar(run: &AttackRun) -> Result<AttackReport> {
    if run.enrolled.dim() != run.reconstructed.dim() {
        return Err(Error::validation(format!(
            "enrolled dim {} differs from reconstructed dim {}",
            run.enrolled.dim(),
            run.reconstructed.dim()
        )));
    }
    let tau = run.operating_point.threshold;
    let outcomes = run
        .reconstructed
        .records()
        .iter()
        .map(|probe| {
            let reference = run.reference_for(&probe.key)?;
            let score = cosine_f32(&probe.vector, reference)?;
            Ok(AttackOutcome {
                subject_id: probe.key.subject_id.clone(),
                sample_id: probe.key.sample_id.clone(),
                score,
                success: score >= tau,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_attacks = outcomes.len();
    let n_success = outcomes.iter().filter(|o| o.success).count();
    let sar = if n_attacks == 0 { 0.0 } else { n_success as f64 / n_attacks as f64 };
    Ok(AttackReport {
        victim_model_id: run.victim_model_id.clone(),
        target_model_id: run.target_model_id.clone(),
        sar,
        n_attacks,
        n_success,
        threshold: tau,
        target_fmr: run.operating_point.target_fmr,
        achieved_fmr: run.operating_point.achieved_fmr,
        bona_fide_tmr: run.operating_point.tmr,
        reference: run.reference,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub target_model_id: String,
    pub sar: f64,
    /// The target is the model the templates leaked from.
    pub same_model: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    pub victim_model_id: String,
    pub cells: Vec<TransferCell>,
}

impl TransferTable {
    pub fn sar_for(&self, target_model_id: &str) -> Option<f64> {
        self.cells.iter().find(|c| c.target_model_id == target_model_id).map(|c| c.sar)
    }
}

/// One SAR per target, in the order of `runs`.
pub fn transferability_matrix(runs: &[AttackRun]) -> Result<TransferTable> {
    let first = runs.first().ok_or_else(|| Error::validation("transferability needs at least one run"))?;
    let mut seen = HashSet::new();
    let mut cells = Vec::with_capacity(runs.len());
    for run in runs {
        if run.victim_model_id != first.victim_model_id {
            return Err(Error::validation(format!(
                "runs mix victims {:?} and {:?}",
                first.victim_model_id, run.victim_model_id
            )));
        }
        if !seen.insert(run.target_model_id.as_str()) {
            return Err(Error::validation(format!("duplicate target model {:?}", run.target_model_id)));
        }
        let report = evaluate_sar(run)?;
        cells.push(TransferCell {
            target_model_id: run.target_model_id.clone(),
            sar: report.sar,
            same_model: run.target_model_id == run.victim_model_id,
        });
    }
    Ok(TransferTable { victim_model_id: first.victim_model_id.clone(), cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub n_train_pairs: usize,
    pub train_time_seconds: f64,
    pub sar: f64,
}

/// Pair order used by [`ablation_curve`]: a seeded shuffle whose prefixes are
/// the training sets, so smaller sets are nested in larger ones.
pub fn ablation_order(pairs: &PairedEmbeddings, seed: u64) -> PairedEmbeddings {
    pairs.shuffled(seed::derive(seed, "ablation/order", 0))
}

/// For each size, fits an adapter on that prefix of the shuffled pairs and
/// runs `attack` with it.
pub fn ablation_curve<F>(pairs: &PairedEmbeddings, sizes: &[usize], config: &TrainConfig, mut attack: F) -> Result<Vec<AblationPoint>>
where
    F: FnMut(&AdapterModel) -> Result<AttackReport>,
{
    if sizes.is_empty() {
        return Err(Error::validation("ablation needs at least one size"));
    }
    if sizes[0] == 0 {
        return Err(Error::validation("ablation sizes must be positive"));
    }
    if let Some(w) = sizes.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::validation(format!("ablation sizes must be strictly increasing ({} then {})", w[0], w[1])));
    }
    let largest = sizes[sizes.len() - 1];
    if largest > pairs.len() {
        return Err(Error::validation(format!("ablation size {largest} exceeds the {} available pairs", pairs.len())));
    }
    let ordered = ablation_order(pairs, config.seed);
    sizes
        .iter()
        .map(|&s| {
            let adapter = fit(&ordered.prefix(s)?, config)?;
            let report = attack(&adapter)?;
            Ok(AblationPoint { n_train_pairs: s, train_time_seconds: adapter.meta().wall_time_seconds, sar: report.sar })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// One cell of a report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    /// Row label (method or configuration).
    pub method: String,
    pub victim: String,
    pub target: String,
    pub dataset: String,
    pub n_train: usize,
    pub sar: f64,
    pub train_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(Error::validation(format!("unknown report format {other:?}"))),
        }
    }
}

pub const REPORT_CSV_HEADER: [&str; 6] = ["victim", "target", "dataset", "n_train", "sar_percent", "train_time_s"];

/// SAR as a percentage with two decimals; a full score is written `100.0`,
/// as in the published tables.
pub fn format_percent(sar: f64) -> String {
    let s = format!("{:.2}", sar * 100.0);
    if s == "100.00" {
        "100.0".to_string()
    } else {
        s
    }
}

fn format_seconds(t: f64) -> String {
    format!("{t:.2}")
}

/// Renders records as a table. Markdown rows are `(dataset, method)` pairs
/// and columns are target models in first-appearance order; a training-time
/// column appears when any record carries a time.
pub fn render_report(records: &[ReportRecord], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(records),
        ReportFormat::Csv => render_csv(records),
    }
}

fn render_markdown(records: &[ReportRecord]) -> String {
    let mut targets: Vec<&str> = Vec::new();
    let mut rows: Vec<(&str, &str)> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), &ReportRecord> = BTreeMap::new();
    for r in records {
        let t = match targets.iter().position(|&x| x == r.target) {
            Some(i) => i,
            None => {
                targets.push(&r.target);
                targets.len() - 1
            }
        };
        let key = (r.dataset.as_str(), r.method.as_str());
        let row = match rows.iter().position(|&x| x == key) {
            Some(i) => i,
            None => {
                rows.push(key);
                rows.len() - 1
            }
        };
        cells.insert((row, t), r);
    }
    let timed = records.iter().any(|r| r.train_time_s > 0.0);

    let mut out = String::from("| Dataset | Method |");
    if timed {
        out.push_str(" Training Time (s) |");
    }
    for t in &targets {
        let _ = write!(out, " {t} |");
    }
    out.push_str("\n|---|---|");
    if timed {
        out.push_str("---|");
    }
    out.push_str(&"---|".repeat(targets.len()));
    out.push('\n');
    for (i, (dataset, method)) in rows.iter().enumerate() {
        let _ = write!(out, "| {dataset} | {method} |");
        if timed {
            let t = cells.range((i, 0)..(i + 1, 0)).map(|(_, r)| r.train_time_s).fold(0.0, f64::max);
            let _ = write!(out, " {} |", format_seconds(t));
        }
        for j in 0..targets.len() {
            match cells.get(&(i, j)) {
                Some(r) => {
                    let _ = write!(out, " {} |", format_percent(r.sar));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

fn render_csv(records: &[ReportRecord]) -> String {
    let mut out = REPORT_CSV_HEADER.join(",");
    out.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in records {
        // writing into a Vec cannot fail
        let _ = w.write_record([
            r.victim.clone(),
            r.target.clone(),
            r.dataset.clone(),
            r.n_train.to_string(),
            format_percent(r.sar),
            format_seconds(r.train_time_s),
        ]);
    }
    let body = w.into_inner().map(|b| String::from_utf8_lossy(&b).into_owned()).unwrap_or_default();
    out + &body
}

pub fn write_report<W: Write>(records: &[ReportRecord], format: ReportFormat, mut writer: W) -> Result<()> {
    writer.write_all(render_report(records, format).as_bytes())?;
    Ok(())
}

/// Reads a report CSV back. The row label of each record is its `n_train`.
pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ReportRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_CSV_HEADER {
        return Err(Error::format(format!("report csv header must be {}, found {}", REPORT_CSV_HEADER.join(","), header.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let num = |j: usize, what: &str| -> Result<f64> {
            row[j].parse::<f64>().map_err(|_| Error::format(format!("report csv line {line}: bad {what} {:?}", &row[j])))
        };
        let n_train: usize =
            row[3].parse().map_err(|_| Error::format(format!("report csv line {line}: bad n_train {:?}", &row[3])))?;
        out.push(ReportRecord {
            method: n_train.to_string(),
            victim: row[0].to_string(),
            target: row[1].to_string(),
            dataset: row[2].to_string(),
            n_train,
            sar: num(4, "sar_percent")? / 100.0,
            train_time_s: num(5, "train_time_s")?,
        });
    }
    Ok(out)
}
