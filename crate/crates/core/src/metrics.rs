//! Verification scoring: cosine similarity, genuine/impostor score sets and
//! operating-point calibration at a target false match rate.
//!
//! The decision rule is `accept ⇔ score ≥ τ`. Calibration picks the smallest
//! candidate threshold whose empirical FMR does not exceed the target, where
//! the candidates are the distinct impostor scores plus one sentinel just above
//! the largest of them. No interpolation happens between scores, so the result
//! is reproducible by a brute-force scan.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Offset of the zero-false-match sentinel above the largest impostor score.
pub const SENTINEL_OFFSET: f64 = 1e-6;

/// Slack allowed on the `[-1, 1]` range of cosine scores.
pub const COSINE_SLACK: f64 = 1e-6;

/// Cosine similarity `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::validation(format!("cosine of vectors with dims {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if !(nu > T::zero()) || !(nv > T::zero()) {
        return Err(Error::DegenerateInput("cosine of a zero vector".into()));
    }
    let c = dot / (nu.sqrt() * nv.sqrt());
    Ok(c.max(-T::one()).min(T::one()))
}

/// Cosine of two stored embeddings, accumulated in f64.
pub fn cosine_f32(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::validation(format!("cosine of vectors with dims {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if !(nu > 0.0) || !(nv > 0.0) {
        return Err(Error::DegenerateInput("cosine of a zero vector".into()));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Genuine (same subject) and impostor (different subject) comparison scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        if genuine.iter().chain(&impostor).any(|s| !s.is_finite()) {
            return Err(Error::validation("scores must be finite"));
        }
        Ok(Self { genuine, impostor })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub target_fmr: f64,
    pub threshold: f64,
    pub achieved_fmr: f64,
    pub tmr: f64,
    /// Set when there were no genuine scores; `tmr` is then 0.
    pub genuine_empty: bool,
}

/// Unit-normalized rows in f64; errors name the zero-norm record.
fn unit_rows(set: &EmbeddingSet) -> Result<Matrix<f64>> {
    let mut m = set.to_matrix::<f64>();
    for (i, r) in set.records().iter().enumerate() {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::DegenerateInput(format!("vector {} has zero norm", r.key)));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(m)
}

/// Scores every probe against every gallery record except identical
/// `(subject_id, sample_id)` self-pairs, in probe-major order.
pub fn build_scores(probes: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<ScoreSet> {
    if probes.dim() != gallery.dim() {
        return Err(Error::validation(format!(
            "probe dim {} differs from gallery dim {}",
            probes.dim(),
            gallery.dim()
        )));
    }
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::validation("probe and gallery sets must be non-empty"));
    }
    let p = unit_rows(probes)?;
    let g = unit_rows(gallery)?;
    let sim = p.matmul_t(&g);
    let mut scores = ScoreSet::default();
    for (i, pr) in probes.records().iter().enumerate() {
        for (j, gr) in gallery.records().iter().enumerate() {
            if pr.key == gr.key {
                continue;
            }
            let s = sim.get(i, j).clamp(-1.0, 1.0);
            if pr.key.subject_id == gr.key.subject_id {
                scores.genuine.push(s);
            } else {
                scores.impostor.push(s);
            }
        }
    }
    Ok(scores)
}

fn rate(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

/// Fraction of `scores` at or above `threshold`.
fn accept_rate(scores: &[f64], threshold: f64) -> f64 {
    rate(scores.iter().filter(|&&s| s >= threshold).count(), scores.len())
}

/// Calibrates `τ` so that the empirical FMR is at most `target_fmr`.
pub fn calibrate_threshold(scores: &ScoreSet, target_fmr: f64) -> Result<OperatingPoint> {
    if !(target_fmr > 0.0 && target_fmr < 1.0) {
        return Err(Error::Calibration(format!("target FMR must lie in (0, 1), got {target_fmr}")));
    }
    if scores.impostor.is_empty() {
        return Err(Error::Calibration("no impostor scores to calibrate on".into()));
    }
    if scores.impostor.iter().any(|s| !s.is_finite()) {
        return Err(Error::Calibration("impostor scores must be finite".into()));
    }
    let mut imp = scores.impostor.clone();
    imp.sort_by(f64::total_cmp);
    let n = imp.len();
    let sentinel = imp[n - 1] + SENTINEL_OFFSET;
    let mut threshold = sentinel;
    let mut achieved = 0.0;
    // first index of each distinct value, ascending; FMR there is (n - i) / n
    let mut i = 0;
    while i < n {
        let fmr = rate(n - i, n);
        if fmr <= target_fmr {
            threshold = imp[i];
            achieved = fmr;
            break;
        }
        let v = imp[i];
        while i < n && imp[i] == v {
            i += 1;
        }
    }
    let genuine_empty = scores.genuine.is_empty();
    let tmr = if genuine_empty { 0.0 } else { accept_rate(&scores.genuine, threshold) };
    Ok(OperatingPoint { target_fmr, threshold, achieved_fmr: achieved, tmr, genuine_empty })
}

/// True match rate at `threshold`.
pub fn tmr_at(scores: &ScoreSet, threshold: f64) -> Result<f64> {
    if scores.genuine.is_empty() {
        return Err(Error::validation("TMR needs at least one genuine score"));
    }
    Ok(accept_rate(&scores.genuine, threshold))
}

/// False match rate at `threshold`.
pub fn fmr_at(scores: &ScoreSet, threshold: f64) -> Result<f64> {
    if scores.impostor.is_empty() {
        return Err(Error::validation("FMR needs at least one impostor score"));
    }
    Ok(accept_rate(&scores.impostor, threshold))
}

/// Writes `label,score` rows, genuine first.
pub fn write_scores_csv<W: Write>(scores: &ScoreSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "score"])?;
    for (label, list) in [("genuine", &scores.genuine), ("impostor", &scores.impostor)] {
        for s in list {
            w.write_record([label, &s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(reader: R) -> Result<ScoreSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "label" || &header[1] != "score" {
        return Err(Error::format("score csv header must be label,score"));
    }
    let mut scores = ScoreSet::default();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let s: f64 = row[1]
            .trim()
            .parse()
            .map_err(|e| Error::format(format!("score csv row {}: {e}", line + 2)))?;
        match &row[0] {
            "genuine" => scores.genuine.push(s),
            "impostor" => scores.impostor.push(s),
            other => return Err(Error::format(format!("score csv row {}: unknown label {other:?}", line + 2))),
        }
    }
    ScoreSet::new(scores.genuine, scores.impostor)
}
