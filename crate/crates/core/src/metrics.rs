//! Detection and classification metrics.

use crate::data::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Model;
use crate::regularizers::max_and_argmax;

/// Thresholded max-probability detector: in-distribution iff `score >= threshold`.
pub fn detect(score: f64, threshold: f64) -> Provenance {
    if score >= threshold {
        Provenance::InDist
    } else {
        Provenance::OutDist
    }
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("{name} scores are empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("{name} scores must be finite")));
    }
    Ok(())
}

/// Best balanced accuracy of [`detect`] over all thresholds.
///
/// Candidate thresholds are −∞, +∞ and the midpoints between adjacent distinct
/// scores, so the result is at least 0.5 and depends only on score ranks.
pub fn detection_accuracy(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    Ok(best_threshold(in_scores, out_scores)?.1)
}

/// Threshold achieving [`detection_accuracy`] (the first one, scanning upward) and its accuracy.
pub fn best_threshold(in_scores: &[f64], out_scores: &[f64]) -> Result<(f64, f64)> {
    check_scores("in-distribution", in_scores)?;
    check_scores("out-of-distribution", out_scores)?;

    let mut all: Vec<(f64, Provenance)> = in_scores
        .iter()
        .map(|&s| (s, Provenance::InDist))
        .chain(out_scores.iter().map(|&s| (s, Provenance::OutDist)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (n_in, n_out) = (in_scores.len() as f64, out_scores.len() as f64);
    let balanced = |in_below: usize, out_below: usize| {
        0.5 * (n_in - in_below as f64) / n_in + 0.5 * out_below as f64 / n_out
    };
    // τ = −∞
    let mut best = (f64::NEG_INFINITY, balanced(0, 0));
    let (mut in_below, mut out_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            match all[i].1 {
                Provenance::InDist => in_below += 1,
                Provenance::OutDist => out_below += 1,
            }
            i += 1;
        }
        let tau = if i < all.len() {
            0.5 * (v + all[i].0)
        } else {
            f64::INFINITY
        };
        let acc = balanced(in_below, out_below);
        if acc > best.1 {
            best = (tau, acc);
        }
    }
    Ok(best)
}

/// Micro-averaged average precision over all `(sample, class)` pairs.
///
/// Every pair is scored by its class probability and is positive when the
/// class is the sample's label. Pairs are ranked by descending score with
/// equal scores forming one group, and precision is accumulated step-wise at
/// each group boundary.
pub fn aupr_micro(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    validate_probs(probs, labels)?;
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(probs.rows() * probs.cols());
    for (row, &y) in probs.iter_rows().zip(labels) {
        pairs.extend(row.iter().enumerate().map(|(k, &p)| (p, k == y)));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total_pos = labels.len() as f64;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        let mut new_tp = 0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 {
                new_tp += 1;
            }
            seen += 1;
            i += 1;
        }
        if new_tp > 0 {
            tp += new_tp;
            ap += (new_tp as f64 / total_pos) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

fn validate_probs(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() == 0 {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    if labels.len() != probs.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} prediction rows",
            labels.len(),
            probs.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.cols()) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    if probs.as_slice().iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("predictions must be finite"));
    }
    Ok(())
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn classification_accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    validate_probs(probs, labels)?;
    let hits = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| max_and_argmax(row).1 == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Population mean and standard deviation of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl GroupStats {
    pub fn of(values: &[f64]) -> Option<GroupStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(GroupStats {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BetaStats {
    pub in_dist: Option<GroupStats>,
    pub out_dist: Option<GroupStats>,
}

/// Per-provenance statistics of β. A group with no members is `None`.
pub fn beta_stats(betas: &[f64], provenance: &[Provenance]) -> Result<BetaStats> {
    if betas.len() != provenance.len() {
        return Err(Error::invalid("betas and provenance tags must align"));
    }
    let (ins, outs) = split_by_provenance(betas, provenance);
    Ok(BetaStats {
        in_dist: GroupStats::of(&ins),
        out_dist: GroupStats::of(&outs),
    })
}

pub(crate) fn split_by_provenance(
    values: &[f64],
    provenance: &[Provenance],
) -> (Vec<f64>, Vec<f64>) {
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for (&v, &p) in values.iter().zip(provenance) {
        match p {
            Provenance::InDist => ins.push(v),
            Provenance::OutDist => outs.push(v),
        }
    }
    (ins, outs)
}

/// Counts of `values` in `bins` equal-width bins over `[0, 1]`; values outside
/// the range land in the edge bins.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins.max(1)];
    let last = counts.len() - 1;
    for &v in values {
        let idx = if v.is_nan() || v <= 0.0 {
            0
        } else {
            ((v * counts.len() as f64) as usize).min(last)
        };
        counts[idx] += 1;
    }
    counts
}

/// Held-out data used for per-epoch evaluation.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub in_test: LabeledDataset,
    /// Rows treated as out-of-distribution by the detector.
    pub out_test: Matrix,
}

/// Metrics of one model on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub epoch: usize,
    pub aupr_micro: f64,
    pub detection_accuracy: f64,
    pub classification_accuracy: f64,
    /// β over the traffic set, grouped by provenance.
    pub beta_stats: BetaStats,
}

/// Max-probability score of every row.
pub fn max_prob_scores(model: &Model, features: &Matrix) -> Result<Vec<f64>> {
    let probs = model.predict(features)?;
    Ok(probs.iter_rows().map(|r| max_and_argmax(r).0).collect())
}

/// AUPR, classification accuracy on `in_test` and detection accuracy of
/// `in_test` against `out_test`.
pub fn evaluate(model: &Model, sets: &EvalSets) -> Result<MetricsReport> {
    let probs = model.predict(&sets.in_test.features)?;
    let in_scores: Vec<f64> = probs.iter_rows().map(|r| max_and_argmax(r).0).collect();
    let out_scores = max_prob_scores(model, &sets.out_test)?;
    Ok(MetricsReport {
        epoch: 0,
        aupr_micro: aupr_micro(&probs, &sets.in_test.labels)?,
        detection_accuracy: detection_accuracy(&in_scores, &out_scores)?,
        classification_accuracy: classification_accuracy(&probs, &sets.in_test.labels)?,
        beta_stats: BetaStats::default(),
    })
}
