//! Confidence scoring, the squashing map from confidence to penalty weight,
//! and the traffic-regularized objective.
//!
//! The objective on a labeled batch `L` and a traffic batch `T` is
//!
//! ```text
//! mean_{(x,y)∈L} −log p(y|x)  +  mean_{x∈T} β(x) · KL(U ‖ p(·|x))
//! ```
//!
//! where `β(x)` comes from the configured [`BetaMode`]. β is evaluated on the
//! same forward pass that produces the loss and is treated as a constant when
//! differentiating.

use std::fmt;
use std::sync::Arc;

use crate::data::Provenance;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Batch, Gradients, Model, PROB_FLOOR};

/// Default squashing sharpness.
pub const DEFAULT_GAMMA: f64 = 10.0;

/// How per-sample penalty weights are assigned to traffic.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaMode {
    /// β ≡ 0: plain cross-entropy.
    None,
    /// β ≡ β0 for every traffic sample.
    Fixed(f64),
    /// β(x) = φ_γ(max_k p(k|x)), recomputed on every forward pass.
    Adaptive { gamma: f64 },
    /// β = 0 for in-distribution traffic and 1 for out-of-distribution traffic,
    /// read from the provenance tags.
    Oracle,
    /// β read from a table indexed by traffic sample id.
    Frozen(Arc<Vec<f64>>),
}

impl BetaMode {
    pub fn name(&self) -> &'static str {
        match self {
            BetaMode::None => "none",
            BetaMode::Fixed(_) => "fixed",
            BetaMode::Adaptive { .. } => "adaptive",
            BetaMode::Oracle => "oracle",
            BetaMode::Frozen(_) => "frozen",
        }
    }
}

impl fmt::Display for BetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaMode::Fixed(b) => write!(f, "fixed({b})"),
            BetaMode::Adaptive { gamma } => write!(f, "adaptive({gamma})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Shape of the confidence-to-weight map used in adaptive mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SquashForm {
    /// `1 − 2·sigmoid(γ·(z − 0.5))`: zero at one half, negative above it.
    #[default]
    Centered,
    /// `1 − 2·(sigmoid(γ·z) − 0.5) = 2·sigmoid(−γ·z)`: strictly positive,
    /// decaying with confidence.
    Shifted,
}

impl SquashForm {
    pub fn name(self) -> &'static str {
        match self {
            SquashForm::Centered => "centered",
            SquashForm::Shifted => "shifted",
        }
    }
}

impl fmt::Display for SquashForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SquashForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(SquashForm::Centered),
            "shifted" => Ok(SquashForm::Shifted),
            other => Err(Error::invalid(format!("unknown squash form '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    pub mode: BetaMode,
    /// Clip every β into `[0, 1]`.
    pub clamp: bool,
    pub squash: SquashForm,
}

impl RegularizerConfig {
    pub fn none() -> Self {
        Self::with_mode(BetaMode::None)
    }

    pub fn fixed(beta: f64) -> Self {
        Self::with_mode(BetaMode::Fixed(beta))
    }

    pub fn adaptive(gamma: f64) -> Self {
        Self::with_mode(BetaMode::Adaptive { gamma })
    }

    pub fn oracle() -> Self {
        Self::with_mode(BetaMode::Oracle)
    }

    pub fn frozen(table: Vec<f64>) -> Self {
        Self::with_mode(BetaMode::Frozen(Arc::new(table)))
    }

    pub fn with_mode(mode: BetaMode) -> Self {
        RegularizerConfig {
            mode,
            clamp: true,
            squash: SquashForm::Centered,
        }
    }

    pub fn with_squash(mut self, squash: SquashForm) -> Self {
        self.squash = squash;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mode {
            BetaMode::Fixed(b) if !(*b >= 0.0 && b.is_finite()) => Err(Error::invalid(format!(
                "fixed beta must be finite and >= 0, got {b}"
            ))),
            BetaMode::Adaptive { gamma } if !(*gamma > 0.0 && gamma.is_finite()) => Err(
                Error::invalid(format!("gamma must be finite and > 0, got {gamma}")),
            ),
            BetaMode::Frozen(t) if t.iter().any(|b| !b.is_finite()) => {
                Err(Error::invalid("frozen beta table must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Whether this configuration can ever produce a non-zero weight.
    pub fn is_active(&self) -> bool {
        !matches!(self.mode, BetaMode::None)
    }
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self::adaptive(DEFAULT_GAMMA)
    }
}

/// Traffic rows as seen by the loss.
#[derive(Debug, Clone, Copy)]
pub struct TrafficView<'a> {
    pub features: &'a Matrix,
    /// Only consulted in oracle mode.
    pub provenance: Option<&'a [Provenance]>,
    /// Index of each row in the full traffic set; defaults to `0..n`.
    pub sample_ids: Option<&'a [usize]>,
}

impl<'a> TrafficView<'a> {
    pub fn new(features: &'a Matrix) -> Self {
        TrafficView {
            features,
            provenance: None,
            sample_ids: None,
        }
    }

    pub fn with_provenance(mut self, provenance: &'a [Provenance]) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn with_sample_ids(mut self, ids: &'a [usize]) -> Self {
        self.sample_ids = Some(ids);
        self
    }
}

/// The two addends of the objective plus the weights used.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy_term: f64,
    pub regularization_term: f64,
    pub per_sample_betas: Vec<f64>,
}

fn check_probability_row(row: &[f64]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::invalid("probability row is empty"));
    }
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("probability entries must lie in [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("probability row sums to {sum}")));
    }
    Ok(())
}

/// Largest entry and its index; ties resolve to the lowest index.
pub(crate) fn max_and_argmax(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > best.0 {
            best = (p, i);
        }
    }
    best
}

/// Maximum class probability `m(x)` and the class attaining it.
pub fn max_prob_score(probs_row: &[f64]) -> Result<(f64, usize)> {
    check_probability_row(probs_row)?;
    Ok(max_and_argmax(probs_row))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn squash_unchecked(z: f64, gamma: f64, clamp: bool) -> f64 {
    squash_form_unchecked(SquashForm::Centered, z, gamma, clamp)
}

#[inline]
pub(crate) fn squash_form_unchecked(form: SquashForm, z: f64, gamma: f64, clamp: bool) -> f64 {
    let raw = match form {
        SquashForm::Centered => 1.0 - 2.0 * sigmoid(gamma * (z - 0.5)),
        SquashForm::Shifted => 2.0 * sigmoid(-gamma * z),
    };
    if clamp {
        raw.clamp(0.0, 1.0)
    } else {
        raw
    }
}

/// `φ_γ(z) = 1 − 2·sigmoid(γ·(z − 0.5))`, optionally clipped to `[0, 1]`.
///
/// Zero at `z = 0.5`, approaching 1 as confidence falls and negative (before
/// clipping) above one half.
pub fn squash(z: f64, gamma: f64, clamp: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::invalid(format!(
            "squash input must lie in [0, 1], got {z}"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "gamma must be finite and > 0, got {gamma}"
        )));
    }
    Ok(squash_unchecked(z, gamma, clamp))
}

/// [`squash`] with an explicit [`SquashForm`].
pub fn squash_with(form: SquashForm, z: f64, gamma: f64, clamp: bool) -> Result<f64> {
    squash(z, gamma, clamp)?;
    Ok(squash_form_unchecked(form, z, gamma, clamp))
}

/// `KL(U ‖ p) = −log K − (1/K) Σ_k log p_k`, with `p_k` floored at 1e-12.
pub fn kl_uniform(probs_row: &[f64]) -> f64 {
    let k = probs_row.len() as f64;
    let mean_log = probs_row
        .iter()
        .map(|p| p.max(PROB_FLOOR).ln())
        .sum::<f64>()
        / k;
    -k.ln() - mean_log
}

/// Gradient of [`kl_uniform`] with respect to the logits: `p − 1/K`.
pub fn kl_uniform_logit_grad(probs_row: &[f64]) -> Vec<f64> {
    let u = 1.0 / probs_row.len() as f64;
    probs_row.iter().map(|p| p - u).collect()
}

/// Cross-entropy of one row against its label, with the probability floor.
pub fn cross_entropy(probs_row: &[f64], label: usize) -> f64 {
    -probs_row[label].max(PROB_FLOOR).ln()
}

fn betas_from_probs(
    probs: &Matrix,
    view: &TrafficView<'_>,
    config: &RegularizerConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = probs.rows();
    let betas: Vec<f64> = match &config.mode {
        BetaMode::None => vec![0.0; n],
        BetaMode::Fixed(b) => vec![*b; n],
        BetaMode::Adaptive { gamma } => probs
            .iter_rows()
            .map(|r| {
                squash_form_unchecked(config.squash, max_and_argmax(r).0, *gamma, config.clamp)
            })
            .collect(),
        BetaMode::Oracle => {
            let tags = view.provenance.ok_or(Error::MissingProvenance)?;
            if tags.len() != n {
                return Err(Error::invalid(format!(
                    "{} provenance tags for {n} traffic rows",
                    tags.len()
                )));
            }
            tags.iter()
                .map(|t| match t {
                    Provenance::InDist => 0.0,
                    Provenance::OutDist => 1.0,
                })
                .collect()
        }
        BetaMode::Frozen(table) => {
            let lookup = |id: usize| {
                table.get(id).copied().ok_or(Error::MissingBetaEntry {
                    index: id,
                    len: table.len(),
                })
            };
            match view.sample_ids {
                Some(ids) => {
                    if ids.len() != n {
                        return Err(Error::invalid("sample ids must align with traffic rows"));
                    }
                    ids.iter().map(|&id| lookup(id)).collect::<Result<_>>()?
                }
                None => (0..n).map(lookup).collect::<Result<_>>()?,
            }
        }
    };
    Ok(
        if config.clamp && !matches!(config.mode, BetaMode::Adaptive { .. }) {
            betas.into_iter().map(|b| b.clamp(0.0, 1.0)).collect()
        } else {
            betas
        },
    )
}

/// Per-sample penalty weights for a traffic batch under `config`.
///
/// Adaptive mode runs a fresh forward pass. The values are plain numbers: no
/// gradient ever flows through them.
pub fn compute_betas(
    model: &Model,
    view: &TrafficView<'_>,
    config: &RegularizerConfig,
) -> Result<Vec<f64>> {
    if view.features.rows() == 0 {
        return Ok(Vec::new());
    }
    let probs = match config.mode {
        BetaMode::Adaptive { .. } => model.predict(view.features)?,
        // only the row count matters
        _ => Matrix::zeros(view.features.rows(), model.num_classes()),
    };
    betas_from_probs(&probs, view, config)
}

/// Mean cross-entropy over a labeled batch and its gradient.
pub fn cross_entropy_loss(model: &Model, labeled: &Batch) -> Result<(f64, Gradients)> {
    let labels = labeled
        .labels
        .as_deref()
        .ok_or_else(|| Error::invalid("labeled batch has no labels"))?;
    if labeled.is_empty() {
        return Err(Error::invalid("labeled batch is empty"));
    }
    let k = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let fp = model.forward(&labeled.features)?;
    let n = labeled.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = fp.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss += cross_entropy(fp.probs.row(i), y);
        let row = d_logits.row_mut(i);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let grads = model.backward(&fp.trace, &d_logits)?;
    Ok((loss / n, grads))
}

/// Mean of `β_i · KL(U ‖ p_i)` over the traffic rows and its gradient, for
/// externally supplied β.
pub fn weighted_kl_loss(
    model: &Model,
    traffic: &Matrix,
    betas: &[f64],
) -> Result<(f64, Gradients)> {
    if traffic.rows() == 0 {
        return Err(Error::invalid("traffic batch is empty"));
    }
    if betas.len() != traffic.rows() {
        return Err(Error::invalid(format!(
            "{} betas for {} traffic rows",
            betas.len(),
            traffic.rows()
        )));
    }
    let fp = model.forward(traffic)?;
    weighted_kl_from_forward(model, &fp, betas)
}

fn weighted_kl_from_forward(
    model: &Model,
    fp: &crate::nn::ForwardPass,
    betas: &[f64],
) -> Result<(f64, Gradients)> {
    let n = fp.probs.rows() as f64;
    let u = 1.0 / model.num_classes() as f64;
    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(fp.probs.rows(), fp.probs.cols());
    for (i, &beta) in betas.iter().enumerate() {
        let p = fp.probs.row(i);
        loss += beta * kl_uniform(p);
        for (d, &pk) in d_logits.row_mut(i).iter_mut().zip(p) {
            *d = beta * (pk - u) / n;
        }
    }
    let grads = model.backward(&fp.trace, &d_logits)?;
    Ok((loss / n, grads))
}

/// Objective with β supplied by the caller (held constant).
pub fn traffic_loss_with_betas(
    model: &Model,
    labeled: &Batch,
    traffic: &Matrix,
    betas: &[f64],
) -> Result<(LossBreakdown, Gradients)> {
    let (ce, mut grads) = cross_entropy_loss(model, labeled)?;
    let (reg, reg_grads) = weighted_kl_loss(model, traffic, betas)?;
    grads.add_assign(&reg_grads);
    Ok((
        LossBreakdown {
            total: ce + reg,
            cross_entropy_term: ce,
            regularization_term: reg,
            per_sample_betas: betas.to_vec(),
        },
        grads,
    ))
}

/// Traffic-regularized objective and its gradient with stop-gradient β.
pub fn traffic_loss(
    model: &Model,
    labeled: &Batch,
    traffic: &TrafficView<'_>,
    config: &RegularizerConfig,
) -> Result<(LossBreakdown, Gradients)> {
    if traffic.features.rows() == 0 {
        return Err(Error::invalid("traffic batch is empty"));
    }
    let (ce, mut grads) = cross_entropy_loss(model, labeled)?;
    let fp = model.forward(traffic.features)?;
    let betas = betas_from_probs(&fp.probs, traffic, config)?;
    let (reg, reg_grads) = weighted_kl_from_forward(model, &fp, &betas)?;
    grads.add_assign(&reg_grads);
    Ok((
        LossBreakdown {
            total: ce + reg,
            cross_entropy_term: ce,
            regularization_term: reg,
            per_sample_betas: betas,
        },
        grads,
    ))
}

/// Cross-entropy plus a constant-β uniformity penalty on known out-of-distribution rows.
pub fn confidence_loss(
    model: &Model,
    labeled: &Batch,
    out_samples: &Matrix,
    beta: f64,
) -> Result<(LossBreakdown, Gradients)> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta must be finite and >= 0"));
    }
    traffic_loss_with_betas(model, labeled, out_samples, &vec![beta; out_samples.rows()])
}
