//! Minibatch SGD with momentum over the traffic-regularized objective.
//!
//! Every random choice is keyed by `(seed, stream, epoch)`, with epochs
//! numbered globally across phases. A run that stops after phase one is
//! therefore bit-identical to a plain run of the same length.

use crate::data::{LabeledDataset, Provenance, TrafficSet};
use crate::error::{Error, Result};
use crate::metrics::{beta_stats, evaluate, EvalSets, MetricsReport};
use crate::nn::{Gradients, Model, ModelSpec};
use crate::regularizers::{
    compute_betas, cross_entropy_loss, traffic_loss, BetaMode, RegularizerConfig, SquashForm,
    TrafficView, DEFAULT_GAMMA,
};
use crate::rng::SeedStream;
use rand::seq::SliceRandom;

/// Holdout AUPR tolerance when tuning γ.
pub const GAMMA_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct FineTune {
    pub base_epochs: usize,
    pub tune_epochs: usize,
    pub tune_regularizer: RegularizerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub regularizer: RegularizerConfig,
    pub fine_tune: Option<FineTune>,
    /// γ used for the per-epoch β snapshot of the traffic set, independent of
    /// the training mode.
    pub snapshot_gamma: f64,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> Self {
        TrainConfig {
            model,
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            regularizer: RegularizerConfig::none(),
            fine_tune: None,
            snapshot_gamma: DEFAULT_GAMMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.snapshot_gamma > 0.0 && self.snapshot_gamma.is_finite()) {
            return Err(Error::invalid("snapshot_gamma must be positive"));
        }
        self.regularizer.validate()?;
        if let Some(ft) = &self.fine_tune {
            ft.tune_regularizer.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Labeled data only (or the single phase of a plain run).
    Base,
    FineTune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::FineTune => "fine_tune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub metrics: MetricsReport,
    /// Adaptive β of every traffic sample at the end of the epoch.
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub model: Model,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.epochs.last().map(|e| &e.metrics)
    }

    fn append(&mut self, other: TrainHistory) {
        self.epochs.extend(other.epochs);
        self.model = other.model;
    }
}

struct Session<'a> {
    config: &'a TrainConfig,
    data: &'a LabeledDataset,
    traffic: Option<&'a TrafficSet>,
    eval: &'a EvalSets,
    model: Model,
    velocity: Gradients,
    root: SeedStream,
}

impl<'a> Session<'a> {
    fn new(
        config: &'a TrainConfig,
        model: Model,
        data: &'a LabeledDataset,
        traffic: Option<&'a TrafficSet>,
        eval: &'a EvalSets,
    ) -> Result<Self> {
        config.validate()?;
        let spec = model.spec();
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if data.dim() != spec.input_dim() || data.num_classes != spec.num_classes() {
            return Err(Error::invalid(format!(
                "training data (d={}, k={}) does not fit the model (d={}, k={})",
                data.dim(),
                data.num_classes,
                spec.input_dim(),
                spec.num_classes()
            )));
        }
        if let Some(t) = traffic {
            if !t.is_empty() && t.features.cols() != spec.input_dim() {
                return Err(Error::invalid("traffic width does not match the model"));
            }
        }
        let velocity = Gradients::zeros_like(&model);
        Ok(Session {
            config,
            data,
            traffic,
            eval,
            model,
            velocity,
            root: SeedStream::new(config.seed),
        })
    }

    fn run(
        &mut self,
        epochs: std::ops::RangeInclusive<usize>,
        reg: &RegularizerConfig,
        phase: Phase,
    ) -> Result<Vec<EpochRecord>> {
        reg.validate()?;
        let traffic = match self.traffic.filter(|t| !t.is_empty()) {
            _ if !reg.is_active() => None,
            Some(t) => Some(t),
            None => {
                return Err(Error::invalid(format!(
                    "regularizer `{}` needs a non-empty traffic set",
                    reg.mode
                )))
            }
        };
        let mut records = Vec::new();
        for epoch in epochs {
            let mean_loss = self.epoch(epoch, reg, traffic)?;
            records.push(self.record(epoch, phase, mean_loss)?);
        }
        Ok(records)
    }

    fn epoch(
        &mut self,
        epoch: usize,
        reg: &RegularizerConfig,
        traffic: Option<&TrafficSet>,
    ) -> Result<f64> {
        let n = self.data.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.root.named("labeled").split(epoch as u64).rng());

        let mut traffic_order: Vec<usize> = Vec::new();
        if let Some(t) = traffic {
            traffic_order = (0..t.len()).collect();
            traffic_order.shuffle(&mut self.root.named("traffic").split(epoch as u64).rng());
        }
        let mut cursor = 0usize;
        let oracle = matches!(reg.mode, BetaMode::Oracle);

        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let labeled = self.data.batch(chunk)?;
            let (loss, grads) = match traffic {
                Some(t) => {
                    let ids: Vec<usize> = (0..chunk.len())
                        .map(|j| traffic_order[(cursor + j) % traffic_order.len()])
                        .collect();
                    cursor = (cursor + chunk.len()) % traffic_order.len();
                    let features = t.features.select_rows(&ids);
                    let tags: Vec<Provenance>;
                    let mut view = TrafficView::new(&features).with_sample_ids(&ids);
                    if oracle {
                        tags = ids.iter().map(|&i| t.provenance[i]).collect();
                        view = view.with_provenance(&tags);
                    }
                    let (breakdown, g) = traffic_loss(&self.model, &labeled, &view, reg)?;
                    (breakdown.total, g)
                }
                None => cross_entropy_loss(&self.model, &labeled)?,
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            self.step(&grads);
            total += loss;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    /// `v ← μv + g;  θ ← θ − ηv`.
    fn step(&mut self, grads: &Gradients) {
        let mu = self.config.momentum;
        for (v, g) in self.velocity.layers.iter_mut().zip(&grads.layers) {
            for (vv, gg) in v
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(g.weights.as_slice())
            {
                *vv = mu * *vv + gg;
            }
            for (vv, gg) in v.biases.iter_mut().zip(&g.biases) {
                *vv = mu * *vv + gg;
            }
        }
        self.model
            .add_scaled(&self.velocity, -self.config.learning_rate);
    }

    fn record(&self, epoch: usize, phase: Phase, mean_loss: f64) -> Result<EpochRecord> {
        let mut metrics = evaluate(&self.model, self.eval)?;
        metrics.epoch = epoch;
        let mut betas = Vec::new();
        if let Some(t) = self.traffic.filter(|t| !t.is_empty()) {
            let snapshot = RegularizerConfig::adaptive(self.config.snapshot_gamma)
                .with_squash(self.config.regularizer.squash);
            betas = compute_betas(&self.model, &TrafficView::new(&t.features), &snapshot)?;
            metrics.beta_stats = beta_stats(&betas, &t.provenance)?;
        }
        Ok(EpochRecord {
            epoch,
            phase,
            mean_loss,
            metrics,
            betas,
        })
    }

    fn into_history(self, epochs: Vec<EpochRecord>) -> TrainHistory {
        TrainHistory {
            epochs,
            model: self.model,
        }
    }
}

/// Trains a freshly initialized model for `config.epochs` epochs with
/// `config.regularizer`.
///
/// With mode `none` the traffic set is never read.
pub fn train(
    config: &TrainConfig,
    data: &LabeledDataset,
    traffic: Option<&TrafficSet>,
    eval: &EvalSets,
) -> Result<TrainHistory> {
    let model = init_for(config);
    let mut s = Session::new(config, model, data, traffic, eval)?;
    let records = s.run(1..=config.epochs, &config.regularizer, Phase::Base)?;
    Ok(s.into_history(records))
}

fn init_for(config: &TrainConfig) -> Model {
    Model::init(
        config.model.clone(),
        SeedStream::new(config.seed).named("model").value(),
    )
}

/// Continues training `base` (which has completed `epochs_done` epochs) for
/// `tune_epochs` epochs under `regularizer`, starting from zero momentum.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune_from(
    base: &Model,
    epochs_done: usize,
    config: &TrainConfig,
    regularizer: &RegularizerConfig,
    tune_epochs: usize,
    data: &LabeledDataset,
    traffic: Option<&TrafficSet>,
    eval: &EvalSets,
) -> Result<TrainHistory> {
    let mut s = Session::new(config, base.clone(), data, traffic, eval)?;
    let records = s.run(
        epochs_done + 1..=epochs_done + tune_epochs,
        regularizer,
        Phase::FineTune,
    )?;
    Ok(s.into_history(records))
}

/// Two-phase schedule: `base_epochs` on labeled data alone, then
/// `tune_epochs` with the fine-tune regularizer on the traffic set.
pub fn online_fine_tune(
    config: &TrainConfig,
    data: &LabeledDataset,
    traffic: &TrafficSet,
    eval: &EvalSets,
) -> Result<TrainHistory> {
    let ft = config
        .fine_tune
        .as_ref()
        .ok_or_else(|| Error::invalid("online fine-tuning needs a fine_tune schedule"))?;
    let base = base_phase(config, ft.base_epochs, data, Some(traffic), eval)?;
    let mut history = base.clone();
    let tuned = fine_tune_from(
        &base.model,
        ft.base_epochs,
        config,
        &ft.tune_regularizer,
        ft.tune_epochs,
        data,
        Some(traffic),
        eval,
    )?;
    history.append(tuned);
    Ok(history)
}

/// Phase one of the online schedule: `epochs` epochs of plain cross-entropy.
///
/// The traffic set is only used for the β snapshots.
pub fn base_phase(
    config: &TrainConfig,
    epochs: usize,
    data: &LabeledDataset,
    traffic: Option<&TrafficSet>,
    eval: &EvalSets,
) -> Result<TrainHistory> {
    let model = init_for(config);
    let mut s = Session::new(config, model, data, traffic, eval)?;
    let records = s.run(1..=epochs, &RegularizerConfig::none(), Phase::Base)?;
    Ok(s.into_history(records))
}

/// Computes adaptive β once from `base` and fine-tunes with those weights held fixed.
#[allow(clippy::too_many_arguments)]
pub fn freeze_and_fine_tune(
    base: &Model,
    epochs_done: usize,
    config: &TrainConfig,
    tune_epochs: usize,
    gamma: f64,
    data: &LabeledDataset,
    traffic: &TrafficSet,
    eval: &EvalSets,
) -> Result<TrainHistory> {
    let table = frozen_table(base, traffic, gamma, config.regularizer.squash)?;
    fine_tune_from(
        base,
        epochs_done,
        config,
        &RegularizerConfig::frozen(table),
        tune_epochs,
        data,
        Some(traffic),
        eval,
    )
}

/// Adaptive β of every traffic sample under `model`.
pub fn frozen_table(
    model: &Model,
    traffic: &TrafficSet,
    gamma: f64,
    squash: SquashForm,
) -> Result<Vec<f64>> {
    let reg = RegularizerConfig::adaptive(gamma).with_squash(squash);
    compute_betas(model, &TrafficView::new(&traffic.features), &reg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaChoice {
    pub gamma: f64,
    /// No grid value met the tolerance; `gamma` is the largest one.
    pub fallback: bool,
    pub baseline_aupr: f64,
    /// `(γ, holdout AUPR)` for every value trained, in grid order.
    pub evaluated: Vec<(f64, f64)>,
}

/// Smallest γ in `grid` whose adaptive model keeps holdout AUPR within
/// [`GAMMA_TOLERANCE`] of the unregularized baseline.
///
/// `holdout.in_test` is the in-distribution holdout.
pub fn tune_gamma(
    grid: &[f64],
    base_config: &TrainConfig,
    data: &LabeledDataset,
    traffic: &TrafficSet,
    holdout: &EvalSets,
) -> Result<GammaChoice> {
    if grid.is_empty() {
        return Err(Error::invalid("gamma grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::invalid(
            "gamma grid must be positive and strictly ascending",
        ));
    }
    let mut cfg = base_config.clone();
    cfg.regularizer = RegularizerConfig::none();
    cfg.fine_tune = None;
    let baseline = train(&cfg, data, Some(traffic), holdout)?;
    let baseline_aupr = baseline.final_metrics().map_or(0.0, |m| m.aupr_micro);

    let mut evaluated = Vec::with_capacity(grid.len());
    for &gamma in grid {
        cfg.regularizer = RegularizerConfig {
            mode: BetaMode::Adaptive { gamma },
            ..base_config.regularizer.clone()
        };
        let h = train(&cfg, data, Some(traffic), holdout)?;
        let aupr = h.final_metrics().map_or(0.0, |m| m.aupr_micro);
        evaluated.push((gamma, aupr));
        if aupr >= baseline_aupr - GAMMA_TOLERANCE {
            return Ok(GammaChoice {
                gamma,
                fallback: false,
                baseline_aupr,
                evaluated,
            });
        }
    }
    Ok(GammaChoice {
        gamma: *grid.last().expect("non-empty"),
        fallback: true,
        baseline_aupr,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_in_distribution, gen_out_distribution, mix_traffic, MixSpec, OutKind};
    use crate::nn::Activation;

    struct Fixture {
        data: LabeledDataset,
        traffic: TrafficSet,
        eval: EvalSets,
        config: TrainConfig,
    }

    fn fixture() -> Fixture {
        let data = gen_in_distribution(3, 60, 0.4, 1).unwrap();
        let test = gen_in_distribution(3, 30, 0.4, 2).unwrap();
        let in_pool = gen_in_distribution(3, 40, 0.4, 3).unwrap().features;
        let out_pool = gen_out_distribution(OutKind::ring(), 100, 4).unwrap();
        let traffic = mix_traffic(
            &in_pool,
            &out_pool,
            MixSpec {
                in_fraction: 0.5,
                size: 100,
                seed: 5,
            },
        )
        .unwrap();
        let eval = EvalSets {
            in_test: test,
            out_test: gen_out_distribution(OutKind::ring(), 60, 6).unwrap(),
        };
        let mut config = TrainConfig::new(ModelSpec::new(2, vec![8], 3, Activation::Relu).unwrap());
        config.epochs = 4;
        config.batch_size = 16;
        config.seed = 11;
        Fixture {
            data,
            traffic,
            eval,
            config,
        }
    }

    #[test]
    fn training_is_deterministic() {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.regularizer = RegularizerConfig::adaptive(10.0);
        let a = train(&cfg, &f.data, Some(&f.traffic), &f.eval).unwrap();
        let b = train(&cfg, &f.data, Some(&f.traffic), &f.eval).unwrap();
        assert_eq!(a, b);
        cfg.seed += 1;
        let c = train(&cfg, &f.data, Some(&f.traffic), &f.eval).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn mode_none_never_reads_traffic() {
        let f = fixture();
        let with = train(&f.config, &f.data, Some(&f.traffic), &f.eval).unwrap();
        let without = train(&f.config, &f.data, None, &f.eval).unwrap();
        assert_eq!(with.model, without.model);
    }

    #[test]
    fn active_regularizer_needs_traffic() {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.regularizer = RegularizerConfig::fixed(1.0);
        assert!(matches!(
            train(&cfg, &f.data, None, &f.eval),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn history_records_every_epoch_with_snapshots() {
        let f = fixture();
        let h = train(&f.config, &f.data, Some(&f.traffic), &f.eval).unwrap();
        assert_eq!(
            h.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        for e in &h.epochs {
            assert_eq!(e.betas.len(), f.traffic.len());
            assert_eq!(e.phase, Phase::Base);
            assert!(
                e.metrics.beta_stats.in_dist.is_some() && e.metrics.beta_stats.out_dist.is_some()
            );
        }
    }

    #[test]
    fn online_without_tuning_equals_plain_training() {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.fine_tune = Some(FineTune {
            base_epochs: 4,
            tune_epochs: 0,
            tune_regularizer: RegularizerConfig::adaptive(10.0),
        });
        let online = online_fine_tune(&cfg, &f.data, &f.traffic, &f.eval).unwrap();
        let plain = train(&f.config, &f.data, Some(&f.traffic), &f.eval).unwrap();
        assert_eq!(online, plain);
    }

    #[test]
    fn online_history_spans_both_phases() {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.fine_tune = Some(FineTune {
            base_epochs: 3,
            tune_epochs: 2,
            tune_regularizer: RegularizerConfig::adaptive(10.0),
        });
        let h = online_fine_tune(&cfg, &f.data, &f.traffic, &f.eval).unwrap();
        let phases: Vec<_> = h.epochs.iter().map(|e| (e.epoch, e.phase)).collect();
        assert_eq!(
            phases,
            vec![
                (1, Phase::Base),
                (2, Phase::Base),
                (3, Phase::Base),
                (4, Phase::FineTune),
                (5, Phase::FineTune)
            ]
        );
    }

    #[test]
    fn zero_tune_epochs_leave_the_model_unchanged() {
        let f = fixture();
        let base = train(&f.config, &f.data, None, &f.eval).unwrap();
        let h = freeze_and_fine_tune(
            &base.model,
            4,
            &f.config,
            0,
            10.0,
            &f.data,
            &f.traffic,
            &f.eval,
        )
        .unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(h.model, base.model);
    }

    #[test]
    fn frozen_table_matches_adaptive_betas_of_the_base() {
        let f = fixture();
        let base = train(&f.config, &f.data, None, &f.eval).unwrap();
        let table = frozen_table(&base.model, &f.traffic, 10.0, SquashForm::Centered).unwrap();
        let direct = compute_betas(
            &base.model,
            &TrafficView::new(&f.traffic.features),
            &RegularizerConfig::adaptive(10.0),
        )
        .unwrap();
        assert_eq!(table, direct);
    }

    #[test]
    fn oracle_mode_trains_with_provenance() {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.regularizer = RegularizerConfig::oracle();
        let h = train(&cfg, &f.data, Some(&f.traffic), &f.eval).unwrap();
        assert_eq!(h.epochs.len(), 4);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = gen_in_distribution(2, 100, 0.3, 21).unwrap();
        let eval = EvalSets {
            in_test: gen_in_distribution(2, 100, 0.3, 22).unwrap(),
            out_test: gen_out_distribution(OutKind::ring(), 50, 23).unwrap(),
        };
        let mut cfg = TrainConfig::new(ModelSpec::new(2, vec![16], 2, Activation::Relu).unwrap());
        cfg.epochs = 50;
        let h = train(&cfg, &data, None, &eval).unwrap();
        assert!(h.final_metrics().unwrap().classification_accuracy >= 0.99);
    }

    #[test]
    fn divergence_is_reported_with_position() {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.learning_rate = 1e300;
        match train(&cfg, &f.data, None, &f.eval) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.momentum = 1.0;
        assert!(train(&cfg, &f.data, None, &f.eval).is_err());
        let mut cfg = f.config.clone();
        cfg.epochs = 0;
        assert!(train(&cfg, &f.data, None, &f.eval).is_err());
        let mut cfg = f.config.clone();
        cfg.model = ModelSpec::new(3, vec![], 3, Activation::Relu).unwrap();
        assert!(train(&cfg, &f.data, None, &f.eval).is_err());
    }

    #[test]
    fn gamma_grid_rules() {
        let f = fixture();
        let holdout = f.eval.clone();
        assert!(tune_gamma(&[], &f.config, &f.data, &f.traffic, &holdout).is_err());
        assert!(tune_gamma(&[5.0, 1.0], &f.config, &f.data, &f.traffic, &holdout).is_err());
        let one = tune_gamma(&[7.0], &f.config, &f.data, &f.traffic, &holdout).unwrap();
        assert_eq!(one.gamma, 7.0);
        assert_eq!(one.evaluated.len(), 1);
        assert_eq!(
            one.fallback,
            one.evaluated[0].1 < one.baseline_aupr - GAMMA_TOLERANCE
        );
    }
}
