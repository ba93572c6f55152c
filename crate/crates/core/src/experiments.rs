//! Scenario harness: synthetic benchmark, the extreme / mixture / online /
//! frozen-β / γ-tuning protocols, and their reports.
//!
//! Every arm of a scenario trains from the same master seed, so arms differ
//! only in their β mode. Arms run on separate threads.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

use crate::config::Config;
use crate::data::{
    gen_in_distribution, gen_out_distribution, load_data, mix_traffic, save_data, split,
    traffic_from_file, traffic_to_file, DataFile, LabeledDataset, MixSpec, OutKind, Provenance,
    TrafficSet,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{
    detection_accuracy, histogram, split_by_provenance, BetaStats, EvalSets, GroupStats,
};
use crate::nn::{grad_check, random_features, Activation, Batch, GradCheck, Model, ModelSpec};
use crate::regularizers::{
    compute_betas, traffic_loss, traffic_loss_with_betas, BetaMode, RegularizerConfig, SquashForm,
    TrafficView,
};
use crate::rng::SeedStream;
use crate::trainer::{
    base_phase, fine_tune_from, freeze_and_fine_tune, online_fine_tune, train, tune_gamma,
    FineTune, GammaChoice, TrainConfig, TrainHistory,
};

/// Bins of the β histograms.
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Extremes,
    Mixture,
    Online,
    FrozenAblation,
    GammaTuning,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Extremes => "extremes",
            Scenario::Mixture => "mixture",
            Scenario::Online => "online",
            Scenario::FrozenAblation => "frozen_ablation",
            Scenario::GammaTuning => "gamma_tuning",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "extremes" => Scenario::Extremes,
            "mixture" => Scenario::Mixture,
            "online" => Scenario::Online,
            "frozen_ablation" => Scenario::FrozenAblation,
            "gamma_tuning" => Scenario::GammaTuning,
            other => return Err(Error::invalid(format!("unknown scenario '{other}'"))),
        })
    }
}

/// Synthetic benchmark shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DataParams {
    pub num_classes: usize,
    pub spread: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub n_test: usize,
    pub out_kind: OutKind,
    pub traffic_size: usize,
    pub n_out_test: usize,
}

impl Default for DataParams {
    fn default() -> Self {
        DataParams {
            num_classes: 3,
            spread: 0.7,
            n_train: 2000,
            n_holdout: 300,
            n_test: 700,
            out_kind: OutKind::ShiftedBlobs {
                count: 3,
                radius: 5.0,
                spread: 0.4,
            },
            traffic_size: 1000,
            n_out_test: 700,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Option<Scenario>,
    pub data: DataParams,
    /// In-distribution fraction of the traffic for mixture, online and
    /// ablation runs.
    pub in_fraction: f64,
    /// Model, optimizer, seed, epochs. `train.regularizer` carries the mode
    /// for plain `train` runs and the clamp / squash settings for every arm.
    pub train: TrainConfig,
    pub gamma: f64,
    pub fixed_beta: f64,
    pub base_epochs: usize,
    pub tune_epochs: usize,
    pub gamma_grid: Vec<f64>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        let data = DataParams::default();
        let spec = ModelSpec::new(2, vec![32, 32], data.num_classes, Activation::Relu)
            .expect("valid default spec");
        let mut train = TrainConfig::new(spec);
        train.seed = seed;
        train.batch_size = 16;
        train.regularizer = RegularizerConfig::none().with_squash(SquashForm::Shifted);
        let gamma = 3.0;
        train.snapshot_gamma = gamma;
        ExperimentConfig {
            scenario: None,
            data,
            in_fraction: 0.5,
            train,
            gamma,
            fixed_beta: 1.0,
            base_epochs: 40,
            tune_epochs: 5,
            gamma_grid: vec![1.0, 2.0, 3.0, 5.0, 10.0],
            out_dir: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    /// Overrides defaults with the keys present in `c`.
    pub fn from_config(c: &Config) -> Result<Self> {
        let mut e = ExperimentConfig::new(c.get_or("seed", 0u64)?);
        e.scenario = c.get("scenario")?;
        if let Some(out) = c.raw("out") {
            e.out_dir = Some(PathBuf::from(out));
        }

        let d = &mut e.data;
        d.num_classes = c.get_or("data.classes", d.num_classes)?;
        d.spread = c.get_or("data.spread", d.spread)?;
        d.n_train = c.get_or("data.train", d.n_train)?;
        d.n_holdout = c.get_or("data.holdout", d.n_holdout)?;
        d.n_test = c.get_or("data.test", d.n_test)?;
        d.traffic_size = c.get_or("data.traffic", d.traffic_size)?;
        d.n_out_test = c.get_or("data.out_test", d.n_out_test)?;
        if let Some(kind) = c.get::<OutKind>("data.out_kind")? {
            d.out_kind = kind;
        }
        d.out_kind = match d.out_kind {
            OutKind::Ring { radius, noise } => OutKind::Ring {
                radius: c.get_or("data.out_radius", radius)?,
                noise: c.get_or("data.out_noise", noise)?,
            },
            OutKind::UniformBox { half_width } => OutKind::UniformBox {
                half_width: c.get_or("data.out_half_width", half_width)?,
            },
            OutKind::ShiftedBlobs {
                count,
                radius,
                spread,
            } => OutKind::ShiftedBlobs {
                count: c.get_or("data.out_count", count)?,
                radius: c.get_or("data.out_radius", radius)?,
                spread: c.get_or("data.out_spread", spread)?,
            },
        };
        e.in_fraction = c.get_or("traffic.in_fraction", e.in_fraction)?;

        let hidden = c
            .get_list("model.hidden")?
            .unwrap_or_else(|| e.train.model.hidden_dims().to_vec());
        let activation = c.get_or("model.activation", e.train.model.activation())?;
        e.train.model = ModelSpec::new(2, hidden, e.data.num_classes, activation)?;

        let t = &mut e.train;
        t.epochs = c.get_or("train.epochs", t.epochs)?;
        t.batch_size = c.get_or("train.batch_size", t.batch_size)?;
        t.learning_rate = c.get_or("train.learning_rate", t.learning_rate)?;
        t.momentum = c.get_or("train.momentum", t.momentum)?;

        e.gamma = c.get_or("regularizer.gamma", e.gamma)?;
        e.fixed_beta = c.get_or("regularizer.beta", e.fixed_beta)?;
        e.train.regularizer.clamp = c.get_or("regularizer.clamp", e.train.regularizer.clamp)?;
        e.train.regularizer.squash = c.get_or("regularizer.squash", e.train.regularizer.squash)?;
        let mode: String = c.get_or("regularizer.mode", "none".to_string())?;
        e.train.regularizer.mode = e.mode_named(&mode)?;
        e.train.snapshot_gamma = c.get_or("train.snapshot_gamma", e.gamma)?;

        e.base_epochs = c.get_or("online.base_epochs", e.base_epochs)?;
        e.tune_epochs = c.get_or("online.tune_epochs", e.tune_epochs)?;
        if let Some(grid) = c.get_list("tuning.grid")? {
            e.gamma_grid = grid;
        }
        c.finish()?;
        e.validate()?;
        Ok(e)
    }

    fn mode_named(&self, name: &str) -> Result<BetaMode> {
        Ok(match name {
            "none" => BetaMode::None,
            "fixed" => BetaMode::Fixed(self.fixed_beta),
            "adaptive" => BetaMode::Adaptive { gamma: self.gamma },
            "oracle" => BetaMode::Oracle,
            other => {
                return Err(Error::invalid(format!(
                    "regularizer.mode '{other}' is not one of none, fixed, adaptive, oracle"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.num_classes < 2 {
            return Err(Error::invalid("data.classes must be at least 2"));
        }
        if d.n_train == 0 || d.n_test == 0 || d.traffic_size == 0 || d.n_out_test == 0 {
            return Err(Error::invalid("data sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.in_fraction) {
            return Err(Error::invalid("traffic.in_fraction must lie in [0, 1]"));
        }
        if self.base_epochs == 0 {
            return Err(Error::invalid("online.base_epochs must be at least 1"));
        }
        self.train.validate()?;
        self.adaptive().validate()?;
        self.regularizer(BetaMode::Fixed(self.fixed_beta))
            .validate()
    }

    /// `mode` with this configuration's clamp and squash settings.
    pub fn regularizer(&self, mode: BetaMode) -> RegularizerConfig {
        RegularizerConfig {
            mode,
            ..self.train.regularizer.clone()
        }
    }

    pub fn adaptive(&self) -> RegularizerConfig {
        self.regularizer(BetaMode::Adaptive { gamma: self.gamma })
    }

    /// The configuration as `key=value` lines, readable by [`Config::parse`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        if let Some(sc) = self.scenario {
            kv("scenario", sc.to_string());
        }
        kv("seed", self.seed().to_string());
        let d = &self.data;
        kv("data.classes", d.num_classes.to_string());
        kv("data.spread", d.spread.to_string());
        kv("data.train", d.n_train.to_string());
        kv("data.holdout", d.n_holdout.to_string());
        kv("data.test", d.n_test.to_string());
        kv("data.traffic", d.traffic_size.to_string());
        kv("data.out_test", d.n_out_test.to_string());
        kv("data.out_kind", d.out_kind.name().to_string());
        match d.out_kind {
            OutKind::Ring { radius, noise } => {
                kv("data.out_radius", radius.to_string());
                kv("data.out_noise", noise.to_string());
            }
            OutKind::UniformBox { half_width } => kv("data.out_half_width", half_width.to_string()),
            OutKind::ShiftedBlobs {
                count,
                radius,
                spread,
            } => {
                kv("data.out_count", count.to_string());
                kv("data.out_radius", radius.to_string());
                kv("data.out_spread", spread.to_string());
            }
        }
        kv("traffic.in_fraction", self.in_fraction.to_string());
        let hidden: Vec<String> = self
            .train
            .model
            .hidden_dims()
            .iter()
            .map(|h| h.to_string())
            .collect();
        kv("model.hidden", hidden.join(","));
        kv(
            "model.activation",
            self.train.model.activation().to_string(),
        );
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.momentum", self.train.momentum.to_string());
        kv(
            "train.snapshot_gamma",
            self.train.snapshot_gamma.to_string(),
        );
        kv(
            "regularizer.mode",
            self.train.regularizer.mode.name().to_string(),
        );
        kv("regularizer.gamma", self.gamma.to_string());
        kv("regularizer.beta", self.fixed_beta.to_string());
        kv(
            "regularizer.clamp",
            self.train.regularizer.clamp.to_string(),
        );
        kv(
            "regularizer.squash",
            self.train.regularizer.squash.to_string(),
        );
        kv("online.base_epochs", self.base_epochs.to_string());
        kv("online.tune_epochs", self.tune_epochs.to_string());
        let grid: Vec<String> = self.gamma_grid.iter().map(|g| g.to_string()).collect();
        kv("tuning.grid", grid.join(","));
        s
    }
}

/// All data of one benchmark instance.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: LabeledDataset,
    pub holdout: LabeledDataset,
    pub test: LabeledDataset,
    /// Fresh in-distribution rows that traffic is drawn from.
    pub in_pool: Matrix,
    pub out_pool: Matrix,
    pub out_test: Matrix,
    /// Fresh in-distribution rows standing in for "out" when traffic is pure in.
    pub in_probe: Matrix,
    seed: SeedStream,
}

impl Benchmark {
    pub fn generate(p: &DataParams, seed: u64) -> Result<Benchmark> {
        let root = SeedStream::new(seed).named("data");
        let k = p.num_classes;
        let total = p.n_train + p.n_holdout + p.n_test;
        let labeled = gen_in_distribution(
            k,
            total.div_ceil(k),
            p.spread,
            root.named("labeled").value(),
        )?;
        let n = labeled.len() as f64;
        let fractions = (
            p.n_train as f64 / n,
            p.n_holdout as f64 / n,
            p.n_test as f64 / n,
        );
        let s = split(&labeled, fractions, root.named("split").value())?;
        let fresh = |name: &str, rows: usize| -> Result<Matrix> {
            Ok(
                gen_in_distribution(k, rows.div_ceil(k), p.spread, root.named(name).value())?
                    .features,
            )
        };
        Ok(Benchmark {
            train: s.train,
            holdout: s.holdout,
            test: s.test,
            in_pool: fresh("in_pool", p.traffic_size)?,
            out_pool: gen_out_distribution(
                p.out_kind,
                p.traffic_size,
                root.named("out_pool").value(),
            )?,
            out_test: gen_out_distribution(
                p.out_kind,
                p.n_out_test,
                root.named("out_test").value(),
            )?,
            in_probe: fresh("in_probe", p.n_out_test)?,
            seed: root,
        })
    }

    pub fn traffic(&self, in_fraction: f64, size: usize) -> Result<TrafficSet> {
        let seed = self.seed.named("mix").split(in_fraction.to_bits()).value();
        mix_traffic(
            &self.in_pool,
            &self.out_pool,
            MixSpec {
                in_fraction,
                size,
                seed,
            },
        )
    }

    /// In-distribution test set against out-of-distribution test rows.
    pub fn eval_sets(&self) -> EvalSets {
        EvalSets {
            in_test: self.test.clone(),
            out_test: self.out_test.clone(),
        }
    }

    /// In-distribution test set against fresh in-distribution rows.
    pub fn in_vs_in_sets(&self) -> EvalSets {
        EvalSets {
            in_test: self.test.clone(),
            out_test: self.in_probe.clone(),
        }
    }
}

/// The datasets one training or evaluation run works on, as written by
/// `oodlab gen-data`.
#[derive(Debug, Clone)]
pub struct Workload {
    pub train: LabeledDataset,
    pub holdout: LabeledDataset,
    pub eval: EvalSets,
    pub traffic: TrafficSet,
}

impl Workload {
    const FILES: [&'static str; 5] = [
        "train.data",
        "holdout.data",
        "test.data",
        "out_test.data",
        "traffic.data",
    ];

    /// Benchmark from `cfg` with traffic at `cfg.in_fraction`.
    pub fn generate(cfg: &ExperimentConfig) -> Result<Workload> {
        let bench = Benchmark::generate(&cfg.data, cfg.seed())?;
        Ok(Workload {
            traffic: bench.traffic(cfg.in_fraction, cfg.data.traffic_size)?,
            eval: bench.eval_sets(),
            train: bench.train,
            holdout: bench.holdout,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            DataFile::Labeled(self.train.clone()),
            DataFile::Labeled(self.holdout.clone()),
            DataFile::Labeled(self.eval.in_test.clone()),
            DataFile::Unlabeled(self.eval.out_test.clone()),
            traffic_to_file(&self.traffic),
        ];
        for (name, file) in Self::FILES.iter().zip(&files) {
            save_data(file, &dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Workload> {
        let labeled = |name: &str| match load_data(&dir.join(name))? {
            DataFile::Labeled(ds) => Ok(ds),
            DataFile::Unlabeled(_) => Err(Error::invalid(format!("{name} must be labeled"))),
        };
        let out_test = match load_data(&dir.join(Self::FILES[3]))? {
            DataFile::Unlabeled(m) => m,
            DataFile::Labeled(ds) => ds.features,
        };
        Ok(Workload {
            train: labeled(Self::FILES[0])?,
            holdout: labeled(Self::FILES[1])?,
            eval: EvalSets {
                in_test: labeled(Self::FILES[2])?,
                out_test,
            },
            traffic: traffic_from_file(load_data(&dir.join(Self::FILES[4]))?)?,
        })
    }
}

/// One trained arm of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub mode: String,
    pub aupr: f64,
    pub detection_accuracy: f64,
    pub classification_accuracy: f64,
    pub beta: BetaStats,
    /// Accuracy of the best threshold on β for telling traffic provenance apart;
    /// `None` unless the traffic has both groups.
    pub beta_separation: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl ReportRow {
    fn from_history(
        scenario: &str,
        mode: String,
        seed: u64,
        h: &TrainHistory,
        traffic: Option<&TrafficSet>,
        started: Instant,
    ) -> Result<ReportRow> {
        let last = h
            .last()
            .ok_or_else(|| Error::invalid("training produced no epochs"))?;
        let m = &last.metrics;
        let beta_separation = match traffic {
            Some(t) if !last.betas.is_empty() => separation(&last.betas, t)?,
            _ => None,
        };
        Ok(ReportRow {
            scenario: scenario.to_string(),
            mode,
            aupr: m.aupr_micro,
            detection_accuracy: m.detection_accuracy,
            classification_accuracy: m.classification_accuracy,
            beta: m.beta_stats,
            beta_separation,
            epochs: last.epoch,
            seed,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Same row without the timing field, for reproducibility comparisons.
    pub fn metrics_only(&self) -> ReportRow {
        ReportRow {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }

    /// One `key=value` record.
    pub fn to_record(&self) -> String {
        let mut s = format!(
            "record=row scenario={} mode={} aupr={:.6} detection_accuracy={:.6} classification_accuracy={:.6}",
            self.scenario, self.mode, self.aupr, self.detection_accuracy, self.classification_accuracy
        );
        for (name, g) in [("in", self.beta.in_dist), ("out", self.beta.out_dist)] {
            match g {
                Some(g) => {
                    let _ = write!(
                        s,
                        " beta_{name}_mean={:.6} beta_{name}_std={:.6} beta_{name}_count={}",
                        g.mean, g.std, g.count
                    );
                }
                None => {
                    let _ = write!(s, " beta_{name}=absent");
                }
            }
        }
        if let Some(sep) = self.beta_separation {
            let _ = write!(s, " beta_separation={sep:.6}");
        }
        let _ = write!(
            s,
            " epochs={} seed={} wall_seconds={:.3}",
            self.epochs, self.seed, self.wall_seconds
        );
        s
    }
}

/// Best-threshold accuracy of β as a provenance detector (high β ⇒ out).
pub fn separation(betas: &[f64], traffic: &TrafficSet) -> Result<Option<f64>> {
    let (ins, outs) = split_by_provenance(betas, &traffic.provenance);
    if ins.is_empty() || outs.is_empty() {
        return Ok(None);
    }
    let neg = |v: Vec<f64>| v.into_iter().map(|b| -b).collect::<Vec<_>>();
    Ok(Some(detection_accuracy(&neg(ins), &neg(outs))?))
}

/// Adaptive β of every traffic row under `model` with `reg`.
pub fn traffic_betas(
    model: &Model,
    traffic: &TrafficSet,
    reg: &RegularizerConfig,
) -> Result<Vec<f64>> {
    compute_betas(model, &TrafficView::new(&traffic.features), reg)
}

/// A scenario's rows plus scenario-level summary lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub config: String,
    pub rows: Vec<ReportRow>,
    /// Extra `key=value` facts such as deltas or orderings.
    pub summary: Vec<(String, String)>,
}

impl Report {
    pub fn new(title: &str, config: &ExperimentConfig, rows: Vec<ReportRow>) -> Report {
        Report {
            title: title.to_string(),
            config: config.to_config_string(),
            rows,
            summary: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Report {
        self.summary.push((key.to_string(), value.to_string()));
        self
    }

    pub fn summary_value(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Records, then the configuration, then a plain-text table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "record=report title={}", self.title);
        for row in &self.rows {
            let _ = writeln!(s, "{}", row.to_record());
        }
        for (k, v) in &self.summary {
            let _ = writeln!(s, "record=summary {k}={v}");
        }
        let _ = writeln!(s, "record=column name=gan status=\"not implemented\"");
        s.push('\n');
        for line in self.config.lines() {
            let _ = writeln!(s, "# config {line}");
        }
        s.push('\n');
        s.push_str(&self.table());
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22} {:<10} {:>8} {:>10} {:>9} {:>15} {:>15} {:>17}",
            "scenario", "mode", "AUPR", "detection", "accuracy", "beta in", "beta out", "GAN"
        );
        let fmt_group = |g: Option<GroupStats>| {
            g.map_or("-".to_string(), |g| format!("{:.3}±{:.3}", g.mean, g.std))
        };
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<22} {:<10} {:>8.4} {:>10.4} {:>9.4} {:>15} {:>15} {:>17}",
                r.scenario,
                r.mode,
                r.aupr,
                r.detection_accuracy,
                r.classification_accuracy,
                fmt_group(r.beta.in_dist),
                fmt_group(r.beta.out_dist),
                "not implemented"
            );
        }
        s
    }
}

struct Arm<'a> {
    label: String,
    regularizer: RegularizerConfig,
    traffic: &'a TrafficSet,
    eval: &'a EvalSets,
    scenario: String,
}

fn run_arms(
    cfg: &ExperimentConfig,
    data: &LabeledDataset,
    arms: Vec<Arm<'_>>,
) -> Result<Vec<ReportRow>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = arms
            .iter()
            .map(|arm| {
                scope.spawn(move || {
                    let started = Instant::now();
                    let mut t = cfg.train.clone();
                    t.regularizer = arm.regularizer.clone();
                    t.fine_tune = None;
                    let h = train(&t, data, Some(arm.traffic), arm.eval)?;
                    ReportRow::from_history(
                        &arm.scenario,
                        arm.label.clone(),
                        cfg.seed(),
                        &h,
                        Some(arm.traffic),
                        started,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

/// π ∈ {1, 0} × {none, fixed, adaptive}. With π = 1 detection is measured
/// in-distribution against in-distribution.
pub fn run_extremes(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let bench = Benchmark::generate(&cfg.data, cfg.seed())?;
    let pure_in = bench.traffic(1.0, cfg.data.traffic_size)?;
    let pure_out = bench.traffic(0.0, cfg.data.traffic_size)?;
    let in_vs_in = bench.in_vs_in_sets();
    let eval = bench.eval_sets();
    let mut arms = Vec::new();
    for (scenario, traffic, sets) in [
        ("extremes/pi=1", &pure_in, &in_vs_in),
        ("extremes/pi=0", &pure_out, &eval),
    ] {
        for (label, reg) in [
            ("none", cfg.regularizer(BetaMode::None)),
            ("fixed", cfg.regularizer(BetaMode::Fixed(cfg.fixed_beta))),
            ("adaptive", cfg.adaptive()),
        ] {
            arms.push(Arm {
                label: label.to_string(),
                regularizer: reg,
                traffic,
                eval: sets,
                scenario: scenario.to_string(),
            });
        }
    }
    let rows = run_arms(cfg, &bench.train, arms)?;
    Ok(Report::new("extremes", cfg, rows))
}

/// Traffic at `cfg.in_fraction` × {none, oracle, adaptive}.
pub fn run_mixture(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let bench = Benchmark::generate(&cfg.data, cfg.seed())?;
    let traffic = bench.traffic(cfg.in_fraction, cfg.data.traffic_size)?;
    let eval = bench.eval_sets();
    let arms = [
        ("none", cfg.regularizer(BetaMode::None)),
        ("oracle", cfg.regularizer(BetaMode::Oracle)),
        ("adaptive", cfg.adaptive()),
    ]
    .into_iter()
    .map(|(label, regularizer)| Arm {
        label: label.to_string(),
        regularizer,
        traffic: &traffic,
        eval: &eval,
        scenario: "mixture".to_string(),
    })
    .collect();
    let rows = run_arms(cfg, &bench.train, arms)?;
    let before = traffic_betas(
        &Model::init(cfg.train.model.clone(), init_seed(cfg)),
        &traffic,
        &cfg.adaptive(),
    )?;
    let mut report = Report::new("mixture", cfg, rows);
    if let Some(sep) = separation(&before, &traffic)? {
        report = report.with("beta_separation_at_init", format!("{sep:.6}"));
    }
    Ok(report)
}

fn init_seed(cfg: &ExperimentConfig) -> u64 {
    SeedStream::new(cfg.seed()).named("model").value()
}

/// Online two-phase run and its from-scratch adaptive reference.
#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub report: Report,
    pub history: TrainHistory,
    pub delta_aupr: f64,
    pub delta_detection: f64,
}

/// `base_epochs` without traffic, then `tune_epochs` adaptive, compared with
/// an adaptive run of `base_epochs` from scratch.
pub fn run_online(cfg: &ExperimentConfig) -> Result<OnlineOutcome> {
    cfg.validate()?;
    let bench = Benchmark::generate(&cfg.data, cfg.seed())?;
    let traffic = bench.traffic(cfg.in_fraction, cfg.data.traffic_size)?;
    let eval = bench.eval_sets();

    let (online, scratch) = std::thread::scope(|scope| {
        let online = scope.spawn(|| {
            let started = Instant::now();
            let mut t = cfg.train.clone();
            t.fine_tune = Some(FineTune {
                base_epochs: cfg.base_epochs,
                tune_epochs: cfg.tune_epochs,
                tune_regularizer: cfg.adaptive(),
            });
            online_fine_tune(&t, &bench.train, &traffic, &eval).map(|h| (h, started))
        });
        let scratch = scope.spawn(|| {
            let started = Instant::now();
            let mut t = cfg.train.clone();
            t.epochs = cfg.base_epochs;
            t.regularizer = cfg.adaptive();
            train(&t, &bench.train, Some(&traffic), &eval).map(|h| (h, started))
        });
        (
            online
                .join()
                .unwrap_or_else(|p| std::panic::resume_unwind(p)),
            scratch
                .join()
                .unwrap_or_else(|p| std::panic::resume_unwind(p)),
        )
    });
    let (online, t_online) = online?;
    let (scratch, t_scratch) = scratch?;
    let seed = cfg.seed();
    let rows = vec![
        ReportRow::from_history(
            "online",
            "online".into(),
            seed,
            &online,
            Some(&traffic),
            t_online,
        )?,
        ReportRow::from_history(
            "online",
            "scratch".into(),
            seed,
            &scratch,
            Some(&traffic),
            t_scratch,
        )?,
    ];
    let delta_aupr = (rows[0].aupr - rows[1].aupr).abs();
    let delta_detection = (rows[0].detection_accuracy - rows[1].detection_accuracy).abs();
    let report = Report::new("online", cfg, rows)
        .with("delta_aupr", format!("{delta_aupr:.6}"))
        .with("delta_detection_accuracy", format!("{delta_detection:.6}"));
    Ok(OnlineOutcome {
        report,
        history: online,
        delta_aupr,
        delta_detection,
    })
}

/// From one base model: continue without regularization, fine-tune with β
/// frozen at the base model's values, and fine-tune adaptively.
///
/// The summary carries `ordering_holds`: none < frozen < adaptive on
/// detection accuracy.
pub fn run_frozen_ablation(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let bench = Benchmark::generate(&cfg.data, cfg.seed())?;
    let traffic = bench.traffic(cfg.in_fraction, cfg.data.traffic_size)?;
    let eval = bench.eval_sets();
    let started = Instant::now();
    let base = base_phase(
        &cfg.train,
        cfg.base_epochs,
        &bench.train,
        Some(&traffic),
        &eval,
    )?;
    let base_seconds = started.elapsed();

    let (b, t) = (&base.model, &traffic);
    let results: Vec<Result<(TrainHistory, Instant)>> = std::thread::scope(|scope| {
        let none = scope.spawn(|| {
            let s = Instant::now();
            fine_tune_from(
                b,
                cfg.base_epochs,
                &cfg.train,
                &cfg.regularizer(BetaMode::None),
                cfg.tune_epochs,
                &bench.train,
                Some(t),
                &eval,
            )
            .map(|h| (h, s))
        });
        let frozen = scope.spawn(|| {
            let s = Instant::now();
            freeze_and_fine_tune(
                b,
                cfg.base_epochs,
                &cfg.train,
                cfg.tune_epochs,
                cfg.gamma,
                &bench.train,
                t,
                &eval,
            )
            .map(|h| (h, s))
        });
        let adaptive = scope.spawn(|| {
            let s = Instant::now();
            fine_tune_from(
                b,
                cfg.base_epochs,
                &cfg.train,
                &cfg.adaptive(),
                cfg.tune_epochs,
                &bench.train,
                Some(t),
                &eval,
            )
            .map(|h| (h, s))
        });
        [none, frozen, adaptive]
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    let mut rows = Vec::new();
    for (label, r) in ["none", "frozen", "adaptive"].into_iter().zip(results) {
        let (h, s) = r?;
        let mut row = ReportRow::from_history(
            "frozen_ablation",
            label.into(),
            cfg.seed(),
            &h,
            Some(&traffic),
            s,
        )?;
        row.wall_seconds += base_seconds.as_secs_f64();
        rows.push(row);
    }
    let ordered = rows[0].detection_accuracy < rows[1].detection_accuracy
        && rows[1].detection_accuracy < rows[2].detection_accuracy;
    Ok(Report::new("frozen_ablation", cfg, rows).with("ordering_holds", ordered))
}

/// Selects γ on the holdout split and reports the candidates.
pub fn run_gamma_tuning(cfg: &ExperimentConfig) -> Result<(GammaChoice, Report)> {
    cfg.validate()?;
    let bench = Benchmark::generate(&cfg.data, cfg.seed())?;
    let traffic = bench.traffic(cfg.in_fraction, cfg.data.traffic_size)?;
    let holdout = EvalSets {
        in_test: bench.holdout.clone(),
        out_test: bench.out_test.clone(),
    };
    let mut base = cfg.train.clone();
    base.regularizer = cfg.regularizer(BetaMode::None);
    let choice = tune_gamma(&cfg.gamma_grid, &base, &bench.train, &traffic, &holdout)?;
    let mut report = Report::new("gamma_tuning", cfg, Vec::new()).with(
        "baseline_holdout_aupr",
        format!("{:.6}", choice.baseline_aupr),
    );
    for (g, aupr) in &choice.evaluated {
        report = report.with(&format!("holdout_aupr_gamma_{g}"), format!("{aupr:.6}"));
    }
    report = report
        .with("gamma", choice.gamma)
        .with("fallback", choice.fallback);
    Ok((choice, report))
}

/// β distribution of one provenance group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupHistogram {
    pub stats: GroupStats,
    pub bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaAnalysis {
    pub in_dist: Option<GroupHistogram>,
    pub out_dist: Option<GroupHistogram>,
    pub separation: Option<f64>,
}

/// Adaptive β of a tagged traffic set under `model`, grouped by provenance.
pub fn analyze_beta(
    model: &Model,
    traffic: &TrafficSet,
    reg: &RegularizerConfig,
) -> Result<BetaAnalysis> {
    if !matches!(reg.mode, BetaMode::Adaptive { .. }) {
        return Err(Error::invalid(
            "beta analysis needs an adaptive regularizer",
        ));
    }
    let betas = traffic_betas(model, traffic, reg)?;
    let (ins, outs) = split_by_provenance(&betas, &traffic.provenance);
    let group = |v: &[f64]| {
        GroupStats::of(v).map(|stats| GroupHistogram {
            stats,
            bins: histogram(v, HISTOGRAM_BINS),
        })
    };
    Ok(BetaAnalysis {
        in_dist: group(&ins),
        out_dist: group(&outs),
        separation: separation(&betas, traffic)?,
    })
}

impl BetaAnalysis {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (name, g) in [("in", &self.in_dist), ("out", &self.out_dist)] {
            match g {
                None => {
                    let _ = writeln!(s, "record=beta_group group={name} status=absent");
                }
                Some(g) => {
                    let bins: Vec<String> = g.bins.iter().map(|c| c.to_string()).collect();
                    let _ = writeln!(
                        s,
                        "record=beta_group group={name} count={} mean={:.6} std={:.6} histogram={}",
                        g.stats.count,
                        g.stats.mean,
                        g.stats.std,
                        bins.join(",")
                    );
                }
            }
        }
        if let Some(sep) = self.separation {
            let _ = writeln!(s, "record=beta_separation accuracy={sep:.6}");
        }
        for (name, g) in [("in", &self.in_dist), ("out", &self.out_dist)] {
            let Some(g) = g else { continue };
            let _ = writeln!(s, "\n{name}-distribution beta (n={})", g.stats.count);
            let peak = g.bins.iter().copied().max().unwrap_or(0).max(1);
            for (i, &c) in g.bins.iter().enumerate() {
                let lo = i as f64 / HISTOGRAM_BINS as f64;
                let bar = "#".repeat((c * 40).div_ceil(peak));
                let _ = writeln!(
                    s,
                    "  [{lo:.2}, {:.2}) {c:>6} {bar}",
                    lo + 1.0 / HISTOGRAM_BINS as f64
                );
            }
        }
        s
    }
}

/// Central-difference step of [`grad_check_random`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Gradient check of the traffic objective on a random 2-16-3 model with 8
/// labeled and 8 traffic rows.
///
/// β is computed once at the unperturbed parameters and held fixed while
/// differencing, matching the stop-gradient used in training.
pub fn grad_check_random(seed: u64, reg: &RegularizerConfig) -> Result<GradCheck> {
    let root = SeedStream::new(seed).named("grad_check");
    let spec = ModelSpec::new(2, vec![16], 3, Activation::Relu)?;
    let mut model = Model::init(spec, root.named("model").value());
    let mut rng = root.named("params").rng();
    model.for_each_param_mut(|name, _, v| {
        if name.starts_with('b') {
            *v = rng.random_range(-0.5..0.5);
        }
    });
    let mut rng = root.named("batch").rng();
    let features = random_features(&mut rng, 8, 2, 3.0);
    let labels = (0..8).map(|_| rng.random_range(0..3)).collect();
    let labeled = Batch::labeled(features, labels, 3)?;
    let traffic = random_features(&mut rng, 8, 2, 3.0);
    let tags: Vec<_> = (0..8)
        .map(|i| {
            if i % 2 == 0 {
                Provenance::InDist
            } else {
                Provenance::OutDist
            }
        })
        .collect();
    let view = TrafficView::new(&traffic).with_provenance(&tags);

    let (breakdown, analytic) = traffic_loss(&model, &labeled, &view, reg)?;
    let betas = breakdown.per_sample_betas;
    let mut failure = None;
    let check = grad_check(
        &model,
        &analytic,
        GRAD_CHECK_STEP,
        |m| match traffic_loss_with_betas(m, &labeled, &traffic, &betas) {
            Ok((b, _)) => b.total,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
    );
    match failure {
        Some(e) => Err(e),
        None => check,
    }
}
