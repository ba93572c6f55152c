use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oodlab::checkpoint::{load_model, save_model};
use oodlab::config::Config;
use oodlab::data::{load_data, traffic_from_file};
use oodlab::experiments::{
    analyze_beta, grad_check_random, run_extremes, run_frozen_ablation, run_gamma_tuning,
    run_mixture, run_online, ExperimentConfig, Report, Workload,
};
use oodlab::metrics::evaluate;
use oodlab::regularizers::RegularizerConfig;
use oodlab::trainer::{train, TrainHistory};
use oodlab::{Error, Result};

/// Train and evaluate softmax classifiers regularized on unlabeled traffic.
#[derive(Parser)]
#[command(name = "oodlab", version)]
struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for data, checkpoints and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark into --out.
    GenData,
    /// Train one model with `regularizer.mode`.
    Train {
        /// Directory written by gen-data; generated from the config if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `regularizer.mode` (none, fixed, adaptive, oracle).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Pure-in and pure-out traffic against none / fixed / adaptive.
    RunExtremes,
    /// Mixed traffic against none / oracle / adaptive.
    RunMixture,
    /// Base training then adaptive fine-tuning, against adaptive from scratch.
    RunOnline,
    /// none / frozen-β / adaptive fine-tuning from one base model.
    RunAblation,
    /// Choose γ on the holdout split.
    TuneGamma,
    /// β statistics of a checkpoint over tagged traffic.
    AnalyzeBeta {
        #[arg(long)]
        model: PathBuf,
        /// Traffic file with provenance tags; generated from the config if omitted.
        #[arg(long)]
        traffic: Option<PathBuf>,
    },
    /// Analytic against numeric gradients on random small models.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        c.set("seed", seed.to_string());
    }
    if let Some(out) = &cli.out {
        c.set("out", out.display().to_string());
    }
    ExperimentConfig::from_config(&c)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(cfg: &ExperimentConfig, name: &str, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = &cfg.out_dir {
        write_file(&dir.join(name), text)?;
    }
    Ok(())
}

fn emit_report(cfg: &ExperimentConfig, name: &str, report: &Report) -> Result<()> {
    emit(cfg, name, &report.render())
}

fn workload(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Workload> {
    match data {
        Some(dir) => Workload::load(dir),
        None => Workload::generate(cfg),
    }
}

fn history_text(h: &TrainHistory) -> String {
    let mut s = String::new();
    for e in &h.epochs {
        let m = &e.metrics;
        let _ = write!(
            s,
            "record=epoch epoch={} phase={} loss={:.6} aupr={:.6} detection_accuracy={:.6} classification_accuracy={:.6}",
            e.epoch,
            e.phase.as_str(),
            e.mean_loss,
            m.aupr_micro,
            m.detection_accuracy,
            m.classification_accuracy
        );
        for (name, g) in [("in", m.beta_stats.in_dist), ("out", m.beta_stats.out_dist)] {
            if let Some(g) = g {
                let _ = write!(
                    s,
                    " beta_{name}_mean={:.6} beta_{name}_std={:.6}",
                    g.mean, g.std
                );
            }
        }
        s.push('\n');
    }
    s
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenData => {
            let dir = cfg
                .out_dir
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("gen-data needs --out".into()))?;
            let w = Workload::generate(&cfg)?;
            w.save(dir)?;
            write_file(&dir.join("config.txt"), &cfg.to_config_string())?;
            println!(
                "record=gen_data dir={} train={} holdout={} test={} out_test={} traffic={} traffic_in={}",
                dir.display(),
                w.train.len(),
                w.holdout.len(),
                w.eval.in_test.len(),
                w.eval.out_test.rows(),
                w.traffic.len(),
                w.traffic.count(oodlab::Provenance::InDist)
            );
        }
        Command::Train { data, mode } => {
            let mut cfg = cfg.clone();
            if let Some(mode) = mode {
                let mut c = Config::parse(&cfg.to_config_string(), "command line")?;
                c.set("regularizer.mode", mode.as_str());
                let out = cfg.out_dir.take();
                cfg = ExperimentConfig::from_config(&c)?;
                cfg.out_dir = out;
            }
            let w = workload(&cfg, data.as_deref())?;
            let h = train(&cfg.train, &w.train, Some(&w.traffic), &w.eval)?;
            if let Some(dir) = &cfg.out_dir {
                ensure_dir(dir)?;
                save_model(&h.model, &dir.join("model.ckpt"))?;
                write_file(&dir.join("config.txt"), &cfg.to_config_string())?;
            }
            emit(&cfg, "history.txt", &history_text(&h))?;
        }
        Command::Eval { model, data } => {
            let m = load_model(model)?;
            let w = workload(&cfg, data.as_deref())?;
            let r = evaluate(&m, &w.eval)?;
            let text = format!(
                "record=eval model={} aupr={:.6} detection_accuracy={:.6} classification_accuracy={:.6}\n",
                model.display(),
                r.aupr_micro,
                r.detection_accuracy,
                r.classification_accuracy
            );
            emit(&cfg, "eval.txt", &text)?;
        }
        Command::RunExtremes => emit_report(&cfg, "extremes.txt", &run_extremes(&cfg)?)?,
        Command::RunMixture => emit_report(&cfg, "mixture.txt", &run_mixture(&cfg)?)?,
        Command::RunOnline => {
            let o = run_online(&cfg)?;
            emit_report(&cfg, "online.txt", &o.report)?;
            if let Some(dir) = &cfg.out_dir {
                write_file(&dir.join("online_history.txt"), &history_text(&o.history))?;
                ensure_dir(dir)?;
                save_model(&o.history.model, &dir.join("online.ckpt"))?;
            }
        }
        Command::RunAblation => emit_report(&cfg, "ablation.txt", &run_frozen_ablation(&cfg)?)?,
        Command::TuneGamma => emit_report(&cfg, "gamma.txt", &run_gamma_tuning(&cfg)?.1)?,
        Command::AnalyzeBeta { model, traffic } => {
            let m = load_model(model)?;
            let t = match traffic {
                Some(path) => traffic_from_file(load_data(path)?)?,
                None => Workload::generate(&cfg)?.traffic,
            };
            let analysis = analyze_beta(&m, &t, &cfg.adaptive())?;
            emit(&cfg, "beta.txt", &analysis.render())?;
        }
        Command::GradCheck { seeds, tolerance } => {
            let modes = [
                RegularizerConfig::none(),
                RegularizerConfig::fixed(1.0),
                RegularizerConfig::adaptive(10.0),
            ];
            let mut text = String::new();
            let mut worst = 0.0f64;
            for reg in &modes {
                for seed in 0..*seeds {
                    let seed = cfg.seed().wrapping_add(seed);
                    let c = grad_check_random(seed, reg)?;
                    worst = worst.max(c.max_relative_error);
                    let _ = writeln!(
                        text,
                        "record=grad_check mode={} seed={seed} max_relative_error={:.3e} worst_parameter={}",
                        reg.mode, c.max_relative_error, c.worst_parameter
                    );
                }
            }
            let ok = worst <= *tolerance;
            let _ = writeln!(text, "record=grad_check_summary max_relative_error={worst:.3e} tolerance={tolerance:e} pass={ok}");
            emit(&cfg, "grad_check.txt", &text)?;
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
