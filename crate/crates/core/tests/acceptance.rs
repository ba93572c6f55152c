//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oodlab::experiments::{
    grad_check_random, run_extremes, run_frozen_ablation, run_mixture, run_online,
    ExperimentConfig, Report, ReportRow,
};
use oodlab::matrix::Matrix;
use oodlab::metrics::{aupr_micro, detection_accuracy};
use oodlab::nn::softmax;
use oodlab::regularizers::{kl_uniform, kl_uniform_logit_grad, RegularizerConfig};

const SEED: u64 = 0;
const ABLATION_SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(checks: &[(bool, String)], elapsed: Duration, limit_s: f64) -> Outcome {
    let fast = elapsed.as_secs_f64() < limit_s;
    let mut parts: Vec<String> = checks
        .iter()
        .map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "✗ " }))
        .collect();
    parts.push(format!(
        "{}{:.2} s (< {limit_s} s)",
        if fast { "" } else { "✗ " },
        elapsed.as_secs_f64()
    ));
    Outcome {
        pass: fast && checks.iter().all(|(ok, _)| *ok),
        detail: parts.join("; "),
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let modes = [
        RegularizerConfig::none(),
        RegularizerConfig::fixed(1.0),
        RegularizerConfig::adaptive(10.0),
    ];
    let mut worst = 0.0f64;
    let mut failure = None;
    for reg in &modes {
        for seed in 0..20 {
            match grad_check_random(seed, reg) {
                Ok(c) => worst = worst.max(c.max_relative_error),
                Err(e) => failure = Some(e.to_string()),
            }
        }
    }
    let mut checks = vec![(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} (≤ 1e-4) over 3 modes × 20 seeds"),
    )];
    if let Some(e) = failure {
        checks.push((false, e));
    }
    outcome(&checks, t.elapsed(), 10.0)
}

fn kl_invariants() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_uniform = 0.0f64;
    let mut min_nonuniform = f64::INFINITY;
    let mut worst_grad = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=10);
        worst_uniform = worst_uniform.max(kl_uniform(&vec![1.0 / k as f64; k]).abs());
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let p = softmax(&logits);
        min_nonuniform = min_nonuniform.min(kl_uniform(&p));
        let analytic = kl_uniform_logit_grad(&p);
        let h = 1e-5;
        for j in 0..k {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[j] += h;
            down[j] -= h;
            let numeric = (kl_uniform(&softmax(&up)) - kl_uniform(&softmax(&down))) / (2.0 * h);
            worst_grad = worst_grad.max((numeric - analytic[j]).abs());
        }
    }
    outcome(
        &[
            (
                worst_uniform <= 1e-12,
                format!("|KL(uniform)| ≤ {worst_uniform:.1e}"),
            ),
            (
                min_nonuniform > 0.0,
                format!("min KL off uniform {min_nonuniform:.2e} (> 0)"),
            ),
            (
                worst_grad <= 1e-8,
                format!("logit gradient vs p − u {worst_grad:.1e} (≤ 1e-8) on 1000 rows"),
            ),
        ],
        t.elapsed(),
        1.0,
    )
}

/// Average precision by scanning every distinct threshold from the top.
fn brute_force_ap(scores: &[f64], positive: &[bool]) -> f64 {
    let total_pos = positive.iter().filter(|&&p| p).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| positive[i]).count() as f64;
        let recall = tp / total_pos;
        let precision = tp / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Best balanced accuracy of `score ≥ τ ⇒ in` over τ ∈ scores ∪ {+∞}.
fn brute_force_detection(ins: &[f64], outs: &[f64]) -> f64 {
    let mut taus: Vec<f64> = ins.iter().chain(outs).copied().collect();
    taus.push(f64::INFINITY);
    taus.iter()
        .map(|&t| {
            let tpr = ins.iter().filter(|&&s| s >= t).count() as f64 / ins.len() as f64;
            let tnr = outs.iter().filter(|&&s| s < t).count() as f64 / outs.len() as f64;
            0.5 * (tpr + tnr)
        })
        .fold(0.0, f64::max)
}

fn metric_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let (mut worst_ap, mut worst_det) = (0.0f64, 0.0f64);
    let mut errors = 0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=20);
        let k = rng.random_range(2..=5);
        // every third instance uses coarse scores to force ties
        let coarse = trial % 3 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            let v: f64 = rng.random_range(0.0..1.0);
            if coarse {
                (v * 4.0).floor() / 4.0
            } else {
                v
            }
        };
        let raw: Vec<f64> = (0..n * k).map(|_| draw(&mut rng)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let probs = Matrix::from_vec(n, k, raw.clone()).unwrap();
        let positive: Vec<bool> = (0..n * k).map(|i| labels[i / k] == i % k).collect();
        match aupr_micro(&probs, &labels) {
            Ok(ap) => worst_ap = worst_ap.max((ap - brute_force_ap(&raw, &positive)).abs()),
            Err(_) => errors += 1,
        }

        let ins: Vec<f64> = (0..rng.random_range(1..=20))
            .map(|_| draw(&mut rng))
            .collect();
        let outs: Vec<f64> = (0..rng.random_range(1..=20))
            .map(|_| draw(&mut rng))
            .collect();
        match detection_accuracy(&ins, &outs) {
            Ok(d) => worst_det = worst_det.max((d - brute_force_detection(&ins, &outs)).abs()),
            Err(_) => errors += 1,
        }
    }
    outcome(
        &[
            (
                worst_ap <= 1e-9,
                format!("AUPR vs brute force {worst_ap:.1e} (≤ 1e-9)"),
            ),
            (
                worst_det <= 1e-12,
                format!("detection vs threshold scan {worst_det:.1e} (≤ 1e-12)"),
            ),
            (
                errors == 0,
                format!("{errors} metric errors on 1000 instances"),
            ),
        ],
        t.elapsed(),
        10.0,
    )
}

fn row<'a>(report: &'a Report, scenario: &str, mode: &str) -> &'a ReportRow {
    report
        .rows
        .iter()
        .find(|r| r.scenario == scenario && r.mode == mode)
        .unwrap_or_else(|| panic!("missing row {scenario}/{mode}"))
}

fn extremes_pure_in(r: &Report, elapsed: Duration) -> Outcome {
    let (none, fixed, adaptive) = (
        row(r, "extremes/pi=1", "none"),
        row(r, "extremes/pi=1", "fixed"),
        row(r, "extremes/pi=1", "adaptive"),
    );
    let gap = (adaptive.aupr - none.aupr).abs();
    let dets = [none, fixed, adaptive].map(|r| r.detection_accuracy);
    outcome(
        &[
            (
                gap <= 0.01,
                format!(
                    "adaptive AUPR {:.4} vs none {:.4}, gap {gap:.4} (≤ 0.01)",
                    adaptive.aupr, none.aupr
                ),
            ),
            (
                fixed.aupr < none.aupr,
                format!("fixed(1) AUPR {:.4} < none {:.4}", fixed.aupr, none.aupr),
            ),
            (
                dets.iter().all(|d| (d - 0.5).abs() <= 0.05),
                format!(
                    "in-vs-in detection {:.3}/{:.3}/{:.3} (0.5 ± 0.05)",
                    dets[0], dets[1], dets[2]
                ),
            ),
        ],
        elapsed,
        60.0,
    )
}

fn extremes_pure_out(r: &Report, elapsed: Duration) -> Outcome {
    let (none, adaptive) = (
        row(r, "extremes/pi=0", "none"),
        row(r, "extremes/pi=0", "adaptive"),
    );
    outcome(
        &[
            (
                adaptive.detection_accuracy >= 0.95,
                format!(
                    "adaptive detection {:.4} (≥ 0.95)",
                    adaptive.detection_accuracy
                ),
            ),
            (
                adaptive.detection_accuracy > none.detection_accuracy,
                format!("> none {:.4}", none.detection_accuracy),
            ),
            (
                adaptive.aupr >= none.aupr - 0.02,
                format!(
                    "adaptive AUPR {:.4} ≥ none {:.4} − 0.02",
                    adaptive.aupr, none.aupr
                ),
            ),
        ],
        elapsed,
        60.0,
    )
}

fn mixture(r: &Report, elapsed: Duration) -> Outcome {
    let (none, oracle, adaptive) = (
        row(r, "mixture", "none"),
        row(r, "mixture", "oracle"),
        row(r, "mixture", "adaptive"),
    );
    let gap = (adaptive.detection_accuracy - oracle.detection_accuracy).abs();
    outcome(
        &[
            (
                gap <= 0.02,
                format!(
                    "adaptive detection {:.4} vs oracle {:.4}, gap {gap:.4} (≤ 0.02)",
                    adaptive.detection_accuracy, oracle.detection_accuracy
                ),
            ),
            (
                adaptive.aupr >= none.aupr - 0.02,
                format!(
                    "adaptive AUPR {:.4} ≥ none {:.4} − 0.02",
                    adaptive.aupr, none.aupr
                ),
            ),
        ],
        elapsed,
        60.0,
    )
}

fn beta_separation(r: &Report) -> Outcome {
    let after = row(r, "mixture", "adaptive").beta_separation.unwrap_or(0.0);
    let before: f64 = r
        .summary_value("beta_separation_at_init")
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    outcome(
        &[
            (
                after >= 0.95,
                format!("β-threshold provenance accuracy after training {after:.4} (≥ 0.95)"),
            ),
            (
                before < after,
                format!("at initialization {before:.4} (strictly lower)"),
            ),
        ],
        Duration::ZERO,
        f64::INFINITY,
    )
}

fn main() {
    let cfg = ExperimentConfig::new(SEED);
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    results.push(("gradient correctness", gradients()));
    results.push(("KL invariants", kl_invariants()));
    results.push(("metric oracles", metric_oracles()));

    let t = Instant::now();
    let extremes = run_extremes(&cfg).expect("extremes run");
    let t_extremes = t.elapsed();
    results.push((
        "extremes, pure-in traffic",
        extremes_pure_in(&extremes, t_extremes),
    ));
    results.push((
        "extremes, pure-out traffic",
        extremes_pure_out(&extremes, t_extremes),
    ));

    let t = Instant::now();
    let mix = run_mixture(&cfg).expect("mixture run");
    results.push(("even mixture", mixture(&mix, t.elapsed())));

    let t = Instant::now();
    let online = run_online(&cfg).expect("online run");
    results.push((
        "online training",
        outcome(
            &[
                (
                    online.delta_aupr <= 0.02,
                    format!("|ΔAUPR| {:.4} (≤ 0.02)", online.delta_aupr),
                ),
                (
                    online.delta_detection <= 0.01,
                    format!(
                        "|Δdetection| {:.4} (≤ 0.01) vs 40-epoch adaptive from scratch",
                        online.delta_detection
                    ),
                ),
            ],
            t.elapsed(),
            120.0,
        ),
    ));

    let t = Instant::now();
    let ablations: Vec<Report> = (0..ABLATION_SEEDS)
        .map(|s| run_frozen_ablation(&cfg.clone().with_seed(SEED + s)).expect("ablation run"))
        .collect();
    let t_ablation = t.elapsed();
    let per_seed: Vec<String> = ablations
        .iter()
        .map(|r| {
            let d: Vec<String> = r
                .rows
                .iter()
                .map(|x| format!("{:.3}", x.detection_accuracy))
                .collect();
            d.join("<")
        })
        .collect();
    let ordered = ablations
        .iter()
        .filter(|r| r.summary_value("ordering_holds") == Some("true"))
        .count();
    results.push((
        "feedback ordering",
        outcome(
            &[(
                ordered >= 4,
                format!(
                    "none < frozen < adaptive on {ordered}/{ABLATION_SEEDS} seeds (≥ 4): {}",
                    per_seed.join(", ")
                ),
            )],
            t_ablation,
            180.0,
        ),
    ));

    results.push(("β separation", beta_separation(&mix)));

    let same = |a: &Report, b: &Report| {
        a.summary == b.summary
            && a.rows.len() == b.rows.len()
            && a.rows
                .iter()
                .zip(&b.rows)
                .all(|(x, y)| x.metrics_only() == y.metrics_only())
    };
    let grads_again = (0..20).all(|s| {
        let reg = RegularizerConfig::adaptive(10.0);
        grad_check_random(s, &reg).unwrap() == grad_check_random(s, &reg).unwrap()
    });
    let checks = [
        (grads_again, "gradient checks".to_string()),
        (
            kl_invariants()
                .detail
                .split(';')
                .take(3)
                .eq(results[1].1.detail.split(';').take(3)),
            "KL invariants".into(),
        ),
        (
            metric_oracles()
                .detail
                .split(';')
                .take(3)
                .eq(results[2].1.detail.split(';').take(3)),
            "metric oracles".into(),
        ),
        (
            same(&extremes, &run_extremes(&cfg).unwrap()),
            "extremes".into(),
        ),
        (
            same(&mix, &run_mixture(&cfg).unwrap()),
            "mixture and β separation".into(),
        ),
        (
            same(&online.report, &run_online(&cfg).unwrap().report),
            "online".into(),
        ),
        (
            ablations.iter().enumerate().all(|(s, r)| {
                same(
                    r,
                    &run_frozen_ablation(&cfg.clone().with_seed(SEED + s as u64)).unwrap(),
                )
            }),
            "ablation, 5 seeds".into(),
        ),
    ];
    let reproduced: Vec<String> = checks
        .iter()
        .map(|(ok, n)| format!("{}{n}", if *ok { "" } else { "✗ " }))
        .collect();
    results.push((
        "determinism",
        Outcome {
            pass: checks.iter().all(|(ok, _)| *ok),
            detail: format!("identical metrics on re-run: {}", reproduced.join(", ")),
        },
    ));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "{} [{:>2}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
