//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smoothalign::cycle::{cycle_loss_from_composed, gcc_from_accumulated, match_probabilities};
use smoothalign::dataset::{build_dataset, Dataset, DatasetConfig, Split};
use smoothalign::eval::{evaluate_split, EvalReport};
use smoothalign::train::{initial_checkpoint, train, Checkpoint, TrainingConfig};
use smoothalign::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((m, n), |_| rng.random_range(lo..hi))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (m, n) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let c = CostMatrix::new(random_matrix(&mut rng, m, n, -1.0, 2.0)).unwrap();
        let (brute, _) = brute_force_dtw(&c).unwrap();
        let dp = accumulate(&c, SmoothMinConfig::hard()).unwrap().total();
        let path = hard_path(&c).unwrap();
        path.validate(m, n).unwrap();
        worst = worst.max((dp - brute).abs()).max((path.cost(&c) - brute).abs());
    }
    let took = start.elapsed();
    outcome(
        worst <= 1e-9 && took < Duration::from_secs(5),
        format!("max |dp - brute| = {worst:.1e} over 200 matrices in {took:.2?}"),
    )
}

fn appendix_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for k in 0..1000 {
        let n = rng.random_range(2..=8);
        let gamma = [0.05, 0.1, 1.0][k % 3];
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let sm = smooth_min(&a, gamma).unwrap();
        let mg = min_gamma(&a, gamma).unwrap();
        let d_sm = smooth_min_penalty(&a, gamma, OperatorKind::SmoothMin).unwrap();
        let d_mg = smooth_min_penalty(&a, gamma, OperatorKind::MinGamma).unwrap();
        let cap = gamma * (penalty_max_root(n).unwrap() - 1.0) + 1e-9;
        let floor = -gamma * (n as f64).ln() - 1e-9;
        let ok = mg < lo && lo <= sm && (0.0..=cap).contains(&d_sm) && d_mg >= floor && d_mg < 0.0;
        violations += usize::from(!ok);
    }
    outcome(violations == 0, format!("{violations} violations in 1000 vectors"))
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (a, b) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

fn penalty_maxima() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for gamma in [0.1, 1.0] {
        let d = |a: &[f64]| smooth_min_penalty(a, gamma, OperatorKind::SmoothMin).unwrap();
        let (_, max2) = golden_max(|t| d(&[0.0, t]), 0.0, 10.0 * gamma);
        // N = 3: coordinate ascent over (r2, r3) with r1 = 0, each step a 1-D golden search.
        let mut r3 = 2.0 * gamma;
        let mut max3 = 0.0;
        for _ in 0..30 {
            let r2 = golden_max(|t| d(&[0.0, t, r3]), 0.0, 10.0 * gamma).0;
            let (best, val) = golden_max(|t| d(&[0.0, r2, t]), 0.0, 10.0 * gamma);
            r3 = best;
            max3 = val;
        }
        for (got, paper) in [(max2 / gamma, 0.2785), (max3 / gamma, 0.4631)] {
            let rel = (got - paper).abs() / paper;
            pass &= rel < 1e-3;
            detail.push(format!("gamma={gamma}: {got:.5} vs {paper} (rel {rel:.1e})"));
        }
    }
    outcome(pass, detail.join("; "))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (kind, seed) in [(OperatorKind::SmoothMin, 40), (OperatorKind::MinGamma, 41)] {
        let cfg = LossConfig {
            kind,
            ..LossConfig::default()
        };
        let s = random_gradient_check(&cfg, 20, 8, 4, 1e-5, seed).unwrap();
        worst = worst.max(s.worst_relative_error);
    }
    let took = start.elapsed();
    outcome(
        worst < 1e-4 && took < Duration::from_secs(30),
        format!("worst relative error {worst:.2e} over 2 x 20 pairs in {took:.2?}"),
    )
}

fn collapse_separation() -> Outcome {
    let (m, n) = (10usize, 10usize);
    let collapsed = |len: usize| {
        let mut a = Array2::zeros((4, len));
        a.row_mut(1).fill(1.0);
        FeatureSequence::new(a).unwrap()
    };
    let (x, y) = (collapsed(m), collapsed(n));
    let cfg = LossConfig::default();
    let contrastive = alignment_loss(&x, &y, cfg.gamma, cfg.beta, cfg.kind).unwrap();
    let floor = m.max(n) as f64 * (n as f64).ln();

    // Negative cosine cost is bounded below by -1 per cell, so no path can beat
    // -(M + N - 1); collapse attains exactly that bound.
    let cosine_at = |x: &FeatureSequence, y: &FeatureSequence| {
        accumulate(&negative_cosine_cost(x, y).unwrap(), SmoothMinConfig::hard()).unwrap().total()
    };
    let at_collapse = cosine_at(&x, &y);
    let bound = -((m + n - 1) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let others_above = (0..100).all(|_| {
        let u = l2_normalize(&FeatureSequence::new(random_matrix(&mut rng, 4, m, -1.0, 1.0)).unwrap()).unwrap();
        let v = l2_normalize(&FeatureSequence::new(random_matrix(&mut rng, 4, n, -1.0, 1.0)).unwrap()).unwrap();
        cosine_at(&u, &v) >= at_collapse
    });
    outcome(
        contrastive >= floor && at_collapse == bound && others_above,
        format!(
            "contrastive {contrastive:.4} >= {floor:.4}; cosine at collapse {at_collapse} = bound {bound}; random pairs never lower: {others_above}"
        ),
    )
}

fn stochasticity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut uniform_err = 0.0f64;
    for _ in 0..100 {
        let (m, n) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let wrap = |v| AccumulatedCostMatrix {
            values: v,
            gamma: 0.1,
            kind: OperatorKind::SmoothMin,
        };
        let p_xy = match_probabilities(&wrap(random_matrix(&mut rng, m, n, -30.0, 30.0)), 1.0).unwrap();
        let p_yx = match_probabilities(&wrap(random_matrix(&mut rng, n, m, -30.0, 30.0)), 1.0).unwrap();
        let composed = compose(&p_yx, &p_xy).unwrap();
        for col in p_xy.values.columns().into_iter().chain(composed.columns()) {
            worst = worst.max((col.sum() - 1.0).abs());
        }
        let flat = |r, c| wrap(Array2::from_elem((r, c), 3.7));
        let g = gcc_from_accumulated(&flat(m, n), &flat(n, m), 1.0).unwrap();
        uniform_err = uniform_err.max((g - m as f64 * (m as f64).ln()).abs());
    }
    let identity_zero = (1..=12).all(|m| cycle_loss_from_composed(&Array2::eye(m)) == 0.0);
    outcome(
        worst <= 1e-9 && identity_zero && uniform_err <= 1e-9,
        format!(
            "max |column sum - 1| = {worst:.1e}; gcc(identity) = 0: {identity_zero}; max |gcc(uniform) - M log M| = {uniform_err:.1e}"
        ),
    )
}

struct Run {
    checkpoint: Checkpoint,
    report: EvalReport,
}

fn run(ds: &Dataset, loss: &LossConfig, seed: u64) -> Run {
    let cfg = TrainingConfig {
        seed,
        ..TrainingConfig::default()
    };
    let split = Split::last_per_process(ds, cfg.holdout_per_process);
    let checkpoint = train(ds, &split, loss, &cfg).unwrap();
    let report = evaluate_split(ds, &split, loss.beta, |i| checkpoint.model.embed(&ds.sequences[i].data)).unwrap();
    Run { checkpoint, report }
}

fn end_to_end(ds: &Dataset, full: &Run, took: Duration) -> Outcome {
    let loss = LossConfig::default();
    let cfg = TrainingConfig::default();
    let split = Split::last_per_process(ds, cfg.holdout_per_process);
    let untrained = initial_checkpoint(ds, &loss, &cfg).unwrap().model;
    let base = evaluate_split(ds, &split, loss.beta, |i| untrained.embed(&ds.sequences[i].data)).unwrap();
    let oracle = evaluate_split(ds, &split, loss.beta, |i| ds.oracle_embedding(i)).unwrap();
    let r = &full.report;
    let trace = &full.checkpoint.loss_trace;
    let head = trace[..50].iter().sum::<f64>() / 50.0;
    let tail = trace[trace.len() - 50..].iter().sum::<f64>() / 50.0;
    let pass = r.kendalls_tau >= 0.8
        && r.kendalls_tau >= base.kendalls_tau + 0.3
        && r.phase_accuracy >= 0.7
        && r.mean_alignment_error <= 3.0 * oracle.mean_alignment_error
        && tail < head
        && took < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "tau {:.3} (untrained {:.3}); phase acc {:.3} (untrained {:.3}); align err {:.4} vs oracle {:.4} (ratio {:.2}); loss first/last 50 {:.2} -> {:.2}; {:.1?}",
            r.kendalls_tau,
            base.kendalls_tau,
            r.phase_accuracy,
            base.phase_accuracy,
            r.mean_alignment_error,
            oracle.mean_alignment_error,
            r.mean_alignment_error / oracle.mean_alignment_error,
            head,
            tail,
            took
        ),
    )
}

fn ablation(ds: &Dataset, full_seed0: &Run) -> Outcome {
    let variants = [
        ("min_gamma", LossConfig {
            kind: OperatorKind::MinGamma,
            ..LossConfig::default()
        }),
        ("no_gcc", LossConfig {
            lambda_g: 0.0,
            ..LossConfig::default()
        }),
    ];
    let seeds = [0u64, 1, 2];
    let full: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            if s == 0 {
                full_seed0.report.kendalls_tau
            } else {
                run(ds, &LossConfig::default(), s).report.kendalls_tau
            }
        })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut pass = true;
    let mut detail = vec![format!("full {:.3} {:?}", mean(&full), rounded(&full))];
    for (name, cfg) in variants {
        let taus: Vec<f64> = seeds.iter().map(|&s| run(ds, &cfg, s).report.kendalls_tau).collect();
        pass &= mean(&full) >= mean(&taus) - 0.05;
        detail.push(format!("{name} {:.3} {:?}", mean(&taus), rounded(&taus)));
    }
    outcome(pass, detail.join("; "))
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

fn determinism(ds: &Dataset, first: &Run) -> Outcome {
    let again = run(ds, &LossConfig::default(), 0);
    let rebuilt = build_dataset(&DatasetConfig::default(), 0).unwrap();
    let same_trace = again.checkpoint.loss_trace == first.checkpoint.loss_trace;
    let same_ck = serde_json::to_string(&again.checkpoint).unwrap() == serde_json::to_string(&first.checkpoint).unwrap();
    let same_report = again.report.to_json() == first.report.to_json();
    outcome(
        same_trace && same_ck && same_report && rebuilt == *ds,
        format!("trace {same_trace}, checkpoint {same_ck}, report {same_report}, dataset {}", rebuilt == *ds),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 oracle equivalence", oracle_equivalence()),
        ("2 appendix bounds", appendix_bounds()),
        ("3 penalty maxima", penalty_maxima()),
        ("4 gradient correctness", gradient_correctness()),
        ("5 collapse separation", collapse_separation()),
        ("6 stochasticity", stochasticity()),
    ];
    let ds = build_dataset(&DatasetConfig::default(), 0).unwrap();
    let start = Instant::now();
    let full = run(&ds, &LossConfig::default(), 0);
    let took = start.elapsed();
    results.push(("7 end-to-end synthetic", end_to_end(&ds, &full, took)));
    results.push(("8 ablation directions", ablation(&ds, &full)));
    results.push(("9 determinism", determinism(&ds, &full)));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
