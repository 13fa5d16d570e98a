use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smoothalign::cycle::{gcc_from_accumulated, match_probabilities};
use smoothalign::eval::{kendalls_tau, phase_accuracy, LabeledFrames};
use smoothalign::synth::random_orthonormal;
use smoothalign::train::sample_frames;
use smoothalign::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn sized_matrix(max: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    (1..=max, 1..=max).prop_flat_map(move |(r, c)| matrix(r, c, lo, hi))
}

fn unit_seq(d: usize, m: usize) -> impl Strategy<Value = FeatureSequence> {
    matrix(d, m, -1.0, 1.0).prop_filter_map("zero column", |a| {
        l2_normalize(&FeatureSequence::new(a).ok()?).ok()
    })
}

fn pair(max_len: usize, max_dim: usize) -> impl Strategy<Value = (FeatureSequence, FeatureSequence)> {
    (1..=max_dim, 2..=max_len, 2..=max_len).prop_flat_map(|(d, m, n)| (unit_seq(d, m), unit_seq(d, n)))
}

const KINDS: [OperatorKind; 2] = [OperatorKind::SmoothMin, OperatorKind::MinGamma];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn operator_bounds(a in proptest::collection::vec(-5.0..5.0f64, 1..9), gamma in 0.01..2.0f64) {
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sm = smooth_min(&a, gamma).unwrap();
        let mg = min_gamma(&a, gamma).unwrap();
        prop_assert!(lo <= sm && sm <= hi);
        prop_assert!(mg <= lo);
        if a.len() > 1 {
            prop_assert!(smooth_min_penalty(&a, gamma, OperatorKind::MinGamma).unwrap() < 0.0);
        }
    }

    #[test]
    fn penalty_scale_identity(a in proptest::collection::vec(-3.0..3.0f64, 2..7), gamma in 0.05..2.0f64) {
        let scaled: Vec<f64> = a.iter().map(|v| v / gamma).collect();
        for kind in KINDS {
            let lhs = smooth_min_penalty(&a, gamma, kind).unwrap();
            let rhs = gamma * smooth_min_penalty(&scaled, 1.0, kind).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-300) + 1e-15, "{kind}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn contrastive_rows_are_distributions((x, y) in pair(12, 6), beta in 0.05..1.0f64) {
        let c = contrastive_cost(&x, &y, beta).unwrap();
        for row in c.values.rows() {
            let total: f64 = row.iter().map(|v| (-v).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn relaxed_tables_bracket_hard_table(c in sized_matrix(7, 0.0, 3.0), gamma in 0.01..1.0f64) {
        let cm = CostMatrix::new(c).unwrap();
        let hard = accumulate(&cm, SmoothMinConfig::hard()).unwrap();
        let upper = accumulate(&cm, SmoothMinConfig::new(gamma, OperatorKind::SmoothMin).unwrap()).unwrap();
        let lower = accumulate(&cm, SmoothMinConfig::new(gamma, OperatorKind::MinGamma).unwrap()).unwrap();
        for ((h, u), l) in hard.values.iter().zip(&upper.values).zip(&lower.values) {
            prop_assert!(u >= h && l <= h);
        }
    }

    #[test]
    fn hard_paths_are_feasible(c in sized_matrix(9, -2.0, 2.0)) {
        let cm = CostMatrix::new(c).unwrap();
        let (m, n) = cm.shape();
        let path = hard_path(&cm).unwrap();
        prop_assert!(path.validate(m, n).is_ok());
        let hard = accumulate(&cm, SmoothMinConfig::hard()).unwrap();
        prop_assert!((path.cost(&cm) - hard.total()).abs() < 1e-9);
    }

    #[test]
    fn match_probabilities_and_composition_are_stochastic(
        (rxy, ryx) in (1..8usize, 1..8usize).prop_flat_map(|(m, n)| (matrix(m, n, -20.0, 20.0), matrix(n, m, -20.0, 20.0))),
        alpha in 0.1..3.0f64,
    ) {
        let wrap = |v: Array2<f64>| AccumulatedCostMatrix { values: v, gamma: 0.1, kind: OperatorKind::SmoothMin };
        let p_xy = match_probabilities(&wrap(rxy), alpha).unwrap();
        let p_yx = match_probabilities(&wrap(ryx), alpha).unwrap();
        for col in p_xy.values.columns() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-9);
        }
        let composed = compose(&p_yx, &p_xy).unwrap();
        for col in composed.columns() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gcc_ignores_row_shifts(
        (rxy, ryx, shift) in (1..7usize, 1..7usize).prop_flat_map(|(m, n)| (
            matrix(m, n, 0.0, 10.0),
            matrix(n, m, 0.0, 10.0),
            proptest::collection::vec(-50.0..50.0f64, m),
        )),
    ) {
        let wrap = |v: Array2<f64>| AccumulatedCostMatrix { values: v, gamma: 0.1, kind: OperatorKind::SmoothMin };
        let mut shifted = rxy.clone();
        for (mut row, k) in shifted.rows_mut().into_iter().zip(&shift) {
            row += *k;
        }
        let base = gcc_from_accumulated(&wrap(rxy), &wrap(ryx.clone()), 1.0).unwrap();
        let moved = gcc_from_accumulated(&wrap(shifted), &wrap(ryx), 1.0).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn prefix_rows_depend_only_on_prefix((x, y) in pair(9, 4), cut in 1usize..9) {
        let cut = cut.min(x.len());
        let idx: Vec<usize> = (0..cut).collect();
        let xp = x.select(&idx).unwrap();
        let cfg = SmoothMinConfig::new(0.1, OperatorKind::SmoothMin).unwrap();
        let full = accumulate(&contrastive_cost(&x, &y, 0.1).unwrap(), cfg).unwrap();
        let part = accumulate(&contrastive_cost(&xp, &y, 0.1).unwrap(), cfg).unwrap();
        prop_assert_eq!(&part.values, &full.values.slice(s![..cut, ..]).to_owned());
        let pf = match_probabilities(&full, 1.0).unwrap();
        let pp = match_probabilities(&part, 1.0).unwrap();
        prop_assert_eq!(&pp.values, &pf.values.slice(s![.., ..cut]).to_owned());
    }

    #[test]
    fn default_loss_is_finite_and_nonnegative((x, y) in pair(10, 5)) {
        let t = total_loss(&x, &y, &LossConfig::default()).unwrap();
        prop_assert!(t.is_finite() && t >= 0.0);
    }

    #[test]
    fn swapping_inputs_swaps_alignment_gradients((x, y) in pair(7, 4)) {
        for kind in KINDS {
            let cfg = LossConfig { lambda_g: 0.0, kind, ..LossConfig::default() };
            let g = loss_gradients(&x, &y, &cfg).unwrap();
            let h = loss_gradients(&y, &x, &cfg).unwrap();
            prop_assert_eq!(g.loss_value, h.loss_value);
            prop_assert_eq!(&g.d_x, &h.d_y);
            prop_assert_eq!(&g.d_y, &h.d_x);
        }
    }

    #[test]
    fn gradients_are_blind_to_column_scale(
        (x, y) in pair(7, 4),
        scales in proptest::collection::vec(0.2..5.0f64, 7),
    ) {
        // Raw (unnormalized) inputs: rescale each column of x.
        let mut xr = x.data().clone();
        for (mut col, s) in xr.columns_mut().into_iter().zip(&scales) {
            col *= *s;
        }
        let xr = FeatureSequence::new(xr).unwrap();
        for kind in KINDS {
            let cfg = LossConfig { kind, ..LossConfig::default() };
            let g = loss_gradients(&xr, &y, &cfg).unwrap();
            for (gc, xc) in g.d_x.columns().into_iter().zip(xr.data().columns()) {
                let radial = gc.dot(&xc);
                let scale = gc.dot(&gc).sqrt() * xc.dot(&xc).sqrt();
                prop_assert!(radial.abs() <= 1e-10 * scale.max(1e-300) + 1e-14);
            }
            let base = loss_gradients(&x, &y, &cfg).unwrap();
            prop_assert!((g.loss_value - base.loss_value).abs() <= 1e-10 * base.loss_value.abs().max(1.0));
        }
    }

    #[test]
    fn tau_survives_monotone_reindexing(u in unit_seq(6, 15), v in unit_seq(6, 12), reps in proptest::collection::vec(1usize..4, 12)) {
        // Repeating columns of v maps each nearest-neighbour index through a
        // strictly increasing function (ties go to the first copy).
        let mut idx = Vec::new();
        for (j, &r) in reps.iter().enumerate() {
            idx.extend(std::iter::repeat_n(j, r));
        }
        let stretched = v.select(&idx).unwrap();
        prop_assert_eq!(kendalls_tau(&u, &v).unwrap(), kendalls_tau(&u, &stretched).unwrap());
    }
}

#[test]
fn operators_approach_hard_min_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gammas = [2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01, 0.001];
    for _ in 0..200 {
        let n = rng.random_range(2..8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        for kind in KINDS {
            let gaps: Vec<f64> = gammas
                .iter()
                .map(|&g| (SmoothMinConfig::new(g, kind).unwrap().eval(&a).unwrap() - lo).abs())
                .collect();
            assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{kind} {a:?} {gaps:?}");
            assert!(*gaps.last().unwrap() < 1e-2);
        }
    }
}

#[test]
fn smooth_table_cools_toward_hard_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (m, n) = (rng.random_range(1..7), rng.random_range(1..7));
        let c = CostMatrix::new(Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..2.0))).unwrap();
        let hard = accumulate(&c, SmoothMinConfig::hard()).unwrap().total();
        let finals: Vec<f64> = [1.0, 0.5, 0.1, 0.01]
            .iter()
            .map(|&g| accumulate(&c, SmoothMinConfig::new(g, OperatorKind::SmoothMin).unwrap()).unwrap().total())
            .collect();
        assert!(finals.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{finals:?}");
        assert!(finals[3] >= hard - 1e-12 && finals[3] - hard < 0.05 * (m + n) as f64);
    }
}

#[test]
fn sample_frames_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draws = 100_000;
    let mut counts = [0usize; 10];
    for _ in 0..draws {
        let s = sample_frames(10, 3, &mut rng).unwrap();
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for i in s {
            counts[i] += 1;
        }
    }
    let sigma = (0.3f64 * 0.7 / draws as f64).sqrt();
    for c in counts {
        let freq = c as f64 / draws as f64;
        assert!((freq - 0.3).abs() < 3.0 * sigma, "{counts:?}");
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize, m: usize) -> FeatureSequence {
    let a = Array2::from_shape_fn((d, m), |_| rng.random_range(-1.0..1.0));
    l2_normalize(&FeatureSequence::new(a).unwrap()).unwrap()
}

#[test]
fn tau_of_random_embeddings_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let trials = 400;
    let small = (0..trials)
        .filter(|_| {
            let (u, v) = (random_unit(&mut rng, 16, 50), random_unit(&mut rng, 16, 50));
            kendalls_tau(&u, &v).unwrap().abs() < 0.3
        })
        .count();
    assert!(small as f64 / trials as f64 > 0.95, "{small}/{trials}");
}

#[test]
fn phase_accuracy_of_random_embeddings_is_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let labels: Vec<usize> = (0..80).map(|i| i / 20).collect();
    let mut accs = Vec::new();
    for _ in 0..20 {
        let train: Vec<FeatureSequence> = (0..8).map(|_| random_unit(&mut rng, 16, 80)).collect();
        let test: Vec<FeatureSequence> = (0..4).map(|_| random_unit(&mut rng, 16, 80)).collect();
        let tr: Vec<LabeledFrames> = train.iter().map(|e| LabeledFrames { embedding: e, labels: &labels }).collect();
        let te: Vec<LabeledFrames> = test.iter().map(|e| LabeledFrames { embedding: e, labels: &labels }).collect();
        accs.push(phase_accuracy(&tr, &te).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() < 0.05, "{mean}");
}

#[test]
fn phase_accuracy_ignores_global_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let labels: Vec<usize> = (0..30).map(|i| i / 10).collect();
    for _ in 0..10 {
        let q = random_orthonormal(8, 8, &mut rng);
        let train: Vec<FeatureSequence> = (0..3).map(|_| random_unit(&mut rng, 8, 30)).collect();
        let test = random_unit(&mut rng, 8, 30);
        let rot = |e: &FeatureSequence| FeatureSequence::new(q.dot(e.data())).unwrap();
        let train_r: Vec<FeatureSequence> = train.iter().map(rot).collect();
        let test_r = rot(&test);
        let acc = |tr: &[FeatureSequence], te: &FeatureSequence| {
            let tr: Vec<LabeledFrames> = tr.iter().map(|e| LabeledFrames { embedding: e, labels: &labels }).collect();
            phase_accuracy(&tr, &[LabeledFrames { embedding: te, labels: &labels }]).unwrap()
        };
        assert_eq!(acc(&train, &test), acc(&train_r, &test_r));
    }
}
