//! Reverse-mode derivatives of the combined objective.
//!
//! The graph is fixed once the sequence lengths are known, so the backward pass
//! is written out by hand: normalization, similarity, row softmax, the DP table
//! (cells visited in reverse order), prefix-match softmaxes, and composition.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cost::{neg_log_softmax_rows, similarities, CostMatrix};
use crate::cycle::{match_probabilities, DIAGONAL_FLOOR};
use crate::dtw::{accumulate, predecessors, AccumulatedCostMatrix};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossConfig};
use crate::sequence::{l2_normalize, FeatureSequence};
use crate::smoothmin::{grad_unchecked, OperatorKind, SmoothMinConfig};
use crate::synth::derive_rng;

pub use crate::smoothmin::smooth_min_grad;

/// Gradients of the objective with respect to the raw (un-normalized) inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGradients {
    pub d_x: Array2<f64>,
    pub d_y: Array2<f64>,
    pub loss_value: f64,
}

fn ensure_finite(stage: &'static str, a: &Array2<f64>) -> Result<()> {
    match a.iter().find(|v| !v.is_finite()) {
        None => Ok(()),
        Some(v) => Err(Error::NumericFailure {
            stage,
            detail: format!("encountered {v}"),
        }),
    }
}

/// Adjoint of the recurrence: given `dL/dR` seeds, return `dL/dC`.
///
/// `seed` is consumed as the running adjoint table.
pub(crate) fn accumulate_backward(
    r: &AccumulatedCostMatrix,
    config: SmoothMinConfig,
    mut seed: Array2<f64>,
) -> Array2<f64> {
    let (m, n) = r.values.dim();
    let kind = config.effective_kind();
    let mut pred = [(0, 0); 3];
    let mut args = [0.0; 3];
    let mut w = [0.0; 3];
    for i in (0..m).rev() {
        for j in (0..n).rev() {
            let e = seed[[i, j]];
            if e == 0.0 {
                continue;
            }
            let k = predecessors(i, j, &mut pred);
            if k == 0 {
                continue;
            }
            for (a, &p) in args.iter_mut().zip(&pred[..k]) {
                *a = r.values[p];
            }
            grad_unchecked(kind, config.gamma, &args[..k], &mut w[..k]);
            for (&p, &wk) in pred[..k].iter().zip(&w[..k]) {
                seed[p] += e * wk;
            }
        }
    }
    // Every cell contributes its own cost once, so dR(i, j) is also dC(i, j).
    seed
}

/// Adjoint of `c = -log softmax_rows(s / beta)` with respect to `s`.
fn neg_log_softmax_backward(c: &Array2<f64>, dc: &Array2<f64>, beta: f64) -> Array2<f64> {
    let mut ds = Array2::zeros(c.dim());
    for ((crow, dcrow), mut dsrow) in c.rows().into_iter().zip(dc.rows()).zip(ds.rows_mut()) {
        let total: f64 = dcrow.sum();
        for ((d, &cv), &g) in dsrow.iter_mut().zip(crow).zip(dcrow) {
            *d = ((-cv).exp() * total - g) / beta;
        }
    }
    ds
}

/// Adjoint of `P = softmax over columns of -R / alpha`, transposed, with respect to `R`.
///
/// `dp` has the shape of `P` (`N x M` for an `M x N` table).
fn match_probabilities_backward(p: &Array2<f64>, dp: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let (n, m) = p.dim();
    let mut dr = Array2::zeros((m, n));
    for i in 0..m {
        let q = p.column(i);
        let g = dp.column(i);
        let dot: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..n {
            dr[[i, k]] = -q[k] * (g[k] - dot) / alpha;
        }
    }
    dr
}

/// Adjoint of column-wise L2 normalization: `(g - u (u . g)) / |x|`.
fn normalize_backward(raw: &Array2<f64>, unit: &Array2<f64>, d_unit: &Array2<f64>) -> Array2<f64> {
    let mut out = d_unit.clone();
    for ((mut o, u), x) in out
        .axis_iter_mut(Axis(1))
        .zip(unit.axis_iter(Axis(1)))
        .zip(raw.axis_iter(Axis(1)))
    {
        let norm = x.dot(&x).sqrt();
        let proj = u.dot(&o);
        o.zip_mut_with(&u, |g, &uv| *g = (*g - uv * proj) / norm);
    }
    out
}

/// Exact gradient of [`total_loss`] with respect to raw inputs, which are
/// L2-normalized inside the differentiated graph.
pub fn loss_gradients(x: &FeatureSequence, y: &FeatureSequence, cfg: &LossConfig) -> Result<LossGradients> {
    cfg.validate()?;
    if cfg.gamma == 0.0 || cfg.kind == OperatorKind::HardMin {
        return Err(Error::invalid(
            "gradients need a relaxed minimum with gamma > 0",
        ));
    }
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "feature dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    let xn = l2_normalize(x)?;
    let yn = l2_normalize(y)?;
    let sm = cfg.smooth_min();

    let s = similarities(&xn, &yn);
    let c_xy = neg_log_softmax_rows(&s, cfg.beta);
    let c_yx = neg_log_softmax_rows(&similarities(&yn, &xn), cfg.beta);
    ensure_finite("contrastive cost", &c_xy)?;
    ensure_finite("contrastive cost", &c_yx)?;

    let r_xy = accumulate(&CostMatrix::new(c_xy.clone())?, sm)?;
    let r_yx = accumulate(&CostMatrix::new(c_yx.clone())?, sm)?;
    ensure_finite("accumulated cost", &r_xy.values)?;
    ensure_finite("accumulated cost", &r_yx.values)?;

    let (m, n) = c_xy.dim();
    let mut dr_xy = Array2::<f64>::zeros((m, n));
    let mut dr_yx = Array2::<f64>::zeros((n, m));
    dr_xy[[m - 1, n - 1]] += cfg.lambda_s;
    dr_yx[[n - 1, m - 1]] += cfg.lambda_s;
    let align = r_xy.total() + r_yx.total();

    let mut gcc = 0.0;
    {
        let p_xy = match_probabilities(&r_xy, cfg.alpha)?.values;
        let p_yx = match_probabilities(&r_yx, cfg.alpha)?.values;
        let composed = p_yx.dot(&p_xy);
        let mut dp_xy = Array2::<f64>::zeros((n, m));
        let mut dp_yx = Array2::<f64>::zeros((m, n));
        for i in 0..m {
            let d = composed[[i, i]];
            gcc -= d.max(DIAGONAL_FLOOR).ln();
            if cfg.lambda_g == 0.0 || d <= DIAGONAL_FLOOR {
                continue;
            }
            let g = -cfg.lambda_g / d;
            for k in 0..n {
                dp_yx[[i, k]] += g * p_xy[[k, i]];
                dp_xy[[k, i]] += g * p_yx[[i, k]];
            }
        }
        if cfg.lambda_g != 0.0 {
            dr_xy += &match_probabilities_backward(&p_xy, &dp_xy, cfg.alpha);
            dr_yx += &match_probabilities_backward(&p_yx, &dp_yx, cfg.alpha);
        }
    }
    let loss_value = cfg.lambda_g * gcc + cfg.lambda_s * align;
    if !loss_value.is_finite() {
        return Err(Error::NumericFailure {
            stage: "loss",
            detail: format!("loss evaluated to {loss_value}"),
        });
    }
    ensure_finite("match probabilities", &dr_xy)?;
    ensure_finite("match probabilities", &dr_yx)?;

    let dc_xy = accumulate_backward(&r_xy, sm, dr_xy);
    let dc_yx = accumulate_backward(&r_yx, sm, dr_yx);
    ensure_finite("recurrence", &dc_xy)?;
    ensure_finite("recurrence", &dc_yx)?;

    let mut ds = neg_log_softmax_backward(&c_xy, &dc_xy, cfg.beta);
    ds += &neg_log_softmax_backward(&c_yx, &dc_yx, cfg.beta).t();

    let dxn = yn.data().dot(&ds.t());
    let dyn_ = xn.data().dot(&ds);
    let d_x = normalize_backward(x.data(), xn.data(), &dxn);
    let d_y = normalize_backward(y.data(), yn.data(), &dyn_);
    ensure_finite("normalization", &d_x)?;
    ensure_finite("normalization", &d_y)?;

    Ok(LossGradients { d_x, d_y, loss_value })
}

/// Worst relative error between [`loss_gradients`] and central differences.
///
/// The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(
    x: &FeatureSequence,
    y: &FeatureSequence,
    cfg: &LossConfig,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let grads = loss_gradients(x, y, cfg)?;
    let eval = |xs: &Array2<f64>, ys: &Array2<f64>| -> Result<f64> {
        let xn = l2_normalize(&FeatureSequence::new(xs.clone())?)?;
        let yn = l2_normalize(&FeatureSequence::new(ys.clone())?)?;
        total_loss(&xn, &yn, cfg)
    };
    let mut worst = 0.0_f64;
    let (xd, yd) = (x.data(), y.data());
    for (which, analytic) in [(0, &grads.d_x), (1, &grads.d_y)] {
        for (idx, &a) in analytic.indexed_iter() {
            let (mut xp, mut yp) = (xd.clone(), yd.clone());
            let (mut xm, mut ym) = (xd.clone(), yd.clone());
            if which == 0 {
                xp[idx] += step;
                xm[idx] -= step;
            } else {
                yp[idx] += step;
                ym[idx] -= step;
            }
            let numeric = (eval(&xp, &yp)? - eval(&xm, &ym)?) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Outcome of [`random_gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub trials: usize,
    pub worst_relative_error: f64,
    /// `(m, n, d)` of the trial with the worst error.
    pub worst_shape: (usize, usize, usize),
}

/// [`finite_difference_check`] on `trials` random pairs with `2 <= m, n <= max_len`
/// and `1 <= d <= max_dim`, entries standard normal.
pub fn random_gradient_check(
    cfg: &LossConfig,
    trials: usize,
    max_len: usize,
    max_dim: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckSummary> {
    if trials == 0 || max_len < 2 || max_dim == 0 {
        return Err(Error::invalid("need trials >= 1, max_len >= 2, max_dim >= 1"));
    }
    let mut rng = derive_rng(seed, 0);
    let mut summary = GradCheckSummary {
        trials,
        worst_relative_error: 0.0,
        worst_shape: (0, 0, 0),
    };
    for _ in 0..trials {
        let m = rng.random_range(2..=max_len);
        let n = rng.random_range(2..=max_len);
        let d = rng.random_range(1..=max_dim);
        let mut draw = |cols| {
            let v = Array2::from_shape_fn((d, cols), |_| StandardNormal.sample(&mut rng));
            FeatureSequence::new(v)
        };
        let (x, y) = (draw(m)?, draw(n)?);
        let err = finite_difference_check(&x, &y, cfg, step)?;
        if err >= summary.worst_relative_error {
            summary.worst_relative_error = err;
            summary.worst_shape = (m, n, d);
        }
    }
    Ok(summary)
}
