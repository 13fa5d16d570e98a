//! Relaxed minimum operators and their smoothness penalties.
//!
//! Two relaxations are provided. [`smooth_min`] is the softmax-weighted mean of
//! the arguments, which always sits at or above the true minimum. [`min_gamma`]
//! is the negated, scaled log-sum-exp, which always sits strictly below it when
//! there is more than one argument. Both reduce to the hard minimum at
//! `gamma = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which relaxation of `min` a dynamic program uses at every cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    SmoothMin,
    MinGamma,
    HardMin,
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OperatorKind::SmoothMin => "smooth_min",
            OperatorKind::MinGamma => "min_gamma",
            OperatorKind::HardMin => "hard_min",
        })
    }
}

/// Temperature plus operator choice. A zero temperature always evaluates the hard minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothMinConfig {
    pub gamma: f64,
    pub kind: OperatorKind,
}

impl SmoothMinConfig {
    pub fn new(gamma: f64, kind: OperatorKind) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be finite and non-negative, got {gamma}"
            )));
        }
        Ok(Self { gamma, kind })
    }

    pub fn hard() -> Self {
        Self {
            gamma: 0.0,
            kind: OperatorKind::HardMin,
        }
    }

    /// The operator actually evaluated, after folding `gamma = 0` into `HardMin`.
    pub fn effective_kind(&self) -> OperatorKind {
        if self.gamma == 0.0 {
            OperatorKind::HardMin
        } else {
            self.kind
        }
    }

    pub fn eval(&self, a: &[f64]) -> Result<f64> {
        check_args(a, self.gamma)?;
        Ok(eval_unchecked(self.effective_kind(), self.gamma, a))
    }
}

fn check_args(a: &[f64], gamma: f64) -> Result<()> {
    if a.is_empty() {
        return Err(Error::invalid("relaxed min of an empty vector"));
    }
    if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite argument {bad}")));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be finite and non-negative, got {gamma}"
        )));
    }
    Ok(())
}

/// Index of the smallest element; ties go to the lowest index.
pub fn argmin(a: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in a.iter().enumerate().skip(1) {
        if v < a[best] {
            best = k;
        }
    }
    best
}

/// Shifted softmax weights `exp(-(a_k - min a) / gamma)` and their sum.
///
/// The minimum entry always receives weight exactly 1, so the sum is in `[1, N]`.
fn shifted_weights(a: &[f64], gamma: f64, out: &mut [f64]) -> (f64, f64) {
    let a0 = a[argmin(a)];
    let mut z = 0.0;
    for (w, &v) in out.iter_mut().zip(a) {
        *w = (-(v - a0) / gamma).exp();
        z += *w;
    }
    (a0, z)
}

/// Evaluate an operator without argument validation. `a` must be non-empty and finite.
pub(crate) fn eval_unchecked(kind: OperatorKind, gamma: f64, a: &[f64]) -> f64 {
    if a.len() == 1 {
        return a[0];
    }
    a[argmin(a)] + penalty_unchecked(kind, gamma, a)
}

pub(crate) fn penalty_unchecked(kind: OperatorKind, gamma: f64, a: &[f64]) -> f64 {
    if a.len() == 1 || gamma == 0.0 {
        return 0.0;
    }
    let mut w = [0.0; 8];
    let mut heap;
    let w: &mut [f64] = if a.len() <= w.len() {
        &mut w[..a.len()]
    } else {
        heap = vec![0.0; a.len()];
        &mut heap
    };
    match kind {
        OperatorKind::HardMin => 0.0,
        OperatorKind::SmoothMin => {
            let (a0, z) = shifted_weights(a, gamma, w);
            a.iter().zip(w.iter()).map(|(v, wk)| (v - a0) * wk).sum::<f64>() / z
        }
        OperatorKind::MinGamma => {
            // ln(1 + rest) keeps the penalty strictly negative when the other weights are tiny.
            shifted_weights(a, gamma, w);
            let k0 = argmin(a);
            let rest: f64 = w
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != k0)
                .map(|(_, wk)| wk)
                .sum();
            -gamma * rest.ln_1p()
        }
    }
}

/// Gradient of the operator with respect to its arguments, written into `out`.
///
/// `SmoothMin`: `w_k (1 + (s(a) - a_k) / gamma)`; `MinGamma`: `w_k`; with
/// `w = softmax(-a / gamma)`. `HardMin` returns the one-hot of [`argmin`].
pub(crate) fn grad_unchecked(kind: OperatorKind, gamma: f64, a: &[f64], out: &mut [f64]) {
    if a.len() == 1 {
        out[0] = 1.0;
        return;
    }
    if gamma == 0.0 || kind == OperatorKind::HardMin {
        out.iter_mut().for_each(|g| *g = 0.0);
        out[argmin(a)] = 1.0;
        return;
    }
    let (a0, z) = shifted_weights(a, gamma, out);
    out.iter_mut().for_each(|w| *w /= z);
    if kind == OperatorKind::SmoothMin {
        let s = a0
            + a.iter()
                .zip(out.iter())
                .map(|(v, w)| (v - a0) * w)
                .sum::<f64>();
        for (g, &v) in out.iter_mut().zip(a) {
            *g *= 1.0 + (s - v) / gamma;
        }
    }
}

/// Softmax-weighted mean of `a` at temperature `gamma`; the plain minimum at `gamma = 0`.
pub fn smooth_min(a: &[f64], gamma: f64) -> Result<f64> {
    check_args(a, gamma)?;
    let kind = if gamma == 0.0 {
        OperatorKind::HardMin
    } else {
        OperatorKind::SmoothMin
    };
    Ok(eval_unchecked(kind, gamma, a))
}

/// `-gamma * log(sum(exp(-a / gamma)))`, evaluated with a max shift; the plain minimum at `gamma = 0`.
pub fn min_gamma(a: &[f64], gamma: f64) -> Result<f64> {
    check_args(a, gamma)?;
    let kind = if gamma == 0.0 {
        OperatorKind::HardMin
    } else {
        OperatorKind::MinGamma
    };
    Ok(eval_unchecked(kind, gamma, a))
}

/// `s(a) - min(a)`: the implicit per-cell path penalty a relaxed operator adds.
pub fn smooth_min_penalty(a: &[f64], gamma: f64, kind: OperatorKind) -> Result<f64> {
    check_args(a, gamma)?;
    Ok(penalty_unchecked(kind, gamma, a))
}

/// Gradient of the relaxed operator; undefined (and rejected) at `gamma = 0`.
pub fn smooth_min_grad(a: &[f64], gamma: f64, kind: OperatorKind) -> Result<Vec<f64>> {
    check_args(a, gamma)?;
    if gamma == 0.0 {
        return Err(Error::invalid(
            "the hard minimum is not differentiable; gradient requires gamma > 0",
        ));
    }
    let mut out = vec![0.0; a.len()];
    grad_unchecked(kind, gamma, a, &mut out);
    Ok(out)
}

/// Unique root `x >= 1` of `x - 1 = (n - 1) exp(-x)`.
///
/// `gamma * (x(n) - 1)` is the largest penalty [`smooth_min`] can add over `n` arguments.
pub fn penalty_max_root(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("penalty_max_root needs n >= 1"));
    }
    let m = (n - 1) as f64;
    let f = |x: f64| x - 1.0 - m * (-x).exp();
    let (mut lo, mut hi) = (1.0_f64, ((n + 1) as f64).ln() + 1.0);
    if f(lo) == 0.0 {
        return Ok(lo);
    }
    // f is strictly increasing with f(lo) < 0 < f(hi).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}
