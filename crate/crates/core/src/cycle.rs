//! Prefix-match probabilities and the global cycle-consistency loss.

use ndarray::Array2;

use crate::cost::contrastive_cost;
use crate::dtw::{accumulate, AccumulatedCostMatrix};
use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;
use crate::smoothmin::{OperatorKind, SmoothMinConfig};

/// Diagonal entries of the composed matrix are clamped to this before taking logs.
pub const DIAGONAL_FLOOR: f64 = 1e-12;

/// Column-stochastic `N x M` matrix; entry `(n, m)` is the probability that the
/// source prefix ending at `m` matches the target prefix ending at `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchProbabilityMatrix {
    pub values: Array2<f64>,
    pub alpha: f64,
}

/// Softmax of `-R(i, :) / alpha` for every source index `i`, stored transposed.
pub fn match_probabilities(r: &AccumulatedCostMatrix, alpha: f64) -> Result<MatchProbabilityMatrix> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if r.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("accumulated cost has non-finite entries"));
    }
    let (m, n) = r.values.dim();
    let mut p = Array2::<f64>::zeros((n, m));
    for (i, row) in r.values.rows().into_iter().enumerate() {
        let lo = row.fold(f64::INFINITY, |a, &b| a.min(b));
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (-(v - lo) / alpha).exp();
            p[[j, i]] = e;
            z += e;
        }
        p.column_mut(i).mapv_inplace(|e| e / z);
    }
    Ok(MatchProbabilityMatrix { values: p, alpha })
}

/// `P_yx * P_xy`: the round-trip distribution from `x` back to `x`, `M x M`.
pub fn compose(p_yx: &MatchProbabilityMatrix, p_xy: &MatchProbabilityMatrix) -> Result<Array2<f64>> {
    let (m, n) = p_yx.values.dim();
    let (n2, m2) = p_xy.values.dim();
    if n != n2 || m != m2 {
        return Err(Error::invalid(format!(
            "cannot compose {m}x{n} with {n2}x{m2} match matrices"
        )));
    }
    Ok(p_yx.values.dot(&p_xy.values))
}

/// Cross-entropy of the composed matrix against the identity.
pub fn cycle_loss_from_composed(composed: &Array2<f64>) -> f64 {
    -composed
        .diag()
        .iter()
        .map(|&d| d.max(DIAGONAL_FLOOR).ln())
        .sum::<f64>()
}

/// Cycle-consistency loss from two already-accumulated directional cost tables.
pub fn gcc_from_accumulated(
    r_xy: &AccumulatedCostMatrix,
    r_yx: &AccumulatedCostMatrix,
    alpha: f64,
) -> Result<f64> {
    let p_xy = match_probabilities(r_xy, alpha)?;
    let p_yx = match_probabilities(r_yx, alpha)?;
    Ok(cycle_loss_from_composed(&compose(&p_yx, &p_xy)?))
}

/// Global cycle-consistency loss between two normalized embedding sequences.
pub fn gcc_loss(
    x: &FeatureSequence,
    y: &FeatureSequence,
    gamma: f64,
    beta: f64,
    alpha: f64,
    kind: OperatorKind,
) -> Result<f64> {
    let cfg = SmoothMinConfig::new(gamma, kind)?;
    let r_xy = accumulate(&contrastive_cost(x, y, beta)?, cfg)?;
    let r_yx = accumulate(&contrastive_cost(y, x, beta)?, cfg)?;
    gcc_from_accumulated(&r_xy, &r_yx, alpha)
}
