//! Smoothed DTW recurrence, alignment losses, and hard-path recovery.
//!
//! `R(i, j) = c(i, j) + s([R(i-1, j-1), R(i-1, j), R(i, j-1)])` with `R(0, 0) = 0`
//! and every other out-of-range predecessor dropped from the argument list.
//! Dropping is equivalent to an infinite boundary but never feeds an infinity
//! through the softmax weights.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cost::{contrastive_cost, CostMatrix};
use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;
use crate::smoothmin::{argmin, eval_unchecked, OperatorKind, SmoothMinConfig};

/// Largest `M + N` the exhaustive path enumerator accepts.
pub const BRUTE_FORCE_MAX_SPAN: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedCostMatrix {
    pub values: Array2<f64>,
    pub gamma: f64,
    pub kind: OperatorKind,
}

impl AccumulatedCostMatrix {
    /// Accumulated cost at the bottom-right cell, i.e. the alignment loss.
    pub fn total(&self) -> f64 {
        let (m, n) = self.values.dim();
        self.values[[m - 1, n - 1]]
    }
}

/// Predecessor cells of `(i, j)` (0-based) in diagonal, vertical, horizontal order.
///
/// Returns the number of valid entries written into `out`. The origin has none;
/// its implicit predecessor is the zero-cost start.
#[inline]
pub(crate) fn predecessors(i: usize, j: usize, out: &mut [(usize, usize); 3]) -> usize {
    let mut k = 0;
    if i > 0 && j > 0 {
        out[k] = (i - 1, j - 1);
        k += 1;
    }
    if i > 0 {
        out[k] = (i - 1, j);
        k += 1;
    }
    if j > 0 {
        out[k] = (i, j - 1);
        k += 1;
    }
    k
}

/// Run the recurrence over `cost` using the relaxed minimum in `config`.
pub fn accumulate(cost: &CostMatrix, config: SmoothMinConfig) -> Result<AccumulatedCostMatrix> {
    let (m, n) = cost.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("empty cost matrix"));
    }
    if cost.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cost matrix has non-finite entries"));
    }
    let config = SmoothMinConfig::new(config.gamma, config.kind)?;
    let kind = config.effective_kind();
    let mut r = Array2::<f64>::zeros((m, n));
    let mut pred = [(0, 0); 3];
    let mut args = [0.0; 3];
    for i in 0..m {
        for j in 0..n {
            let k = predecessors(i, j, &mut pred);
            let s = if k == 0 {
                0.0
            } else {
                for (a, &p) in args.iter_mut().zip(&pred[..k]) {
                    *a = r[p];
                }
                eval_unchecked(kind, config.gamma, &args[..k])
            };
            r[[i, j]] = cost.values[[i, j]] + s;
        }
    }
    Ok(AccumulatedCostMatrix {
        values: r,
        gamma: config.gamma,
        kind: config.kind,
    })
}

/// A monotone, continuous warping path from `(1, 1)` to `(M, N)`, stored 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub steps: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// Check endpoints and that every step advances by (1,0), (0,1) or (1,1).
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let (first, last) = match (self.steps.first(), self.steps.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(Error::invalid("empty alignment path")),
        };
        if first != (1, 1) {
            return Err(Error::invalid(format!("path starts at {first:?}, not (1, 1)")));
        }
        if last != (m, n) {
            return Err(Error::invalid(format!("path ends at {last:?}, not ({m}, {n})")));
        }
        for w in self.steps.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if di > 1 || dj > 1 || di + dj == 0 {
                return Err(Error::invalid(format!(
                    "infeasible step {:?} -> {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Sum of `cost` along the path.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        self.steps
            .iter()
            .map(|&(i, j)| cost.values[[i - 1, j - 1]])
            .sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Optimal hard-DTW path. Ties prefer the diagonal, then vertical, then horizontal predecessor.
pub fn hard_path(cost: &CostMatrix) -> Result<AlignmentPath> {
    let r = accumulate(cost, SmoothMinConfig::hard())?;
    let (m, n) = cost.shape();
    let (mut i, mut j) = (m - 1, n - 1);
    let mut steps = vec![(m, n)];
    let mut pred = [(0, 0); 3];
    let mut vals = [0.0; 3];
    loop {
        let k = predecessors(i, j, &mut pred);
        if k == 0 {
            break;
        }
        for (v, &p) in vals.iter_mut().zip(&pred[..k]) {
            *v = r.values[p];
        }
        (i, j) = pred[argmin(&vals[..k])];
        steps.push((i + 1, j + 1));
    }
    steps.reverse();
    Ok(AlignmentPath { steps })
}

/// Exhaustive minimum over every feasible path. Exponential; a test oracle only.
pub fn brute_force_dtw(cost: &CostMatrix) -> Result<(f64, AlignmentPath)> {
    let (m, n) = cost.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("empty cost matrix"));
    }
    if m + n > BRUTE_FORCE_MAX_SPAN {
        return Err(Error::ResourceLimit(format!(
            "brute-force enumeration limited to M + N <= {BRUTE_FORCE_MAX_SPAN}, got {}",
            m + n
        )));
    }
    struct Search<'a> {
        c: &'a Array2<f64>,
        m: usize,
        n: usize,
        stack: Vec<(usize, usize)>,
        best: Option<(f64, Vec<(usize, usize)>)>,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize, j: usize, acc: f64) {
            let acc = acc + self.c[[i, j]];
            self.stack.push((i + 1, j + 1));
            if i + 1 == self.m && j + 1 == self.n {
                if self.best.as_ref().is_none_or(|(b, _)| acc < *b) {
                    self.best = Some((acc, self.stack.clone()));
                }
            } else {
                if i + 1 < self.m && j + 1 < self.n {
                    self.go(i + 1, j + 1, acc);
                }
                if i + 1 < self.m {
                    self.go(i + 1, j, acc);
                }
                if j + 1 < self.n {
                    self.go(i, j + 1, acc);
                }
            }
            self.stack.pop();
        }
    }
    let mut s = Search {
        c: &cost.values,
        m,
        n,
        stack: Vec::with_capacity(m + n),
        best: None,
    };
    s.go(0, 0, 0.0);
    let (c, steps) = s.best.expect("at least one feasible path exists");
    Ok((c, AlignmentPath { steps }))
}

/// `R(M, N)` of the contrastive cost from `x` to `y`.
pub fn alignment_loss(
    x: &FeatureSequence,
    y: &FeatureSequence,
    gamma: f64,
    beta: f64,
    kind: OperatorKind,
) -> Result<f64> {
    let c = contrastive_cost(x, y, beta)?;
    Ok(accumulate(&c, SmoothMinConfig::new(gamma, kind)?)?.total())
}

/// `alignment_loss(x, y) + alignment_loss(y, x)`.
pub fn symmetric_alignment_loss(
    x: &FeatureSequence,
    y: &FeatureSequence,
    gamma: f64,
    beta: f64,
    kind: OperatorKind,
) -> Result<f64> {
    Ok(alignment_loss(x, y, gamma, beta, kind)? + alignment_loss(y, x, gamma, beta, kind)?)
}

/// Cost used to align learned embeddings at inference time: the elementwise mean
/// of the forward contrastive cost and the transposed backward one.
pub fn inference_cost(x: &FeatureSequence, y: &FeatureSequence, beta: f64) -> Result<CostMatrix> {
    let cxy = contrastive_cost(x, y, beta)?;
    let cyx = contrastive_cost(y, x, beta)?;
    let values = (&cxy.values + &cyx.values.t()) * 0.5;
    Ok(CostMatrix {
        values,
        beta: Some(beta),
        direction: cxy.direction,
    })
}

/// Hard alignment between two embedding sequences using [`inference_cost`].
pub fn align(x: &FeatureSequence, y: &FeatureSequence, beta: f64) -> Result<AlignmentPath> {
    hard_path(&inference_cost(x, y, beta)?)
}
