//! Pairwise matching costs between two embedding sequences.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

/// Which sequence indexes the rows (source) and which the columns (target).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XToY,
    YToX,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::XToY => Direction::YToX,
            Direction::YToX => Direction::XToY,
        }
    }
}

/// `M x N` matrix of matching costs. `beta` is set for costs built by [`contrastive_cost`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    pub beta: Option<f64>,
    pub direction: Direction,
}

impl CostMatrix {
    /// Wrap an arbitrary finite cost table.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty cost matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost matrix has non-finite entries"));
        }
        Ok(Self {
            values,
            beta: None,
            direction: Direction::XToY,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("ragged cost rows"));
        }
        Self::new(Array2::from_shape_fn((rows.len(), n), |(i, j)| rows[i][j]))
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

fn check_pair(x: &FeatureSequence, y: &FeatureSequence) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "feature dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if !x.is_normalized() || !y.is_normalized() {
        return Err(Error::invalid("cost inputs must have unit-norm columns"));
    }
    Ok(())
}

/// Cosine similarities `x_i . y_j` as an `M x N` matrix.
pub(crate) fn similarities(x: &FeatureSequence, y: &FeatureSequence) -> Array2<f64> {
    x.data().t().dot(y.data())
}

/// Row-wise negative log-softmax of `sim / beta`. Each row of `exp(-c)` sums to one.
pub(crate) fn neg_log_softmax_rows(sim: &Array2<f64>, beta: f64) -> Array2<f64> {
    let mut out = sim.mapv(|s| s / beta);
    for mut row in out.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| lse - v);
    }
    out
}

/// Contrastive cost: `c(i, j) = -log softmax_j(x_i . y_j / beta)`.
///
/// Not symmetric: the softmax runs over the target sequence only.
pub fn contrastive_cost(x: &FeatureSequence, y: &FeatureSequence, beta: f64) -> Result<CostMatrix> {
    check_pair(x, y)?;
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let values = neg_log_softmax_rows(&similarities(x, y), beta);
    Ok(CostMatrix {
        values,
        beta: Some(beta),
        direction: Direction::XToY,
    })
}

/// Non-contrastive cost `-x_i . y_j`; minimized by collapsing all embeddings to one point.
pub fn negative_cosine_cost(x: &FeatureSequence, y: &FeatureSequence) -> Result<CostMatrix> {
    check_pair(x, y)?;
    Ok(CostMatrix {
        values: similarities(x, y).mapv(|s| -s),
        beta: None,
        direction: Direction::XToY,
    })
}
