use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Tolerance on column norms for a sequence to count as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A `D x M` matrix of per-timestep embeddings; column `i` is timestep `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Array2<f64>,
}

impl FeatureSequence {
    /// Wrap a `D x M` matrix. Rejects empty shapes and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (d, m) = data.dim();
        if d == 0 || m == 0 {
            return Err(Error::invalid(format!("sequence shape {d}x{m} is empty")));
        }
        if let Some(((r, c), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry {v} at feature {r}, timestep {c}"
            )));
        }
        Ok(Self { data })
    }

    /// Build from timestep-major rows (the on-disk CSV layout).
    pub fn from_timesteps(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some((t, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::invalid(format!(
                "timestep {t} has {} features, expected {d}",
                r.len()
            )));
        }
        let data = Array2::from_shape_fn((d, m), |(f, t)| rows[t][f]);
        Self::new(data)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn column(&self, t: usize) -> ArrayView1<'_, f64> {
        self.data.column(t)
    }

    /// Timestep-major copy, one `Vec` per timestep.
    pub fn timesteps(&self) -> Vec<Vec<f64>> {
        self.data
            .axis_iter(Axis(1))
            .map(|c| c.to_vec())
            .collect()
    }

    /// Keep only the given timesteps, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "timestep {bad} out of range for length {}",
                self.len()
            )));
        }
        Self::new(self.data.select(Axis(1), idx))
    }

    pub fn is_normalized(&self) -> bool {
        self.data
            .axis_iter(Axis(1))
            .all(|c| (c.dot(&c).sqrt() - 1.0).abs() <= UNIT_NORM_TOL)
    }
}

/// Scale every column to unit Euclidean norm.
pub fn l2_normalize(seq: &FeatureSequence) -> Result<FeatureSequence> {
    let mut data = seq.data.clone();
    for (t, mut col) in data.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "timestep {t} has zero norm and no direction"
            )));
        }
        col.mapv_inplace(|v| v / norm);
    }
    Ok(FeatureSequence { data })
}
