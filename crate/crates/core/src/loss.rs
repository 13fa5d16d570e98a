use serde::{Deserialize, Serialize};

use crate::cost::contrastive_cost;
use crate::cycle::gcc_from_accumulated;
use crate::dtw::accumulate;
use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;
use crate::smoothmin::{OperatorKind, SmoothMinConfig};

/// Weights and temperatures of the combined alignment + cycle-consistency objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the cycle-consistency term.
    pub lambda_g: f64,
    /// Weight of the two directional alignment losses.
    pub lambda_s: f64,
    /// Relaxed-min temperature in the recurrence.
    pub gamma: f64,
    /// Softmax temperature of the contrastive cost.
    pub beta: f64,
    /// Softmax temperature of the prefix-match probabilities.
    pub alpha: f64,
    pub kind: OperatorKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lambda_s: 0.1,
            gamma: 0.1,
            beta: 0.1,
            alpha: 1.0,
            kind: OperatorKind::SmoothMin,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda_g", self.lambda_g), ("lambda_s", self.lambda_s), ("gamma", self.gamma)];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn smooth_min(&self) -> SmoothMinConfig {
        SmoothMinConfig {
            gamma: self.gamma,
            kind: self.kind,
        }
    }
}

/// Per-term breakdown of [`total_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub align_xy: f64,
    pub align_yx: f64,
    pub gcc: f64,
    pub total: f64,
}

/// Evaluate every term of the objective on normalized embeddings.
pub fn loss_terms(x: &FeatureSequence, y: &FeatureSequence, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    let sm = cfg.smooth_min();
    let r_xy = accumulate(&contrastive_cost(x, y, cfg.beta)?, sm)?;
    let r_yx = accumulate(&contrastive_cost(y, x, cfg.beta)?, sm)?;
    let gcc = gcc_from_accumulated(&r_xy, &r_yx, cfg.alpha)?;
    let (align_xy, align_yx) = (r_xy.total(), r_yx.total());
    Ok(LossTerms {
        align_xy,
        align_yx,
        gcc,
        total: cfg.lambda_g * gcc + cfg.lambda_s * (align_xy + align_yx),
    })
}

/// `lambda_g * gcc + lambda_s * (align(x, y) + align(y, x))`.
pub fn total_loss(x: &FeatureSequence, y: &FeatureSequence, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_terms(x, y, cfg)?.total)
}
