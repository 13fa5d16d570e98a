//! Flat run configuration shared by every command-line subcommand.
//!
//! Every key is optional and falls back to its default. Unknown keys are
//! rejected so that a misspelt hyperparameter can never be silently ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::loss::LossConfig;
use crate::smoothmin::OperatorKind;
use crate::train::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,

    pub n_processes: usize,
    pub sequences_per_process: usize,
    pub k_phases: usize,
    pub d_latent: usize,
    pub obs_dim: usize,
    pub shared_dims: usize,
    pub rotated_energy: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub canonical_len: usize,
    pub noise_sigma: f64,
    pub warp_knots: usize,
    pub max_speed: f64,

    pub lambda_g: f64,
    pub lambda_s: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub operator: OperatorKind,

    pub frames_per_sequence: usize,
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub embed_dim: usize,
    pub context: usize,
    pub holdout_per_process: usize,

    pub grad_trials: usize,
    pub grad_step: f64,
    pub grad_max_len: usize,
    pub grad_max_dim: usize,
    pub grad_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        let l = LossConfig::default();
        let t = TrainingConfig::default();
        Self {
            seed: 0,
            dataset_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            resume: None,
            n_processes: d.n_processes,
            sequences_per_process: d.sequences_per_process,
            k_phases: d.k_phases,
            d_latent: d.d_latent,
            obs_dim: d.obs_dim,
            shared_dims: d.shared_dims,
            rotated_energy: d.rotated_energy,
            min_len: d.min_len,
            max_len: d.max_len,
            canonical_len: d.canonical_len,
            noise_sigma: d.noise_sigma,
            warp_knots: d.warp_knots,
            max_speed: d.max_speed,
            lambda_g: l.lambda_g,
            lambda_s: l.lambda_s,
            gamma: l.gamma,
            beta: l.beta,
            alpha: l.alpha,
            operator: l.kind,
            frames_per_sequence: t.frames_per_sequence,
            batch_pairs: t.batch_pairs,
            learning_rate: t.learning_rate,
            steps: t.steps,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            hidden_width: t.hidden_width,
            hidden_layers: t.hidden_layers,
            embed_dim: t.embed_dim,
            context: t.context,
            holdout_per_process: t.holdout_per_process,
            grad_trials: 20,
            grad_step: 1e-5,
            grad_max_len: 8,
            grad_max_dim: 4,
            grad_threshold: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&io::read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            n_processes: self.n_processes,
            sequences_per_process: self.sequences_per_process,
            k_phases: self.k_phases,
            d_latent: self.d_latent,
            obs_dim: self.obs_dim,
            shared_dims: self.shared_dims,
            rotated_energy: self.rotated_energy,
            min_len: self.min_len,
            max_len: self.max_len,
            canonical_len: self.canonical_len,
            noise_sigma: self.noise_sigma,
            warp_knots: self.warp_knots,
            max_speed: self.max_speed,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_g: self.lambda_g,
            lambda_s: self.lambda_s,
            gamma: self.gamma,
            beta: self.beta,
            alpha: self.alpha,
            kind: self.operator,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            frames_per_sequence: self.frames_per_sequence,
            batch_pairs: self.batch_pairs,
            learning_rate: self.learning_rate,
            steps: self.steps,
            seed: self.seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            embed_dim: self.embed_dim,
            context: self.context,
            holdout_per_process: self.holdout_per_process,
        }
    }

    /// Check every section; the first problem found is reported.
    pub fn validate(&self) -> Result<()> {
        self.dataset().validate()?;
        self.loss().validate()?;
        self.training().validate()?;
        if self.grad_trials == 0 || self.grad_max_len == 0 || self.grad_max_dim == 0 {
            return Err(Error::Config(
                "grad_trials, grad_max_len and grad_max_dim must be >= 1".into(),
            ));
        }
        if !(self.grad_step > 0.0) || !(self.grad_threshold > 0.0) {
            return Err(Error::Config("grad_step and grad_threshold must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c = RunConfig::from_toml_str("", Path::new("c.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.loss(), LossConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn roundtrip() {
        let c = RunConfig {
            gamma: 0.05,
            operator: OperatorKind::MinGamma,
            resume: Some("ck.json".into()),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml_str(&c.to_toml(), Path::new("c")).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("seed = 3\ngama = 0.1\n", Path::new("c.toml")).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("gama"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_values_fail_validation() {
        let c = RunConfig {
            beta: 0.0,
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig {
            operator: OperatorKind::HardMin,
            ..RunConfig::default()
        };
        c.validate().unwrap();
    }
}
