//! Training loop: same-process pair sampling, random frame subsets, batched
//! gradients of the combined loss, and adaptive-moment updates.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::grad::loss_gradients;
use crate::io;
use crate::loss::LossConfig;
use crate::model::{EmbeddingModel, ModelSpec};
use crate::optim::Adam;
use crate::sequence::FeatureSequence;
use crate::synth::derive_rng;

/// Keeps training streams apart from dataset-generation streams under the same seed.
const TRAIN_SALT: u64 = 0x5eed_7a11_0000_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub frames_per_sequence: usize,
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub embed_dim: usize,
    pub context: usize,
    /// Sequences per process reserved for evaluation.
    pub holdout_per_process: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            frames_per_sequence: 20,
            batch_pairs: 4,
            learning_rate: 1e-4,
            steps: 2000,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden_width: 64,
            hidden_layers: 2,
            embed_dim: 32,
            context: 1,
            holdout_per_process: 4,
        }
    }
}

impl TrainingConfig {
    pub fn model_spec(&self, input_dim: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            context: self.context,
            hidden: vec![self.hidden_width; self.hidden_layers],
            output_dim: self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_sequence < 1 || self.batch_pairs < 1 {
            return Err(Error::Config(
                "frames_per_sequence and batch_pairs must be >= 1".into(),
            ));
        }
        if self.embed_dim < 1 || self.hidden_width < 1 {
            return Err(Error::Config("embed_dim and hidden_width must be >= 1".into()));
        }
        Adam::new(0, self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps)?;
        Ok(())
    }
}

/// `t` distinct frame indices (0-based) drawn uniformly from `0..length`, ascending.
pub fn sample_frames<R: Rng>(length: usize, t: usize, rng: &mut R) -> Result<Vec<usize>> {
    if t > length {
        return Err(Error::invalid(format!(
            "cannot draw {t} frames from a sequence of length {length}"
        )));
    }
    let mut idx = sample(rng, length, t).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// One training pair with its sampled frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub frames_a: Vec<usize>,
    pub frames_b: Vec<usize>,
}

/// The pairs used at `step`; a pure function of `(seed, step)`.
pub fn sample_batch(ds: &Dataset, split: &Split, cfg: &TrainingConfig, step: u64) -> Result<Vec<PairSample>> {
    let mut rng = derive_rng(cfg.seed ^ TRAIN_SALT, 1 + step);
    let groups: Vec<&Vec<usize>> = split.train.iter().filter(|g| !g.is_empty()).collect();
    let mut out = Vec::with_capacity(cfg.batch_pairs);
    for _ in 0..cfg.batch_pairs {
        let g = groups[rng.random_range(0..groups.len())];
        let picks = sample(&mut rng, g.len(), 2).into_vec();
        let (a, b) = (g[picks[0]], g[picks[1]]);
        let t = cfg.frames_per_sequence;
        let frames_a = sample_frames(ds.sequences[a].data.len(), t, &mut rng)?;
        let frames_b = sample_frames(ds.sequences[b].data.len(), t, &mut rng)?;
        out.push(PairSample {
            a,
            b,
            frames_a,
            frames_b,
        });
    }
    Ok(out)
}

/// Mean loss over the batch and the mean parameter gradient.
///
/// Pairs are evaluated concurrently; their results are reduced in batch order.
pub fn batch_loss_and_grad(
    model: &EmbeddingModel,
    ds: &Dataset,
    batch: &[PairSample],
    loss: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let per_pair: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|p| {
            let sa = model.stack_context(&ds.sequences[p.a].data, &p.frames_a)?;
            let sb = model.stack_context(&ds.sequences[p.b].data, &p.frames_b)?;
            let (oa, ca) = model.forward(&sa);
            let (ob, cb) = model.forward(&sb);
            let g = loss_gradients(&FeatureSequence::new(oa)?, &FeatureSequence::new(ob)?, loss)?;
            let mut grad = model.backward(&ca, &g.d_x);
            for (acc, v) in grad.iter_mut().zip(model.backward(&cb, &g.d_y)) {
                *acc += v;
            }
            Ok((g.loss_value, grad))
        })
        .collect();
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; model.params.len()];
    for r in per_pair {
        let (l, g) = r?;
        total += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: EmbeddingModel,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    /// Number of optimizer steps already taken.
    pub step: u64,
    pub optimizer: Adam,
    pub loss_trace: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "smoothalign-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        io::write_string(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            });
        }
        EmbeddingModel::from_params(ck.model.spec.clone(), ck.model.params.clone())?;
        Ok(ck)
    }
}

/// Fresh model and optimizer for `ds` under `cfg`, before any step.
pub fn initial_checkpoint(ds: &Dataset, loss: &LossConfig, cfg: &TrainingConfig) -> Result<Checkpoint> {
    let input_dim = ds
        .sequences
        .first()
        .map(|s| s.data.dim())
        .ok_or_else(|| Error::Config("empty dataset".into()))?;
    let mut rng = derive_rng(cfg.seed ^ TRAIN_SALT, 0);
    let model = EmbeddingModel::init(cfg.model_spec(input_dim), &mut rng)?;
    let optimizer = Adam::new(
        model.params.len(),
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    )?;
    Ok(Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model,
        loss: *loss,
        training: cfg.clone(),
        step: 0,
        optimizer,
        loss_trace: Vec::new(),
    })
}

/// Reject configurations that cannot train before spending any compute.
pub fn check_trainable(ds: &Dataset, split: &Split, loss: &LossConfig, cfg: &TrainingConfig) -> Result<()> {
    loss.validate()?;
    cfg.validate()?;
    if loss.gamma == 0.0 || loss.kind == crate::smoothmin::OperatorKind::HardMin {
        return Err(Error::Config("training needs gamma > 0 and a relaxed operator".into()));
    }
    if split.train.iter().all(|g| g.is_empty()) {
        return Err(Error::Config("no training sequences".into()));
    }
    for (p, g) in split.train.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::Config(format!(
                "process {p} has {} training sequences; pairing needs at least 2",
                g.len()
            )));
        }
        for &i in g {
            let len = ds.sequences[i].data.len();
            if len < cfg.frames_per_sequence {
                return Err(Error::Config(format!(
                    "sequence {} has {len} frames, fewer than frames_per_sequence = {}",
                    ds.sequences[i].name, cfg.frames_per_sequence
                )));
            }
        }
    }
    Ok(())
}

/// Continue training from `state` until `state.training.steps` steps have been taken.
///
/// `on_step` sees `(step, loss)` after every update.
pub fn train_from(
    ds: &Dataset,
    split: &Split,
    mut state: Checkpoint,
    mut on_step: impl FnMut(u64, f64),
) -> Result<Checkpoint> {
    let cfg = state.training.clone();
    let loss = state.loss;
    check_trainable(ds, split, &loss, &cfg)?;
    while state.step < cfg.steps {
        let batch = sample_batch(ds, split, &cfg, state.step)?;
        let (value, grad) = batch_loss_and_grad(&state.model, ds, &batch, &loss)?;
        state.optimizer.update(&mut state.model.params, &grad);
        if state.model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericFailure {
                stage: "optimizer update",
                detail: format!("non-finite parameter at step {}", state.step),
            });
        }
        state.loss_trace.push(value);
        on_step(state.step, value);
        state.step += 1;
    }
    Ok(state)
}

/// Train from scratch. Returns the final checkpoint, whose `loss_trace` has one entry per step.
pub fn train(ds: &Dataset, split: &Split, loss: &LossConfig, cfg: &TrainingConfig) -> Result<Checkpoint> {
    check_trainable(ds, split, loss, cfg)?;
    let init = initial_checkpoint(ds, loss, cfg)?;
    train_from(ds, split, init, |_, _| {})
}
