//! Differentiable sequence alignment.
//!
//! Smoothed dynamic time warping over a contrastive matching cost, a global
//! cycle-consistency loss built from the accumulated cost tables, exact
//! reverse-mode gradients, and a small training/evaluation pipeline on
//! synthetic sequence pairs with known ground-truth alignments.

pub mod config;
pub mod cost;
pub mod cycle;
pub mod dataset;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod grad;
pub mod io;
pub mod loss;
pub mod model;
pub mod optim;
pub mod sequence;
pub mod smoothmin;
pub mod synth;
pub mod train;

pub use cost::{contrastive_cost, negative_cosine_cost, CostMatrix, Direction};
pub use cycle::{compose, gcc_loss, match_probabilities, MatchProbabilityMatrix};
pub use dtw::{
    accumulate, alignment_loss, brute_force_dtw, hard_path, symmetric_alignment_loss,
    AccumulatedCostMatrix, AlignmentPath,
};
pub use error::{Error, Result};
pub use grad::{finite_difference_check, loss_gradients, random_gradient_check, GradCheckSummary, LossGradients};
pub use loss::{loss_terms, total_loss, LossConfig, LossTerms};
pub use sequence::{l2_normalize, FeatureSequence};
pub use smoothmin::{
    min_gamma, penalty_max_root, smooth_min, smooth_min_grad, smooth_min_penalty, OperatorKind,
    SmoothMinConfig,
};

pub use config::RunConfig;
pub use dataset::{build_dataset, load_dataset, save_dataset, Dataset, DatasetConfig, Split};
pub use eval::{alignment_error, evaluate_split, kendalls_tau, phase_accuracy, EvalReport, PairReport};
pub use model::{EmbeddingModel, ModelSpec};
pub use optim::Adam;
pub use train::{train, train_from, Checkpoint, TrainingConfig};
