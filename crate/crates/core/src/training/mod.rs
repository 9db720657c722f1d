//! Training: reverse-mode gradients through the unrolled graph, projected
//! Adam, the augmentation pipeline, checkpoints and the epoch loop with
//! learning-rate decay and divergence backtracking.

mod adam;
mod checkpoint;
mod data;
mod grad;
mod trainer;

pub use adam::{adam_step, is_feasible, project_constraints, AdamConfig, OptimizerState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{add_noise, make_batch, make_sample, validation_samples, Sample, TrainConfig};
pub use grad::{backward, batch_gradient, loss, BatchGradient};
pub use trainer::{
    resume, train, Backtrack, EpochStats, NoopObserver, TrainError, TrainObserver, TrainReport,
};
