//! Proximal policy optimization over parallel foraging arenas.

pub mod adam;
pub mod buffer;
pub mod config;
pub mod gae;
pub mod loss;
pub mod metrics;
pub mod schedule;
pub mod session;
pub mod trainer;

pub use adam::{clip_grad_norm, global_norm, Adam};
pub use buffer::RolloutBuffer;
pub use config::{lr_at, LrSchedule, Profile, TrainingConfig};
pub use gae::{compute_gae, normalize_advantages};
pub use loss::{ppo_loss, LossCoefficients, LossOutput, LossSample};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use schedule::{select_best, split_phases, train_two_phase, TwoPhaseOptions, TwoPhaseOutcome};
pub use session::{prepare, profile_spec, train, RunStart, TrainOptions};
pub use trainer::{checkpoint_path, CheckpointRecord, TrainOutcome, Trainer, TrainerOutputs, UpdateStats};

use thiserror::Error;

use crate::env::EnvError;
use crate::nn::{CheckpointError, ModelError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at update {update}, epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFinite { update: usize, epoch: usize, minibatch: usize, detail: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("environment {index}: {source}")]
    Environment { index: usize, source: EnvError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
