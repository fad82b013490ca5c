//! Behavioral scoring under perturbations and neural-alignment readouts.

pub mod behavior;
pub mod cortex;
pub mod dataset;
pub mod rdm;
pub mod report;
pub mod ridge;

pub use behavior::{evaluate_battery, evaluate_episodes, evaluate_success, final_score, ConditionResult, Controller, EvalResult, SuccessStats, DEFAULT_EPISODES};
pub use cortex::{Site, SurrogateCortex, DEFAULT_NOISE, DEFAULT_SITES};
pub use dataset::{generate_stimuli, AlignmentDataset, DEFAULT_STIMULI};
pub use rdm::{average_ranks, pearson, rdm_correlation, spearman, RdmComparison};
pub use report::{
    ablation_csv, align_features, align_model, checkpoint_sweep, extract_features, parse_site, run_ablation_protocol, AblationRow, AlignmentReport,
    BehaviorSpec, SweepReport, SweepRow,
};
pub use ridge::{default_grid, r2_score, ridge_fit, ridge_fit_predict, train_test_split, R2Summary, RidgeReadout, RidgeReport};

use thiserror::Error;

use crate::env::EnvError;
use crate::nn::{CheckpointError, ModelError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation setting: {0}")]
    Config(String),
    #[error("score input out of range: {0}")]
    Range(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("unknown feature site {given:?}; valid sites: {valid}")]
    Site { given: String, valid: String },
    #[error("no checkpoint for variant {0:?}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
