//! The two agent architectures and their checkpoint format.
//!
//! * [`Architecture::SimpleCnn`]: normalizer, two strided convolutions, a
//!   256-unit projection and an optional sigmoid GLU.
//! * [`Architecture::DeepResnet`]: sixteen convolutions in four residual
//!   stages followed by a softmax-gated projection.
//!
//! Both feed a Gaussian policy head and a value head.

pub mod checkpoint;
pub mod encoders;
pub mod glu;
pub mod heads;
pub mod layers;
pub mod model;
pub mod normalizer;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointError, ModelCheckpoint, RngState};
pub use heads::{act, gaussian_entropy, gaussian_log_prob, ActOutput, ACTION_DIM};
pub use layers::LayerInfo;
pub use model::{Architecture, FeatureSite, ForwardOutput, Model, ModelSpec};
pub use normalizer::ObservationNormalizer;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input {height}x{width} too small for {stage}")]
    InputTooSmall { stage: String, height: usize, width: usize },
    #[error("input holds {actual} values; expected a multiple of {expected}")]
    InputShape { expected: usize, actual: usize },
    #[error("model already has a gate block")]
    AlreadyGated,
    #[error("parameter {0} missing")]
    MissingParam(String),
    #[error("expected {expected} parameter tensors, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("parameter {name}: expected shape {expected:?}, got {actual:?}")]
    ParamShape { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Renders a parameter table with a totals row.
pub fn format_layer_table(rows: &[LayerInfo]) -> String {
    let mut out = format!("{:<36} {:<20} {:<18} {:<22} {:>12}\n", "Layer", "Type", "Output Shape", "Kernel/Units", "Parameters");
    for r in rows {
        let shape = format!("({})", r.output_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "));
        out.push_str(&format!("{:<36} {:<20} {:<18} {:<22} {:>12}\n", r.name, r.kind, shape, r.detail, group_thousands(r.params)));
    }
    let total: usize = rows.iter().map(|r| r.params).sum();
    out.push_str(&format!("{:<36} {:<20} {:<18} {:<22} {:>12}\n", "Total", "", "", "", group_thousands(total)));
    out
}

pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
