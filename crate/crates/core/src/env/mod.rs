//! Egocentric foraging arena: dynamics, raycast camera, perturbations.

pub mod config;
pub mod dump;
pub mod oracle;
pub mod perturb;
pub mod render;
pub mod world;

pub use config::{BoxObstacle, WorldConfig, SMALL_RESOLUTION};
pub use oracle::{random_action, StateOracle, VisualOracle};
pub use perturb::{apply_perturbation, battery, EpisodePerturber, Perturbation, PerturbationSpec, BATTERIES};
pub use render::{render, Observation};
pub use world::{Action, ForageEnv, StepResult, WorldState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("step called on a finished episode; reset first")]
    EpisodeDone,
    #[error("invalid perturbation: {0}")]
    Perturbation(String),
    #[error("unknown battery {name:?}; known batteries: {known}")]
    UnknownBattery { name: String, known: String },
}
