use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Training profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// SimpleCNN backbone without the gate.
    Track1Phase1,
    /// Phase-1 backbone with a freshly grafted GLU.
    Track1Phase2,
    /// Deep residual network with the softmax gate.
    Track2,
}

impl Profile {
    pub const NAMES: [&'static str; 3] = ["track1_phase1", "track1_phase2", "track2"];
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Track1Phase1 => "track1_phase1",
            Profile::Track1Phase2 => "track1_phase2",
            Profile::Track2 => "track2",
        })
    }
}

impl FromStr for Profile {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "track1_phase1" => Ok(Profile::Track1Phase1),
            "track1_phase2" => Ok(Profile::Track1Phase2),
            "track2" => Ok(Profile::Track2),
            other => Err(TrainError::Config(format!("unknown profile {other:?}; known profiles: {}", Profile::NAMES.join(", ")))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr0 * (1 - step / total)`, zero past the end.
    Linear,
    Constant,
}

/// PPO hyperparameters. Key names follow the hyperparameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Admissible learning-rate range, when the profile gives one.
    pub learning_rate_range: Option<[f64; 2]>,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub num_epochs: usize,
    pub entropy_coefficient: f64,
    pub clip_parameter: f64,
    pub gae_lambda: f64,
    pub discount_factor: f64,
    pub time_horizon: usize,
    pub num_parallel_envs: usize,
    pub total_training_steps: u64,
    pub checkpoint_interval: u64,
    pub summary_frequency: u64,
    pub value_loss_coefficient: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Running-statistics observation normalization in front of the encoder.
    pub use_norm: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::track1()
    }
}

impl TrainingConfig {
    pub fn track1() -> Self {
        Self {
            learning_rate: 9e-5,
            learning_rate_range: None,
            lr_schedule: LrSchedule::Linear,
            batch_size: 128,
            buffer_size: 4096,
            num_epochs: 3,
            entropy_coefficient: 0.005,
            clip_parameter: 0.2,
            gae_lambda: 0.95,
            discount_factor: 0.99,
            time_horizon: 64,
            num_parallel_envs: 8,
            total_training_steps: 1_750_000,
            checkpoint_interval: 20_000,
            summary_frequency: 1_000,
            value_loss_coefficient: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            use_norm: true,
        }
    }

    pub fn track2() -> Self {
        Self {
            learning_rate: 9e-6,
            learning_rate_range: Some([5e-6, 9e-6]),
            buffer_size: 1024,
            total_training_steps: 1_140_000,
            ..Self::track1()
        }
    }

    /// Defaults for a profile at paper scale.
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Track1Phase1 => Self {
                total_training_steps: 1_400_000,
                ..Self::track1()
            },
            Profile::Track1Phase2 => Self {
                total_training_steps: 350_000,
                ..Self::track1()
            },
            Profile::Track2 => Self::track2(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if let Some([lo, hi]) = self.learning_rate_range {
            if !(lo <= self.learning_rate && self.learning_rate <= hi) {
                return bad(format!("learning_rate {} outside learning_rate_range [{lo}, {hi}]", self.learning_rate));
            }
        }
        if self.batch_size == 0 || self.buffer_size == 0 || self.num_epochs == 0 {
            return bad("batch_size, buffer_size and num_epochs must be positive".into());
        }
        if self.buffer_size % self.batch_size != 0 {
            return bad(format!("buffer_size {} not divisible by batch_size {}", self.buffer_size, self.batch_size));
        }
        if self.num_parallel_envs == 0 || self.buffer_size % self.num_parallel_envs != 0 {
            return bad(format!("buffer_size {} not divisible by num_parallel_envs {}", self.buffer_size, self.num_parallel_envs));
        }
        if !(self.discount_factor > 0.0 && self.discount_factor <= 1.0) {
            return bad(format!("discount_factor {} outside (0, 1]", self.discount_factor));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda {} outside [0, 1]", self.gae_lambda));
        }
        if !(self.clip_parameter > 0.0) {
            return bad(format!("clip_parameter {} must be positive", self.clip_parameter));
        }
        if self.time_horizon == 0 || self.total_training_steps == 0 || self.checkpoint_interval == 0 || self.summary_frequency == 0 {
            return bad("time_horizon, total_training_steps, checkpoint_interval and summary_frequency must be positive".into());
        }
        if !(self.max_grad_norm > 0.0) || self.value_loss_coefficient < 0.0 || self.entropy_coefficient < 0.0 {
            return bad("max_grad_norm must be positive; loss coefficients non-negative".into());
        }
        Ok(())
    }

    /// Environment steps per rollout for each parallel environment.
    pub fn steps_per_env(&self) -> usize {
        self.buffer_size / self.num_parallel_envs
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(self.learning_rate, self.lr_schedule, step, self.total_training_steps)
    }
}

/// Learning rate after `step` of `total` steps.
pub fn lr_at(lr0: f64, schedule: LrSchedule, step: u64, total: u64) -> f64 {
    match schedule {
        LrSchedule::Constant => lr0,
        LrSchedule::Linear if step >= total => 0.0,
        LrSchedule::Linear => lr0 * (1.0 - step as f64 / total as f64),
    }
}
