//! Scripted controllers: ground-truth, vision-only and random.

use rand::Rng;

use super::config::WorldConfig;
use super::render::{focal_length, Observation};
use super::world::{Action, WorldState};

/// Brightness above which a pixel is taken to be the target. Walls and
/// floor never exceed ~0.55 unperturbed, the target renders at 1.0.
pub const VISUAL_THRESHOLD: f32 = 0.78;
const DRIVE_CONE: f64 = 0.3;

fn steer(bearing: f64, turn_rate: f64) -> Action {
    let rotate = (bearing / turn_rate).clamp(-1.0, 1.0);
    let forward = if bearing.abs() < DRIVE_CONE { 1.0 } else { 0.0 };
    Action::new(forward, 0.0, rotate)
}

/// Turns toward the true target bearing, then drives.
#[derive(Debug, Clone)]
pub struct StateOracle {
    turn_rate: f64,
}

impl StateOracle {
    pub fn new(config: &WorldConfig) -> Self {
        Self { turn_rate: config.turn_rate }
    }

    pub fn act(&self, state: &WorldState) -> Action {
        steer(state.target_bearing(), self.turn_rate)
    }
}

/// Same behavior driven only by pixels: finds bright columns around the
/// horizon, steers to their centroid, and spins when nothing is visible.
#[derive(Debug, Clone)]
pub struct VisualOracle {
    turn_rate: f64,
    focal: f64,
}

impl VisualOracle {
    pub fn new(config: &WorldConfig) -> Self {
        Self {
            turn_rate: config.turn_rate,
            focal: focal_length(config),
        }
    }

    /// Bearing of the bright blob, if any.
    pub fn locate(&self, obs: &Observation) -> Option<f64> {
        let mid = obs.height / 2;
        let rows = mid.saturating_sub(1)..(mid + 1).min(obs.height);
        let (mut sum, mut n) = (0.0, 0usize);
        for col in 0..obs.width {
            if rows.clone().any(|r| obs.get(r, col) >= VISUAL_THRESHOLD) {
                sum += col as f64 + 0.5;
                n += 1;
            }
        }
        (n > 0).then(|| {
            let cx = sum / n as f64;
            ((obs.width as f64 / 2.0 - cx) / self.focal).atan()
        })
    }

    pub fn act(&self, obs: &Observation) -> Action {
        match self.locate(obs) {
            Some(bearing) => steer(bearing, self.turn_rate),
            None => Action::new(0.0, 0.0, 1.0),
        }
    }
}

/// Uniform random actions in `[-1, 1]^3`.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
}
