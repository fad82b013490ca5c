use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use super::render::{render, Observation};
use super::EnvError;
use crate::seed;

const SPAWN_ATTEMPTS: usize = 200_000;
const COLLISION_BISECTIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub forward: f64,
    pub strafe: f64,
    pub rotate: f64,
}

impl Action {
    pub fn new(forward: f64, strafe: f64, rotate: f64) -> Self {
        Self { forward, strafe, rotate }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Components clamped to `[-1, 1]`; NaN becomes 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self::new(c(self.forward), c(self.strafe), c(self.rotate))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub target_x: f64,
    pub target_y: f64,
    pub step: u32,
}

impl WorldState {
    pub fn target_distance(&self) -> f64 {
        (self.target_x - self.x).hypot(self.target_y - self.y)
    }

    /// Bearing of the target relative to the heading, in `(-pi, pi]`.
    pub fn target_bearing(&self) -> f64 {
        wrap_angle((self.target_y - self.y).atan2(self.target_x - self.x) - self.heading)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Clearance from `(x, y)` to the nearest wall or obstacle.
pub fn clearance(config: &WorldConfig, x: f64, y: f64) -> f64 {
    let walls = x.min(config.arena_width - x).min(y).min(config.arena_height - y);
    config.obstacles.iter().fold(walls, |d, b| d.min(b.distance(x, y)))
}

fn is_free(config: &WorldConfig, x: f64, y: f64, radius: f64) -> bool {
    clearance(config, x, y) >= radius
}

/// One foraging arena with its own RNG stream.
#[derive(Debug, Clone)]
pub struct ForageEnv {
    config: WorldConfig,
    state: WorldState,
    done: bool,
    rng: ChaCha8Rng,
}

impl ForageEnv {
    pub fn new(config: WorldConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            state: WorldState {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                target_x: 0.0,
                target_y: 0.0,
                step: 0,
            },
            done: true,
            rng: seed::rng(0),
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts an episode; identical seeds give identical episodes.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        self.rng = seed::rng(seed);
        self.state = sample_state(&self.config, &mut self.rng)?;
        self.done = false;
        Ok(self.observe())
    }

    /// Places the agent and target explicitly.
    pub fn reset_to(&mut self, state: WorldState) -> Result<Observation, EnvError> {
        let c = &self.config;
        if !is_free(c, state.x, state.y, c.agent_radius) || !is_free(c, state.target_x, state.target_y, c.target_radius) {
            return Err(EnvError::Config("requested pose overlaps a wall or obstacle".into()));
        }
        self.state = WorldState { step: 0, ..state };
        self.done = false;
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation {
        render(&self.state, &self.config)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let success = self.advance(action)?;
        Ok(StepResult {
            observation: self.observe(),
            reward: self.config.reward_target * success as u8 as f64 - self.config.reward_time,
            done: self.done,
            success,
        })
    }

    /// Applies the dynamics without rendering; returns the success flag.
    pub fn advance(&mut self, action: Action) -> Result<bool, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let a = action.clamped();
        let c = &self.config;
        let s = &mut self.state;
        s.heading = wrap_angle(s.heading + a.rotate * c.turn_rate);
        let (sin, cos) = s.heading.sin_cos();
        let dx = cos * a.forward * c.move_speed + sin * a.strafe * c.strafe_speed;
        let dy = sin * a.forward * c.move_speed - cos * a.strafe * c.strafe_speed;
        s.x = slide(c, s.x, s.y, dx, true);
        s.y = slide(c, s.x, s.y, dy, false);
        s.step += 1;
        let success = s.target_distance() <= c.agent_radius + c.target_radius;
        self.done = success || s.step >= c.max_steps;
        Ok(success)
    }
}

/// Moves along one axis as far as the agent stays clear, by bisection on
/// the fraction of the move.
fn slide(c: &WorldConfig, x: f64, y: f64, delta: f64, along_x: bool) -> f64 {
    let at = |t: f64| if along_x { (x + t * delta, y) } else { (x, y + t * delta) };
    let free = |t: f64| {
        let (px, py) = at(t);
        is_free(c, px, py, c.agent_radius)
    };
    let origin = if along_x { x } else { y };
    if delta == 0.0 {
        return origin;
    }
    if free(1.0) {
        return origin + delta;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..COLLISION_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if free(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    origin + lo * delta
}

fn sample_point<R: Rng>(c: &WorldConfig, radius: f64, rng: &mut R) -> Option<(f64, f64)> {
    for _ in 0..SPAWN_ATTEMPTS {
        let x = rng.gen_range(radius..c.arena_width - radius);
        let y = rng.gen_range(radius..c.arena_height - radius);
        if clearance(c, x, y) > radius {
            return Some((x, y));
        }
    }
    None
}

/// Uniform agent pose and target position over free space, rejecting
/// layouts solvable within a single step.
pub fn sample_state<R: Rng>(c: &WorldConfig, rng: &mut R) -> Result<WorldState, EnvError> {
    let min_gap = c.agent_radius + c.target_radius + c.move_speed.max(c.strafe_speed);
    for _ in 0..64 {
        let (x, y) = sample_point(c, c.agent_radius, rng).ok_or_else(|| EnvError::Config("no free space for the agent".into()))?;
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (tx, ty) = sample_point(c, c.target_radius, rng).ok_or_else(|| EnvError::Config("no free space for the target".into()))?;
        if (tx - x).hypot(ty - y) > min_gap {
            return Ok(WorldState {
                x,
                y,
                heading,
                target_x: tx,
                target_y: ty,
                step: 0,
            });
        }
    }
    Err(EnvError::Config("free space too small to separate agent and target".into()))
}
