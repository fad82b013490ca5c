use serde::{Deserialize, Serialize};

use super::EnvError;

/// Axis-aligned box obstacle, `[x0, x1] x [y0, y1]` in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoxObstacle {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    /// Distance from a point to the box (0 inside).
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(0.0).max(x - self.x1);
        let dy = (self.y0 - y).max(0.0).max(y - self.y1);
        dx.hypot(dy)
    }
}

/// World geometry, dynamics, rewards and camera.
///
/// Angles are radians; lengths are world units. Heading 0 looks along +x
/// and positive rotation turns counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub arena_width: f64,
    pub arena_height: f64,
    pub agent_radius: f64,
    pub target_radius: f64,
    pub max_steps: u32,
    pub move_speed: f64,
    pub strafe_speed: f64,
    pub turn_rate: f64,
    pub reward_target: f64,
    pub reward_time: f64,
    pub render_height: usize,
    pub render_width: usize,
    pub fov: f64,
    pub obstacles: Vec<BoxObstacle>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            arena_width: 10.0,
            arena_height: 10.0,
            agent_radius: 0.25,
            target_radius: 0.5,
            max_steps: 500,
            move_speed: 0.2,
            strafe_speed: 0.1,
            turn_rate: 0.15,
            reward_target: 10.0,
            reward_time: 0.01,
            render_height: 86,
            render_width: 155,
            fov: 1.4,
            obstacles: Vec::new(),
        }
    }
}

pub const SMALL_RESOLUTION: (usize, usize) = (43, 78);

impl WorldConfig {
    /// Half-resolution camera for quick runs.
    pub fn small() -> Self {
        Self::default().with_resolution(SMALL_RESOLUTION.0, SMALL_RESOLUTION.1)
    }

    pub fn with_resolution(mut self, height: usize, width: usize) -> Self {
        self.render_height = height;
        self.render_width = width;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Config(msg));
        let positive = [
            ("arena_width", self.arena_width),
            ("arena_height", self.arena_height),
            ("agent_radius", self.agent_radius),
            ("target_radius", self.target_radius),
            ("move_speed", self.move_speed),
            ("turn_rate", self.turn_rate),
            ("reward_target", self.reward_target),
            ("fov", self.fov),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.strafe_speed.is_finite() && self.strafe_speed >= 0.0) {
            return bad(format!("strafe_speed must be non-negative, got {}", self.strafe_speed));
        }
        if !(self.reward_time.is_finite() && self.reward_time >= 0.0) {
            return bad(format!("reward_time must be non-negative, got {}", self.reward_time));
        }
        let limit = self.arena_width.min(self.arena_height) / 4.0;
        if self.agent_radius + self.target_radius >= limit {
            return bad(format!(
                "agent_radius + target_radius = {} must be below min(arena dims)/4 = {limit}",
                self.agent_radius + self.target_radius
            ));
        }
        if self.max_steps < 1 {
            return bad("max_steps must be at least 1".into());
        }
        if self.render_height < 2 || self.render_width < 2 {
            return bad(format!("render resolution {}x{} too small", self.render_height, self.render_width));
        }
        if self.fov >= std::f64::consts::PI {
            return bad(format!("fov {} must be below pi", self.fov));
        }
        for (i, b) in self.obstacles.iter().enumerate() {
            if ![b.x0, b.y0, b.x1, b.y1].iter().all(|v| v.is_finite()) || b.x0 >= b.x1 || b.y0 >= b.y1 {
                return bad(format!("obstacle {i} is degenerate"));
            }
        }
        Ok(())
    }

    /// Longest possible sight line; depth normalizer for fog.
    pub fn max_depth(&self) -> f64 {
        self.arena_width.hypot(self.arena_height)
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
