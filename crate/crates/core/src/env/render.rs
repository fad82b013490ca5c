//! Column raycaster producing the egocentric grayscale view.

use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use super::world::{wrap_angle, WorldState};

/// Camera height as a fraction of the (unit) wall height; the target
/// centre sits at the same height, on the horizon.
const EYE_HEIGHT: f64 = 0.5;
pub const TARGET_LEVEL: f32 = 1.0;
const WALL_SHADE: [f64; 2] = [0.55, 0.45];
const OBSTACLE_SHADE: [f64; 2] = [0.38, 0.3];
const FALLOFF: f64 = 0.15;

/// Grayscale image in `[0, 1]`, row-major, with the per-pixel depth the
/// renderer computed (used by depth-dependent perturbations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub depth: Vec<f32>,
}

impl Observation {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Pixels at the target's brightness.
    pub fn target_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&p| p >= TARGET_LEVEL).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    dist: f64,
    shade: f64,
}

fn cast(config: &WorldConfig, ox: f64, oy: f64, dx: f64, dy: f64) -> Hit {
    let tx = if dx > 0.0 {
        (config.arena_width - ox) / dx
    } else if dx < 0.0 {
        -ox / dx
    } else {
        f64::INFINITY
    };
    let ty = if dy > 0.0 {
        (config.arena_height - oy) / dy
    } else if dy < 0.0 {
        -oy / dy
    } else {
        f64::INFINITY
    };
    let mut best = if tx < ty {
        Hit { dist: tx, shade: WALL_SHADE[0] }
    } else {
        Hit { dist: ty, shade: WALL_SHADE[1] }
    };
    for b in &config.obstacles {
        let (x_near, x_far) = slab(ox, dx, b.x0, b.x1);
        let (y_near, y_far) = slab(oy, dy, b.y0, b.y1);
        let near = x_near.max(y_near);
        let far = x_far.min(y_far);
        if near <= far && near > 0.0 && near < best.dist {
            let face = if x_near > y_near { 0 } else { 1 };
            best = Hit {
                dist: near,
                shade: OBSTACLE_SHADE[face],
            };
        }
    }
    best
}

/// Entry/exit ray parameters for one slab.
fn slab(o: f64, d: f64, lo: f64, hi: f64) -> (f64, f64) {
    if d == 0.0 {
        if o >= lo && o <= hi {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (f64::INFINITY, f64::NEG_INFINITY)
        }
    } else {
        let a = (lo - o) / d;
        let b = (hi - o) / d;
        (a.min(b), a.max(b))
    }
}

/// Focal length in pixels for the configured horizontal field of view.
pub fn focal_length(config: &WorldConfig) -> f64 {
    (config.render_width as f64 / 2.0) / (config.fov / 2.0).tan()
}

/// Renders the view from `state`. Deterministic: the same state and config
/// always give the same bits.
pub fn render(state: &WorldState, config: &WorldConfig) -> Observation {
    let (h, w) = (config.render_height, config.render_width);
    let focal = focal_length(config);
    let horizon = h as f64 / 2.0;
    let max_depth = config.max_depth();
    let mut pixels = vec![0f32; h * w];
    let mut depth = vec![0f32; h * w];

    // Target projection (only when in front of the camera plane).
    let bearing = state.target_bearing();
    let tdist = state.target_distance();
    let target = (bearing.abs() < std::f64::consts::FRAC_PI_2).then(|| {
        let z = (tdist * bearing.cos()).max(1e-6);
        let cx = w as f64 / 2.0 - focal * bearing.tan();
        let radius = (focal * config.target_radius / z).min(4.0 * w as f64);
        (cx, radius)
    });

    for col in 0..w {
        let offset = (w as f64 / 2.0 - (col as f64 + 0.5)) / focal;
        let angle = wrap_angle(state.heading + offset.atan());
        let (dy, dx) = angle.sin_cos();
        let hit = cast(config, state.x, state.y, dx, dy);
        let perp = (hit.dist * offset.atan().cos()).max(1e-6);
        let span = focal / perp;
        let top = horizon - span * (1.0 - EYE_HEIGHT);
        let bottom = horizon + span * EYE_HEIGHT;
        let wall = (hit.shade / (1.0 + FALLOFF * hit.dist)) as f32;
        for row in 0..h {
            let yc = row as f64 + 0.5;
            let i = row * w + col;
            let (value, d) = if yc < top {
                let v = 0.06 + 0.06 * (yc / horizon);
                let d = (1.0 - EYE_HEIGHT) * focal / (horizon - yc).max(1e-6);
                (v as f32, d)
            } else if yc >= bottom {
                let v = 0.12 + 0.16 * ((yc - horizon) / (h as f64 - horizon));
                let d = EYE_HEIGHT * focal / (yc - horizon).max(1e-6);
                (v as f32, d)
            } else {
                (wall, hit.dist)
            };
            pixels[i] = value;
            depth[i] = d.min(max_depth) as f32;
        }
        if let Some((cx, radius)) = target {
            let dxp = col as f64 + 0.5 - cx;
            if dxp.abs() <= radius && tdist < hit.dist {
                let span = (radius * radius - dxp * dxp).sqrt();
                let r0 = (horizon - span).floor().max(0.0) as usize;
                let r1 = ((horizon + span).ceil() as usize).min(h);
                for row in r0..r1 {
                    let dyp = row as f64 + 0.5 - horizon;
                    if dxp * dxp + dyp * dyp <= radius * radius {
                        pixels[row * w + col] = TARGET_LEVEL;
                        depth[row * w + col] = tdist.min(max_depth) as f32;
                    }
                }
            }
        }
    }
    Observation {
        height: h,
        width: w,
        pixels,
        depth,
    }
}
