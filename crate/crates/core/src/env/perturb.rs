//! Evaluation-time visual perturbations.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::render::Observation;
use super::EnvError;
use crate::seed;

/// Gray level fog converges to.
pub const FOG_GRAY: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    None,
    /// Depth-dependent blend toward [`FOG_GRAY`].
    Fog { density: f64 },
    Brightness { offset: f64 },
    Contrast { gain: f64 },
    Noise { sigma: f64 },
    /// Zeroes a random rectangle covering `fraction` of the image.
    Mask { fraction: f64 },
}

impl Perturbation {
    pub const KINDS: [&'static str; 6] = ["none", "fog", "brightness", "contrast", "noise", "mask"];

    pub fn validate(&self) -> Result<(), EnvError> {
        let (ok, what) = match *self {
            Perturbation::None => (true, String::new()),
            Perturbation::Fog { density } => (density >= 0.0, format!("fog density {density} must be >= 0")),
            Perturbation::Brightness { offset } => ((-0.5..=0.5).contains(&offset), format!("brightness offset {offset} outside [-0.5, 0.5]")),
            Perturbation::Contrast { gain } => ((0.25..=4.0).contains(&gain), format!("contrast gain {gain} outside [0.25, 4]")),
            Perturbation::Noise { sigma } => (sigma >= 0.0 && sigma.is_finite(), format!("noise sigma {sigma} must be finite and >= 0")),
            Perturbation::Mask { fraction } => ((0.0..=0.5).contains(&fraction), format!("mask fraction {fraction} outside [0, 0.5]")),
        };
        if ok {
            Ok(())
        } else {
            Err(EnvError::Perturbation(what))
        }
    }

    /// Parses `kind` or `kind:value`, e.g. `fog:1.5` or `brightness:-0.3`.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let (kind, value) = match text.split_once(':') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (text.trim(), None),
        };
        let num = || -> Result<f64, EnvError> {
            let v = value.ok_or_else(|| EnvError::Perturbation(format!("{kind} needs a value, e.g. {kind}:0.5")))?;
            v.parse().map_err(|_| EnvError::Perturbation(format!("bad value {v:?} for {kind}")))
        };
        let p = match kind {
            "none" | "clean" => Perturbation::None,
            "fog" => Perturbation::Fog { density: num()? },
            "brightness" => Perturbation::Brightness { offset: num()? },
            "contrast" => Perturbation::Contrast { gain: num()? },
            "noise" => Perturbation::Noise { sigma: num()? },
            "mask" => Perturbation::Mask { fraction: num()? },
            other => {
                return Err(EnvError::Perturbation(format!(
                    "unknown perturbation kind {other:?}; known kinds: {}",
                    Self::KINDS.join(", ")
                )))
            }
        };
        p.validate()?;
        Ok(p)
    }

    pub fn is_photometric(&self) -> bool {
        matches!(self, Perturbation::Brightness { .. } | Perturbation::Contrast { .. })
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Perturbation::None => write!(f, "clean"),
            Perturbation::Fog { density } => write!(f, "fog:{density}"),
            Perturbation::Brightness { offset } => write!(f, "brightness:{offset}"),
            Perturbation::Contrast { gain } => write!(f, "contrast:{gain}"),
            Perturbation::Noise { sigma } => write!(f, "noise:{sigma}"),
            Perturbation::Mask { fraction } => write!(f, "mask:{fraction}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub perturbation: Perturbation,
    /// Seed for the stochastic kinds (noise, mask).
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(perturbation: Perturbation, seed: u64) -> Self {
        Self { perturbation, seed }
    }

    pub fn none() -> Self {
        Self::new(Perturbation::None, 0)
    }
}

fn clamp01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// Row/column bounds of a rectangle covering about `fraction` of the image.
fn mask_rect<R: Rng>(h: usize, w: usize, fraction: f64, rng: &mut R) -> (usize, usize, usize, usize) {
    let area = fraction * (h * w) as f64;
    let rh = ((h as f64 * fraction.sqrt()).round() as usize).clamp(1, h);
    let rw = ((area / rh as f64).round() as usize).clamp(1, w);
    let r0 = rng.gen_range(0..=h - rh);
    let c0 = rng.gen_range(0..=w - rw);
    (r0, r0 + rh, c0, c0 + rw)
}

/// Applies `spec` to `img`; stochastic kinds draw from `spec.seed` only, so
/// the result is a pure function of its arguments.
pub fn apply_perturbation(img: &Observation, spec: &PerturbationSpec, max_depth: f64) -> Observation {
    let mut out = img.clone();
    let px = &mut out.pixels;
    match spec.perturbation {
        Perturbation::None => {}
        Perturbation::Fog { density } => {
            for (p, &d) in px.iter_mut().zip(&img.depth) {
                let t = (-density * d as f64 / max_depth).exp() as f32;
                *p = clamp01(*p * t + FOG_GRAY * (1.0 - t));
            }
        }
        Perturbation::Brightness { offset } => px.iter_mut().for_each(|p| *p = clamp01(*p + offset as f32)),
        Perturbation::Contrast { gain } => {
            // (p - 0.5) * gain + 0.5, arranged so gain 1 is exact.
            let (g, bias) = (gain as f32, (0.5 * (1.0 - gain)) as f32);
            px.iter_mut().for_each(|p| *p = clamp01(*p * g + bias));
        }
        Perturbation::Noise { sigma } => {
            let mut rng = seed::rng(spec.seed);
            for p in px.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *p = clamp01(*p + (sigma * n) as f32);
            }
        }
        Perturbation::Mask { fraction } => {
            if fraction > 0.0 {
                let mut rng = seed::rng(spec.seed);
                let (r0, r1, c0, c1) = mask_rect(img.height, img.width, fraction, &mut rng);
                for r in r0..r1 {
                    px[r * img.width + c0..r * img.width + c1].fill(0.0);
                }
            }
        }
    }
    out
}

/// Per-episode perturbation state: the mask stays put for the whole
/// episode while noise is redrawn every frame.
#[derive(Debug, Clone)]
pub struct EpisodePerturber {
    spec: PerturbationSpec,
    episode_seed: u64,
    frame: u64,
    max_depth: f64,
}

impl EpisodePerturber {
    pub fn new(spec: PerturbationSpec, episode_seed: u64, max_depth: f64) -> Self {
        Self {
            spec,
            episode_seed,
            frame: 0,
            max_depth,
        }
    }

    pub fn apply(&mut self, img: &Observation) -> Observation {
        let base = seed::derive(self.spec.seed, &[self.episode_seed]);
        let frame_seed = match self.spec.perturbation {
            Perturbation::Noise { .. } => seed::split(base, self.frame),
            _ => base,
        };
        self.frame += 1;
        apply_perturbation(img, &PerturbationSpec::new(self.spec.perturbation, frame_seed), self.max_depth)
    }
}

/// Named held-out condition sets.
pub const BATTERIES: [&str; 3] = ["clean", "desk", "photometric"];

/// Conditions of a named battery (excluding the clean condition itself).
pub fn battery(name: &str) -> Result<Vec<Perturbation>, EnvError> {
    use Perturbation::*;
    let photometric = vec![
        Brightness { offset: -0.3 },
        Brightness { offset: -0.1 },
        Brightness { offset: 0.1 },
        Brightness { offset: 0.3 },
        Contrast { gain: 0.5 },
        Contrast { gain: 2.0 },
    ];
    match name {
        "clean" => Ok(Vec::new()),
        "photometric" => Ok(photometric),
        "desk" => {
            let mut all = vec![Fog { density: 0.5 }, Fog { density: 1.0 }, Fog { density: 2.0 }];
            all.extend(photometric);
            all.extend([Noise { sigma: 0.05 }, Noise { sigma: 0.1 }, Mask { fraction: 0.1 }, Mask { fraction: 0.25 }]);
            Ok(all)
        }
        other => Err(EnvError::UnknownBattery {
            name: other.to_string(),
            known: BATTERIES.join(", "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Observation {
        Observation {
            height: 4,
            width: 5,
            pixels: (0..20).map(|i| i as f32 / 19.0).collect(),
            depth: (0..20).map(|i| 1.0 + i as f32).collect(),
        }
    }

    #[test]
    fn parse_round_trips_display() {
        for p in battery("desk").unwrap() {
            assert_eq!(Perturbation::parse(&p.to_string()).unwrap(), p);
        }
        assert!(matches!(Perturbation::parse("blur:1"), Err(EnvError::Perturbation(_))));
        assert!(Perturbation::parse("contrast:9").is_err());
    }

    #[test]
    fn mask_covers_requested_fraction() {
        let img = Observation {
            height: 40,
            width: 80,
            pixels: vec![1.0; 3200],
            depth: vec![1.0; 3200],
        };
        let out = apply_perturbation(&img, &PerturbationSpec::new(Perturbation::Mask { fraction: 0.25 }, 3), 10.0);
        let zeroed = out.pixels.iter().filter(|&&p| p == 0.0).count() as f64 / 3200.0;
        assert!((zeroed - 0.25).abs() < 0.01, "{zeroed}");
    }

    #[test]
    fn stochastic_kinds_follow_the_seed() {
        let img = ramp();
        let a = apply_perturbation(&img, &PerturbationSpec::new(Perturbation::Noise { sigma: 0.1 }, 1), 10.0);
        let b = apply_perturbation(&img, &PerturbationSpec::new(Perturbation::Noise { sigma: 0.1 }, 1), 10.0);
        let c = apply_perturbation(&img, &PerturbationSpec::new(Perturbation::Noise { sigma: 0.1 }, 2), 10.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_battery_lists_known_names() {
        let err = battery("weather").unwrap_err().to_string();
        assert!(err.contains("desk") && err.contains("photometric"), "{err}");
    }
}
