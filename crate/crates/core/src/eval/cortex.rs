//! Frozen random filter bank standing in for recorded neurons.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::seed;
use crate::tensor::{Tape, Tensor};

pub const DEFAULT_SITES: usize = 200;
pub const DEFAULT_NOISE: f64 = 0.1;
const LEAK: f64 = 0.1;

/// `(kernel, stride, out_channels)` per layer.
const LAYERS: [(usize, usize, usize); 3] = [(5, 2, 8), (3, 2, 16), (3, 2, 32)];

/// One readout unit: layer, row, column, channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub channel: usize,
}

#[derive(Debug, Clone)]
pub struct SurrogateCortex {
    pub seed: u64,
    pub noise_sigma: f64,
    height: usize,
    width: usize,
    kernels: Vec<Tensor<f64>>,
    shapes: Vec<[usize; 3]>,
    sites: Vec<Site>,
}

impl SurrogateCortex {
    /// Filters and readout sites drawn from `seed`; sites are spread evenly
    /// over the three layers.
    pub fn new(height: usize, width: usize, sites: usize, noise_sigma: f64, seed: u64) -> Result<Self, EvalError> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(EvalError::Config(format!("noise sigma {noise_sigma} must be finite and >= 0")));
        }
        let mut rng = seed::rng(seed::derive(seed, &[seed::INIT]));
        let (mut h, mut w, mut c) = (height, width, 1);
        let mut kernels = Vec::new();
        let mut shapes = Vec::new();
        for &(k, s, out) in &LAYERS {
            if h < k || w < k {
                return Err(EvalError::Config(format!("stimuli {height}x{width} too small for the surrogate filter bank")));
            }
            let scale = (2.0 / (k * k * c) as f64).sqrt();
            kernels.push(Tensor::from_fn(&[k, k, c, out], |_| scale * rng.sample::<f64, _>(StandardNormal)));
            h = (h - k) / s + 1;
            w = (w - k) / s + 1;
            c = out;
            shapes.push([h, w, c]);
        }
        let mut chosen = Vec::with_capacity(sites);
        for (layer, &[lh, lw, lc]) in shapes.iter().enumerate() {
            let share = sites / LAYERS.len() + usize::from(layer < sites % LAYERS.len());
            let units = lh * lw * lc;
            if share > units {
                return Err(EvalError::Config(format!("layer {} has {units} units, cannot host {share} sites", layer + 1)));
            }
            let mut picks = sample(&mut rng, units, share).into_vec();
            picks.sort_unstable();
            chosen.extend(picks.into_iter().map(|u| Site {
                layer,
                row: u / (lw * lc),
                col: (u / lc) % lw,
                channel: u % lc,
            }));
        }
        Ok(Self {
            seed,
            noise_sigma,
            height,
            width,
            kernels,
            shapes,
            sites: chosen,
        })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn layer_shapes(&self) -> &[[usize; 3]] {
        &self.shapes
    }

    /// Activations of every layer for one stimulus (pixels in `[0, 1]`).
    fn layers(&self, pixels: &[f32]) -> Result<Vec<Vec<f64>>, EvalError> {
        let mut tape = Tape::<f64>::inference();
        let input = Tensor::new(vec![self.height, self.width, 1], pixels.iter().map(|&p| p as f64 - 0.5).collect())?;
        let mut x = tape.constant(input);
        let mut out = Vec::with_capacity(LAYERS.len());
        for (kernel, &(_, stride, ch)) in self.kernels.iter().zip(&LAYERS) {
            let k = tape.constant(kernel.clone());
            let b = tape.constant(Tensor::zeros(&[ch]));
            let z = tape.conv2d(x, k, b, stride, 0, 0)?;
            x = tape.leaky_relu(z, LEAK)?;
            out.push(tape.value(x).data().to_vec());
        }
        Ok(out)
    }

    fn check(&self, stimuli: &[f32]) -> Result<usize, EvalError> {
        let per = self.height * self.width;
        if stimuli.is_empty() || stimuli.len() % per != 0 {
            return Err(EvalError::Data(format!("stimulus buffer of {} values is not a whole number of {}x{} images", stimuli.len(), self.height, self.width)));
        }
        Ok(stimuli.len() / per)
    }

    /// Every unit of every layer, one row per stimulus.
    pub fn features(&self, stimuli: &[f32]) -> Result<DMatrix<f64>, EvalError> {
        let n = self.check(stimuli)?;
        let per = self.height * self.width;
        let dim: usize = self.shapes.iter().map(|s| s[0] * s[1] * s[2]).sum();
        let mut m = DMatrix::zeros(n, dim);
        for i in 0..n {
            let all: Vec<f64> = self.layers(&stimuli[i * per..(i + 1) * per])?.concat();
            m.row_mut(i).copy_from_slice(&all);
        }
        Ok(m)
    }

    /// Site responses plus seeded Gaussian noise; row `i`'s noise depends
    /// only on `(seed, i)`.
    pub fn responses(&self, stimuli: &[f32]) -> Result<DMatrix<f64>, EvalError> {
        let n = self.check(stimuli)?;
        let per = self.height * self.width;
        let mut m = DMatrix::zeros(n, self.sites.len());
        for i in 0..n {
            let layers = self.layers(&stimuli[i * per..(i + 1) * per])?;
            let mut noise = seed::rng(seed::derive(self.seed, &[seed::NOISE, i as u64]));
            for (k, s) in self.sites.iter().enumerate() {
                let [_, lw, lc] = self.shapes[s.layer];
                let v = layers[s.layer][(s.row * lw + s.col) * lc + s.channel];
                let eps: f64 = noise.sample(StandardNormal);
                m[(i, k)] = v + self.noise_sigma * eps;
            }
        }
        Ok(m)
    }
}
