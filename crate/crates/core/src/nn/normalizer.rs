use serde::{Deserialize, Serialize};

pub const NORMALIZER_EPS: f64 = 1e-8;
pub const DEFAULT_MOMENTUM: f64 = 0.999;

/// Per-channel running mean / standard deviation, updated by exponential
/// moving average. Output is `(x - mean) / (std + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationNormalizer {
    mean: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
    momentum: f64,
    count: u64,
}

impl ObservationNormalizer {
    /// Starts at mean 0, variance 1.
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: NORMALIZER_EPS,
            momentum,
            count: 0,
        }
    }

    pub fn from_parts(mean: Vec<f64>, var: Vec<f64>, eps: f64, momentum: f64, count: u64) -> Self {
        Self { mean, var, eps, momentum, count }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Number of samples (per channel) folded into the statistics.
    pub fn sample_count(&self) -> u64 {
        self.count
    }

    /// Folds one batch (channel-last layout) into the running statistics.
    pub fn update(&mut self, batch: &[f32]) {
        let c = self.channels();
        let n = batch.len() / c;
        if n == 0 {
            return;
        }
        let m = self.momentum;
        for ch in 0..c {
            let mut sum = 0.0;
            for px in batch.iter().skip(ch).step_by(c) {
                sum += *px as f64;
            }
            let bmean = sum / n as f64;
            let mut sq = 0.0;
            for px in batch.iter().skip(ch).step_by(c) {
                let d = *px as f64 - bmean;
                sq += d * d;
            }
            let bvar = sq / n as f64;
            let delta = bmean - self.mean[ch];
            self.mean[ch] += (1.0 - m) * delta;
            self.var[ch] = (m * (self.var[ch] + (1.0 - m) * delta * delta) + (1.0 - m) * bvar).max(0.0);
        }
        self.count += n as u64;
    }

    /// `(scale, shift)` with `normalized = x * scale + shift`.
    pub fn coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let std = self.std();
        let scale: Vec<f64> = std.iter().map(|s| 1.0 / (s + self.eps)).collect();
        let shift = self.mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
        (scale, shift)
    }

    /// Normalizes a batch; with `training` set the statistics are updated
    /// first.
    pub fn normalize(&mut self, batch: &[f32], training: bool) -> Vec<f32> {
        if training {
            self.update(batch);
        }
        self.apply(batch)
    }

    /// Normalizes with frozen statistics.
    pub fn apply(&self, batch: &[f32]) -> Vec<f32> {
        let c = self.channels();
        let (scale, shift) = self.coefficients();
        batch
            .iter()
            .enumerate()
            .map(|(i, &x)| (x as f64 * scale[i % c] + shift[i % c]) as f32)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_at_running_mean_maps_to_zero() {
        let mut n = ObservationNormalizer::new(1, 0.9);
        n.update(&[0.3, 0.5, 0.7]);
        let mu = n.mean()[0] as f32;
        assert!(n.apply(&[mu; 4]).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn unit_statistics_are_near_identity() {
        let n = ObservationNormalizer::new(1, 0.999);
        let out = n.apply(&[3.0]);
        assert!((out[0] as f64 - 3.0 / (1.0 + 1e-8)).abs() < 1e-6);
    }

    #[test]
    fn constant_stream_mean_follows_closed_form_ema() {
        let mut n = ObservationNormalizer::new(1, 0.99);
        for _ in 0..1000 {
            n.update(&[0.5; 16]);
        }
        let closed_form = 0.5 * (1.0 - 0.99f64.powi(1000));
        assert!((n.mean()[0] - closed_form).abs() < 1e-12);
        assert!((n.mean()[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn constant_stream_output_goes_to_zero_and_std_stays_non_negative() {
        let mut n = ObservationNormalizer::new(1, 0.9);
        for _ in 0..500 {
            let out = n.normalize(&[0.25; 8], true);
            assert!(n.std()[0] >= 0.0);
            assert!(out.iter().all(|v| v.is_finite()));
        }
        assert!(n.apply(&[0.25])[0].abs() < 1e-3);
    }

    #[test]
    fn zero_variance_is_safe() {
        let n = ObservationNormalizer::from_parts(vec![0.5], vec![0.0], NORMALIZER_EPS, 0.999, 10);
        assert!(n.apply(&[0.6])[0].is_finite());
    }
}
