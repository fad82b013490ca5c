//! Policy / value heads and the diagonal Gaussian action distribution.

use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::{Dense, LayerInfo};
use crate::tensor::{ParamId, ParamSet, Scalar, Tape, Tensor, TensorError, Var};

pub const ACTION_DIM: usize = 3;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct PolicyValueHeads {
    pub policy: Dense,
    pub log_std: ParamId,
    pub value: Dense,
}

impl PolicyValueHeads {
    pub fn new<S: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<S>, features: usize, rng: &mut R) -> Self {
        let policy = Dense::new(params, "policy.mean", features, ACTION_DIM, rng);
        let log_std = params.add("policy.log_std", Tensor::zeros(&[ACTION_DIM]));
        let value = Dense::new(params, "value", features, 1, rng);
        Self { policy, log_std, value }
    }

    pub fn forward<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamSet<S>, features: Var) -> Result<(Var, Var), TensorError> {
        let mean = self.policy.forward(tape, params, features)?;
        let value = self.value.forward(tape, params, features)?;
        Ok((mean, value))
    }

    /// Log-std clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn log_std<S: Scalar>(&self, params: &ParamSet<S>) -> [f64; ACTION_DIM] {
        let raw = params.get(self.log_std).data();
        std::array::from_fn(|i| raw[i].as_f64().clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    /// Whether the raw log-std component sits inside the clamp range
    /// (gradient passes) or outside it (gradient is zero).
    pub fn log_std_active<S: Scalar>(&self, params: &ParamSet<S>) -> [bool; ACTION_DIM] {
        let raw = params.get(self.log_std).data();
        std::array::from_fn(|i| (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw[i].as_f64()))
    }

    pub fn layer_rows(&self) -> Vec<LayerInfo> {
        vec![
            LayerInfo {
                name: "Policy Head".into(),
                kind: "Linear".into(),
                output_shape: vec![ACTION_DIM],
                detail: format!("{} -> {}", self.policy.d_in, ACTION_DIM),
                params: self.policy.param_count(),
            },
            LayerInfo {
                name: "Policy LogStd".into(),
                kind: "Parameter".into(),
                output_shape: vec![ACTION_DIM],
                detail: "state-independent".into(),
                params: ACTION_DIM,
            },
            LayerInfo {
                name: "Value Head".into(),
                kind: "Linear".into(),
                output_shape: vec![1],
                detail: format!("{} -> 1", self.value.d_in),
                params: self.value.param_count(),
            },
        ]
    }
}

/// Log-density of `action` under `N(mean, exp(log_std)^2)` (diagonal).
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&a, &m), &ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    /// Sampled (unclamped) action; the environment clamps.
    pub action: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub value: f64,
}

/// Samples from the policy distribution, or returns the mean when `rng`
/// is `None` (deterministic mode).
pub fn act<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64; ACTION_DIM], value: f64, rng: Option<&mut R>) -> ActOutput {
    let mut action = [0.0; ACTION_DIM];
    match rng {
        Some(rng) => {
            for i in 0..ACTION_DIM {
                let eps: f64 = rng.sample(StandardNormal);
                action[i] = mean[i] + log_std[i].exp() * eps;
            }
        }
        None => action.copy_from_slice(&mean[..ACTION_DIM]),
    }
    ActOutput {
        action,
        log_prob: gaussian_log_prob(&action, mean, log_std),
        value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_mode_returns_mean() {
        let out = act::<ChaCha8Rng>(&[0.1, -0.4, 0.9], &[0.0; 3], 0.3, None);
        assert_eq!(out.action, [0.1, -0.4, 0.9]);
    }

    #[test]
    fn log_prob_at_mode_with_unit_std() {
        let out = act::<ChaCha8Rng>(&[0.5, 0.5, 0.5], &[0.0; 3], 0.0, None);
        let expected = -1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((out.log_prob - expected).abs() < 1e-12);
    }

    #[test]
    fn value_head_with_zero_weights_returns_bias() {
        let mut params = ParamSet::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let heads = PolicyValueHeads::new(&mut params, 4, &mut rng);
        *params.get_mut(heads.value.weight) = Tensor::zeros(&[4, 1]);
        *params.get_mut(heads.value.bias) = Tensor::scalar(0.7);
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::from_fn(&[2, 4], |i| i as f64));
        let (_, v) = heads.forward(&mut tape, &params, x).unwrap();
        assert_eq!(tape.value(v).data(), &[0.7, 0.7]);
    }

    #[test]
    fn sampled_actions_have_requested_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let log_std = [0.5f64.ln(); 3];
        let n = 20_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let out = act(&[0.0; 3], &log_std, 0.0, Some(&mut rng));
            sq += out.action[0] * out.action[0];
        }
        let std = (sq / n as f64).sqrt();
        assert!((std - 0.5).abs() < 0.02, "{std}");
    }

    #[test]
    fn entropy_matches_closed_form() {
        let h = gaussian_entropy(&[0.0; 3]);
        assert!((h - 1.5 * (1.0 + (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }
}
