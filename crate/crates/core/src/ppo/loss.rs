//! Clipped-surrogate PPO objective with analytic gradients with respect to
//! the network outputs (policy mean, log-std, value).

use crate::nn::heads::{gaussian_entropy, gaussian_log_prob, ACTION_DIM};

/// Stored transition data for one minibatch sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub action: [f64; ACTION_DIM],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `policy + value_coef * value - entropy_coef * entropy`.
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left `[1 - clip, 1 + clip]`.
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    /// d total / d mean, row-major `[M, ACTION_DIM]`.
    pub grad_mean: Vec<f64>,
    /// d total / d value, `[M]`.
    pub grad_value: Vec<f64>,
    /// d total / d raw log-std (zero where the clamp is inactive).
    pub grad_log_std: [f64; ACTION_DIM],
}

/// Evaluates the objective for `samples` given fresh network outputs.
/// `log_std` is the clamped log-std; `active` flags components whose raw
/// value sits inside the clamp range.
pub fn ppo_loss(
    samples: &[LossSample],
    means: &[f64],
    values: &[f64],
    log_std: &[f64; ACTION_DIM],
    active: &[bool; ACTION_DIM],
    coef: LossCoefficients,
) -> LossOutput {
    let m = samples.len();
    assert!(m > 0 && means.len() == m * ACTION_DIM && values.len() == m);
    let inv_m = 1.0 / m as f64;
    let inv_var: [f64; ACTION_DIM] = std::array::from_fn(|d| (-2.0 * log_std[d]).exp());
    let (lo, hi) = (1.0 - coef.clip, 1.0 + coef.clip);

    let mut policy = 0.0;
    let mut value_loss = 0.0;
    let mut clipped = 0usize;
    let mut ratio_sum = 0.0;
    let mut grad_mean = vec![0.0; m * ACTION_DIM];
    let mut grad_value = vec![0.0; m];
    let mut grad_log_std = [0.0; ACTION_DIM];

    for (i, s) in samples.iter().enumerate() {
        let mean = &means[i * ACTION_DIM..(i + 1) * ACTION_DIM];
        let log_prob = gaussian_log_prob(&s.action, mean, log_std);
        let ratio = (log_prob - s.old_log_prob).exp();
        ratio_sum += ratio;
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        let unclipped = ratio * s.advantage;
        let clipped_term = ratio.clamp(lo, hi) * s.advantage;
        policy -= unclipped.min(clipped_term) * inv_m;
        // The min picks the unclipped branch (gradient flows) unless the
        // clipped branch is strictly smaller, which only happens outside the
        // trust region where the clipped branch is constant.
        let d_log_prob = if unclipped <= clipped_term { -unclipped * inv_m } else { 0.0 };
        for d in 0..ACTION_DIM {
            let diff = s.action[d] - mean[d];
            grad_mean[i * ACTION_DIM + d] = d_log_prob * diff * inv_var[d];
            grad_log_std[d] += d_log_prob * (diff * diff * inv_var[d] - 1.0);
        }
        let err = values[i] - s.target_return;
        value_loss += err * err * inv_m;
        grad_value[i] = coef.value * 2.0 * err * inv_m;
    }

    let entropy = gaussian_entropy(log_std);
    for d in 0..ACTION_DIM {
        grad_log_std[d] -= coef.entropy;
        if !active[d] {
            grad_log_std[d] = 0.0;
        }
    }

    LossOutput {
        total: policy + coef.value * value_loss - coef.entropy * entropy,
        policy,
        value: value_loss,
        entropy,
        clip_fraction: clipped as f64 * inv_m,
        mean_ratio: ratio_sum * inv_m,
        grad_mean,
        grad_value,
        grad_log_std,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COEF: LossCoefficients = LossCoefficients {
        clip: 0.2,
        value: 0.5,
        entropy: 0.01,
    };

    fn samples() -> Vec<LossSample> {
        vec![
            LossSample {
                action: [0.3, -0.2, 0.5],
                old_log_prob: -2.9,
                advantage: 1.3,
                target_return: 0.4,
            },
            LossSample {
                action: [-0.6, 0.1, 0.0],
                old_log_prob: -2.2,
                advantage: -0.7,
                target_return: -1.1,
            },
            LossSample {
                action: [0.05, 0.9, -0.4],
                old_log_prob: -3.4,
                advantage: 0.2,
                target_return: 2.0,
            },
        ]
    }

    #[test]
    fn gradients_match_central_differences() {
        let s = samples();
        let means = vec![0.1, -0.1, 0.4, -0.3, 0.2, 0.1, 0.0, 0.7, -0.2];
        let values = vec![0.2, -0.5, 1.5];
        let log_std = [-0.2, 0.1, -0.4];
        let active = [true; 3];
        let out = ppo_loss(&s, &means, &values, &log_std, &active, COEF);
        let h = 1e-6;
        for k in 0..means.len() {
            let (mut up, mut dn) = (means.clone(), means.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (ppo_loss(&s, &up, &values, &log_std, &active, COEF).total - ppo_loss(&s, &dn, &values, &log_std, &active, COEF).total) / (2.0 * h);
            assert!((fd - out.grad_mean[k]).abs() < 1e-6, "mean {k}: {fd} vs {}", out.grad_mean[k]);
        }
        for k in 0..values.len() {
            let (mut up, mut dn) = (values.clone(), values.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (ppo_loss(&s, &means, &up, &log_std, &active, COEF).total - ppo_loss(&s, &means, &dn, &log_std, &active, COEF).total) / (2.0 * h);
            assert!((fd - out.grad_value[k]).abs() < 1e-6);
        }
        for d in 0..3 {
            let (mut up, mut dn) = (log_std, log_std);
            up[d] += h;
            dn[d] -= h;
            let fd = (ppo_loss(&s, &means, &values, &up, &active, COEF).total - ppo_loss(&s, &means, &values, &dn, &active, COEF).total) / (2.0 * h);
            assert!((fd - out.grad_log_std[d]).abs() < 1e-6, "log_std {d}: {fd} vs {}", out.grad_log_std[d]);
        }
    }

    #[test]
    fn unit_ratio_gives_negative_mean_advantage() {
        let s = samples();
        let means = vec![0.0; 9];
        let log_std = [0.0; 3];
        let s: Vec<LossSample> = s
            .into_iter()
            .map(|x| LossSample {
                old_log_prob: gaussian_log_prob(&x.action, &[0.0; 3], &log_std),
                ..x
            })
            .collect();
        let out = ppo_loss(&s, &means, &[0.0; 3], &log_std, &[true; 3], COEF);
        assert!((out.mean_ratio - 1.0).abs() < 1e-15);
        assert!((out.policy + (1.3 - 0.7 + 0.2) / 3.0).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 0.0);
    }

    #[test]
    fn clipped_samples_pass_no_policy_gradient() {
        let s = [LossSample {
            action: [1.0, 0.0, 0.0],
            old_log_prob: -10.0,
            advantage: 1.0,
            target_return: 0.0,
        }];
        let out = ppo_loss(&s, &[1.0, 0.0, 0.0], &[0.0], &[0.0; 3], &[true; 3], COEF);
        assert_eq!(out.clip_fraction, 1.0);
        assert!(out.grad_mean.iter().all(|&g| g == 0.0));
        assert!((out.policy + 1.2).abs() < 1e-12);
    }
}
