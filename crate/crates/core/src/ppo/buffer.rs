use super::gae::compute_gae;
use crate::nn::ACTION_DIM;

/// Fixed-size on-policy storage. Slot `t * n_envs + e` holds the
/// transition environment `e` made at its `t`-th step of the rollout.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub steps: usize,
    pub obs_len: usize,
    /// Normalized observations as fed to the policy.
    pub observations: Vec<f32>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, steps: usize, obs_len: usize) -> Self {
        let n = n_envs * steps;
        Self {
            n_envs,
            steps,
            obs_len,
            observations: vec![0.0; n * obs_len],
            actions: vec![[0.0; ACTION_DIM]; n],
            log_probs: vec![0.0; n],
            values: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            advantages: vec![0.0; n],
            returns: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot(&self, t: usize, env: usize) -> usize {
        t * self.n_envs + env
    }

    pub fn observation(&self, slot: usize) -> &[f32] {
        &self.observations[slot * self.obs_len..(slot + 1) * self.obs_len]
    }

    /// Stores the policy side of step `t` for every environment at once.
    pub fn record_policy(&mut self, t: usize, observations: &[f32], actions: &[[f64; ACTION_DIM]], log_probs: &[f64], values: &[f64]) {
        let start = self.slot(t, 0);
        let n = self.n_envs;
        self.observations[start * self.obs_len..(start + n) * self.obs_len].copy_from_slice(observations);
        self.actions[start..start + n].copy_from_slice(actions);
        self.log_probs[start..start + n].copy_from_slice(log_probs);
        self.values[start..start + n].copy_from_slice(values);
    }

    pub fn record_outcome(&mut self, t: usize, rewards: &[f64], dones: &[bool]) {
        let start = self.slot(t, 0);
        self.rewards[start..start + self.n_envs].copy_from_slice(rewards);
        self.dones[start..start + self.n_envs].copy_from_slice(dones);
    }

    /// Fills advantages and returns. Each environment's stream is cut into
    /// segments of at most `horizon` steps; a segment that ends without
    /// termination bootstraps from the value of the following state
    /// (`bootstrap[e]` after the last stored step).
    pub fn compute_advantages(&mut self, bootstrap: &[f64], gamma: f64, lambda: f64, horizon: usize) {
        assert_eq!(bootstrap.len(), self.n_envs);
        let horizon = horizon.max(1);
        for e in 0..self.n_envs {
            let mut start = 0;
            while start < self.steps {
                let end = (start + horizon).min(self.steps);
                let slots: Vec<usize> = (start..end).map(|t| self.slot(t, e)).collect();
                let rewards: Vec<f64> = slots.iter().map(|&s| self.rewards[s]).collect();
                let values: Vec<f64> = slots.iter().map(|&s| self.values[s]).collect();
                let dones: Vec<bool> = slots.iter().map(|&s| self.dones[s]).collect();
                let tail = if end < self.steps { self.values[self.slot(end, e)] } else { bootstrap[e] };
                let (adv, ret) = compute_gae(&rewards, &values, &dones, tail, gamma, lambda);
                for (k, &s) in slots.iter().enumerate() {
                    self.advantages[s] = adv[k];
                    self.returns[s] = ret[k];
                }
                start = end;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_horizon_matches_whole_stream_gae() {
        let mut buf = RolloutBuffer::new(2, 5, 1);
        for t in 0..5 {
            buf.record_policy(t, &[0.0, 0.0], &[[0.0; 3]; 2], &[0.0; 2], &[0.1 * t as f64, -0.2 * t as f64]);
            buf.record_outcome(t, &[1.0, t as f64], &[t == 2, false]);
        }
        buf.compute_advantages(&[0.7, -0.3], 0.9, 0.8, 100);
        let env1: Vec<usize> = (0..5).map(|t| buf.slot(t, 1)).collect();
        let rewards: Vec<f64> = env1.iter().map(|&s| buf.rewards[s]).collect();
        let values: Vec<f64> = env1.iter().map(|&s| buf.values[s]).collect();
        let (adv, _) = compute_gae(&rewards, &values, &[false; 5], -0.3, 0.9, 0.8);
        for (k, &s) in env1.iter().enumerate() {
            assert_eq!(buf.advantages[s], adv[k]);
        }
    }

    #[test]
    fn horizon_cuts_bootstrap_from_next_value() {
        let mut buf = RolloutBuffer::new(1, 4, 1);
        for t in 0..4 {
            buf.record_policy(t, &[0.0], &[[0.0; 3]], &[0.0], &[t as f64]);
            buf.record_outcome(t, &[0.0], &[false]);
        }
        buf.compute_advantages(&[10.0], 1.0, 1.0, 2);
        // Step 1 ends a segment: A = 0 + V(s_2) - V(s_1) = 1.
        assert_eq!(buf.advantages[1], 1.0);
        assert_eq!(buf.advantages[3], 10.0 - 3.0);
    }
}
