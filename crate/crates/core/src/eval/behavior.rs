//! Success-rate protocol: clean ASR, perturbed MSR and their mean.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::env::{random_action, Action, EpisodePerturber, ForageEnv, Perturbation, PerturbationSpec, StateOracle, VisualOracle, WorldConfig};
use crate::nn::Model;
use crate::seed;

/// Episodes per condition unless told otherwise.
pub const DEFAULT_EPISODES: usize = 100;
/// Episodes advanced in lockstep per policy forward pass.
pub const EVAL_BATCH: usize = 50;

/// Who picks the actions.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Deterministic (mean) actions on frozen-normalized pixels.
    Policy(&'a Model<f32>),
    /// Reads the true target bearing from the world state.
    StateOracle,
    /// Pixel-only scripted controller.
    VisualOracle,
    /// Uniform random actions.
    Random,
}

impl Controller<'_> {
    /// Pseudo-checkpoint names accepted in place of a checkpoint path.
    pub const SCRIPTED: [&'static str; 3] = ["oracle", "visual-oracle", "random"];

    pub fn scripted(name: &str) -> Option<Controller<'static>> {
        match name {
            "oracle" => Some(Controller::StateOracle),
            "visual-oracle" => Some(Controller::VisualOracle),
            "random" => Some(Controller::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessStats {
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
    /// Mean episode length in steps.
    pub mean_steps: f64,
}

/// Seed of evaluation episode `j`.
pub fn episode_seed(seed: u64, j: usize) -> u64 {
    seed::derive(seed, &[seed::EVAL, j as u64])
}

/// Success rate of `controller` over `episodes` seeded episodes with
/// `perturbation` applied to every observation. Episode `j` depends only on
/// `(seed, j)`, so the result does not depend on how episodes are batched.
pub fn evaluate_success(controller: Controller<'_>, world: &WorldConfig, perturbation: Perturbation, episodes: usize, seed: u64) -> Result<SuccessStats, EvalError> {
    evaluate_episodes(controller, world, perturbation, &(0..episodes).collect::<Vec<_>>(), seed)
}

/// Like [`evaluate_success`] over an explicit list of episode indices.
pub fn evaluate_episodes(controller: Controller<'_>, world: &WorldConfig, perturbation: Perturbation, indices: &[usize], seed: u64) -> Result<SuccessStats, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::Config("episode count must be positive".into()));
    }
    perturbation.validate()?;
    if let Controller::Policy(m) = controller {
        let spec = m.spec();
        if (spec.height, spec.width) != (world.render_height, world.render_width) {
            return Err(EvalError::Config(format!(
                "model expects {}x{} observations but the world renders {}x{}",
                spec.height, spec.width, world.render_height, world.render_width
            )));
        }
    }
    let noise_seed = seed::derive(seed, &[seed::NOISE]);
    let mut successes = 0;
    let mut steps = 0u64;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (s, t) = run_batch(controller, world, perturbation, chunk, seed, noise_seed)?;
        successes += s;
        steps += t;
    }
    Ok(SuccessStats {
        episodes: indices.len(),
        successes,
        rate: successes as f64 / indices.len() as f64,
        mean_steps: steps as f64 / indices.len() as f64,
    })
}

struct Episode {
    env: ForageEnv,
    perturber: EpisodePerturber,
    pixels: Vec<f32>,
    obs: crate::env::Observation,
    rng: ChaCha8Rng,
}

fn run_batch(controller: Controller<'_>, world: &WorldConfig, perturbation: Perturbation, indices: &[usize], seed: u64, noise_seed: u64) -> Result<(usize, u64), EvalError> {
    let max_depth = world.max_depth();
    let mut eps = Vec::with_capacity(indices.len());
    for &j in indices {
        let ep_seed = episode_seed(seed, j);
        let mut env = ForageEnv::new(world.clone())?;
        let clean = env.reset(ep_seed)?;
        let mut perturber = EpisodePerturber::new(PerturbationSpec::new(perturbation, noise_seed), j as u64, max_depth);
        let obs = perturber.apply(&clean);
        eps.push(Episode {
            env,
            perturber,
            pixels: obs.pixels.clone(),
            obs,
            rng: seed::rng(seed::split(ep_seed, seed::POLICY)),
        });
    }
    let state_oracle = StateOracle::new(world);
    let visual_oracle = VisualOracle::new(world);
    let mut successes = 0;
    let mut steps = 0u64;
    loop {
        let live: Vec<usize> = (0..eps.len()).filter(|&i| !eps[i].env.is_done()).collect();
        if live.is_empty() {
            break;
        }
        let actions: Vec<Action> = match controller {
            Controller::Policy(model) => {
                let mut raw = Vec::with_capacity(live.len() * model.input_len());
                for &i in &live {
                    raw.extend_from_slice(&eps[i].pixels);
                }
                let input = model.normalize(&raw);
                model.act_batch::<ChaCha8Rng>(&input, None)?.iter().map(|o| Action::from_slice(&o.action)).collect()
            }
            Controller::StateOracle => live.iter().map(|&i| state_oracle.act(eps[i].env.state())).collect(),
            Controller::VisualOracle => live.iter().map(|&i| visual_oracle.act(&eps[i].obs)).collect(),
            Controller::Random => live.iter().map(|&i| random_action(&mut eps[i].rng)).collect(),
        };
        for (&i, a) in live.iter().zip(actions) {
            let ep = &mut eps[i];
            let r = ep.env.step(a)?;
            steps += 1;
            if r.done {
                successes += r.success as usize;
            } else {
                ep.obs = ep.perturber.apply(&r.observation);
                ep.pixels.clone_from(&ep.obs.pixels);
            }
        }
    }
    Ok((successes, steps))
}

/// `(ASR + MSR) / 2`; both inputs must lie in `[0, 1]`.
pub fn final_score(asr: f64, msr: f64) -> Result<f64, EvalError> {
    for (name, v) in [("ASR", asr), ("MSR", msr)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::Range(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok((asr + msr) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub asr: f64,
    /// Mean success over the battery; absent for an empty battery.
    pub msr: Option<f64>,
    pub final_score: Option<f64>,
    /// Clean condition first, then the battery in order.
    pub conditions: Vec<ConditionResult>,
    pub episodes_per_condition: usize,
    pub seed: u64,
}

impl EvalResult {
    pub fn gap(&self) -> Option<f64> {
        self.msr.map(|m| self.asr - m)
    }

    /// ASR minus the mean success over conditions accepted by `keep`.
    pub fn subset_gap(&self, battery: &[Perturbation], keep: impl Fn(&Perturbation) -> bool) -> Option<f64> {
        let rates: Vec<f64> = battery.iter().zip(&self.conditions[1..]).filter(|(p, _)| keep(p)).map(|(_, c)| c.success_rate).collect();
        (!rates.is_empty()).then(|| self.asr - rates.iter().sum::<f64>() / rates.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,episodes,successes,success_rate\n");
        for c in &self.conditions {
            out.push_str(&format!("{},{},{},{:.6}\n", c.condition, c.episodes, c.successes, c.success_rate));
        }
        out
    }
}

/// Clean condition plus every battery condition, `episodes` each, all on
/// the same episode seeds.
pub fn evaluate_battery(controller: Controller<'_>, world: &WorldConfig, battery: &[Perturbation], episodes: usize, seed: u64) -> Result<EvalResult, EvalError> {
    if episodes == 0 {
        return Err(EvalError::Config("episode count must be positive".into()));
    }
    let mut conditions = Vec::with_capacity(battery.len() + 1);
    for p in std::iter::once(Perturbation::None).chain(battery.iter().copied()) {
        let s = evaluate_success(controller, world, p, episodes, seed)?;
        conditions.push(ConditionResult {
            condition: p.to_string(),
            episodes,
            successes: s.successes,
            success_rate: s.rate,
        });
    }
    let asr = conditions[0].success_rate;
    let msr = (!battery.is_empty()).then(|| conditions[1..].iter().map(|c| c.success_rate).sum::<f64>() / battery.len() as f64);
    let final_score = msr.map(|m| final_score(asr, m)).transpose()?;
    Ok(EvalResult {
        asr,
        msr,
        final_score,
        conditions,
        episodes_per_condition: episodes,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_is_the_mean() {
        assert_eq!(final_score(0.5, 0.5).unwrap(), 0.5);
        assert!((final_score(0.968, 0.94).unwrap() - 0.954).abs() < 1e-12);
        assert!(matches!(final_score(1.2, 0.5), Err(EvalError::Range(_))));
        assert!(final_score(0.5, -0.01).is_err());
    }

    #[test]
    fn oracle_clean_battery_is_perfect() {
        let world = WorldConfig::small();
        let r = evaluate_battery(Controller::StateOracle, &world, &[Perturbation::Brightness { offset: 0.1 }], 20, 3).unwrap();
        assert_eq!(r.conditions.len(), 2);
        assert_eq!(r.asr, 1.0);
        assert_eq!(r.msr, Some(1.0));
        assert_eq!(r.final_score, Some(1.0));
    }
}
