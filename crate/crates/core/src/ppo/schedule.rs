//! Track 1 schedule: phase 1 without the gate, pick the best checkpoint by
//! a clean success probe, then phase 2 from it.

use std::path::PathBuf;

use super::config::{Profile, TrainingConfig};
use super::session::{train, TrainOptions};
use super::trainer::{CheckpointRecord, TrainOutcome, TrainerOutputs};
use super::TrainError;
use crate::env::{Perturbation, WorldConfig};
use crate::eval::{evaluate_success, Controller, EvalError, DEFAULT_EPISODES};
use crate::nn::{load_checkpoint, ModelCheckpoint};
use crate::seed;

/// Phase lengths in the 4:1 ratio of the full schedule.
pub fn split_phases(total: u64) -> (u64, u64) {
    let phase1 = total * 4 / 5;
    (phase1, total - phase1)
}

#[derive(Debug, Clone)]
pub struct TwoPhaseOptions {
    pub config: TrainingConfig,
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    pub world: WorldConfig,
    pub seed: u64,
    pub jobs: usize,
    /// Graft the GLU for phase 2 (off for the no-GLU ablation).
    pub use_glu: bool,
    pub probe_episodes: usize,
    /// Root for `phase1/` and `phase2/` outputs; in memory when absent.
    pub out_dir: Option<PathBuf>,
    pub verbose: bool,
}

impl TwoPhaseOptions {
    pub fn desk(world: WorldConfig, seed: u64) -> Self {
        let (phase1_steps, phase2_steps) = split_phases(200_000);
        Self {
            config: TrainingConfig::track1(),
            phase1_steps,
            phase2_steps,
            world,
            seed,
            jobs: 1,
            use_glu: true,
            probe_episodes: DEFAULT_EPISODES,
            out_dir: None,
            verbose: false,
        }
    }
}

#[derive(Debug)]
pub struct TwoPhaseOutcome {
    pub phase1: TrainOutcome,
    pub phase2: TrainOutcome,
    pub best_step: u64,
    /// Clean probe success rate per phase-1 checkpoint, by step.
    pub probe: Vec<(u64, f64)>,
}

fn snapshot(record: &CheckpointRecord) -> Result<ModelCheckpoint<f32>, TrainError> {
    match (&record.snapshot, &record.path) {
        (Some(c), _) => Ok(c.clone()),
        (None, Some(p)) => Ok(load_checkpoint(p)?),
        (None, None) => Err(TrainError::Config(format!("checkpoint at step {} was not retained", record.step))),
    }
}

/// Highest clean probe success; ties go to the later checkpoint.
pub fn select_best(records: &[CheckpointRecord], world: &WorldConfig, episodes: usize, seed: u64) -> Result<(usize, Vec<(u64, f64)>), TrainError> {
    if records.is_empty() {
        return Err(TrainError::Config("phase 1 produced no checkpoints".into()));
    }
    let probe_seed = seed::derive(seed, &[seed::EVAL, u64::MAX]);
    let mut scores = Vec::with_capacity(records.len());
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        let ckpt = snapshot(r)?;
        let rate = evaluate_success(Controller::Policy(&ckpt.model), world, Perturbation::None, episodes, probe_seed).map_err(eval_err)?.rate;
        if rate >= scores.get(best).map_or(f64::NEG_INFINITY, |&(_, s)| s) {
            best = i;
        }
        scores.push((r.step, rate));
    }
    Ok((best, scores))
}

fn eval_err(e: EvalError) -> TrainError {
    match e {
        EvalError::Env(e) => TrainError::Env(e),
        EvalError::Model(e) => TrainError::Model(e),
        EvalError::Checkpoint(e) => TrainError::Checkpoint(e),
        other => TrainError::Config(other.to_string()),
    }
}

pub fn train_two_phase(opts: TwoPhaseOptions) -> Result<TwoPhaseOutcome, TrainError> {
    let outputs = |phase: &str| TrainerOutputs {
        checkpoint_dir: opts.out_dir.as_ref().map(|d| d.join(phase).join("checkpoints")),
        metrics_path: opts.out_dir.as_ref().map(|d| d.join(phase).join("metrics.csv")),
        keep_snapshots: false,
        verbose: opts.verbose,
    };
    if let Some(d) = &opts.out_dir {
        std::fs::create_dir_all(d.join("phase1"))?;
        std::fs::create_dir_all(d.join("phase2"))?;
    }
    let mut p1 = TrainOptions::new(Profile::Track1Phase1, opts.world.clone(), opts.seed);
    p1.config = TrainingConfig {
        total_training_steps: opts.phase1_steps,
        ..opts.config.clone()
    };
    p1.jobs = opts.jobs;
    p1.outputs = outputs("phase1");
    let phase1 = train(p1)?;

    let (best, probe) = select_best(&phase1.checkpoints, &opts.world, opts.probe_episodes, opts.seed)?;
    let best_ckpt = snapshot(&phase1.checkpoints[best])?;
    let best_step = best_ckpt.step;

    let mut p2 = TrainOptions::new(Profile::Track1Phase2, opts.world.clone(), seed::split(opts.seed, 2));
    p2.config = TrainingConfig {
        total_training_steps: opts.phase2_steps,
        ..opts.config.clone()
    };
    p2.jobs = opts.jobs;
    p2.graft_glu = opts.use_glu;
    p2.init_checkpoint = Some(best_ckpt);
    p2.outputs = outputs("phase2");
    let phase2 = train(p2)?;
    Ok(TwoPhaseOutcome {
        phase1,
        phase2,
        best_step,
        probe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_split_is_four_to_one() {
        assert_eq!(split_phases(200_000), (160_000, 40_000));
        assert_eq!(split_phases(1_750_000), (1_400_000, 350_000));
    }
}
