use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;

use super::config::{Profile, TrainingConfig};
use super::trainer::{TrainOutcome, Trainer, TrainerOutputs};
use super::TrainError;
use crate::env::WorldConfig;
use crate::nn::{load_checkpoint, Architecture, CheckpointError, Model, ModelCheckpoint, ModelSpec};
use crate::seed;

/// Everything needed to launch one training run.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub profile: Profile,
    pub config: TrainingConfig,
    pub world: WorldConfig,
    pub seed: u64,
    pub jobs: usize,
    /// Checkpoint to start from. Required for `track1_phase2`; otherwise
    /// training resumes from it.
    pub init_from: Option<PathBuf>,
    /// Starting checkpoint held in memory (takes precedence over `init_from`).
    pub init_checkpoint: Option<ModelCheckpoint<f32>>,
    /// For `track1_phase2`: graft a fresh GLU (the default) or keep the
    /// phase-1 architecture and simply continue training.
    pub graft_glu: bool,
    pub outputs: TrainerOutputs,
}

impl TrainOptions {
    pub fn new(profile: Profile, world: WorldConfig, seed: u64) -> Self {
        Self {
            profile,
            config: TrainingConfig::for_profile(profile),
            world,
            seed,
            jobs: 1,
            init_from: None,
            init_checkpoint: None,
            graft_glu: true,
            outputs: TrainerOutputs::default(),
        }
    }
}

/// Architecture a profile trains from scratch.
pub fn profile_spec(profile: Profile, world: &WorldConfig, use_norm: bool) -> ModelSpec {
    let (h, w) = (world.render_height, world.render_width);
    match profile {
        Profile::Track1Phase1 | Profile::Track1Phase2 => ModelSpec::simple_cnn(h, w, use_norm, false),
        Profile::Track2 => ModelSpec {
            use_norm,
            ..ModelSpec::deep_resnet(h, w)
        },
    }
}

/// Starting point of a run: model, policy stream and step offsets.
#[derive(Debug, Clone)]
pub struct RunStart {
    pub model: Model<f32>,
    pub rng: ChaCha8Rng,
    pub step_base: u64,
    pub env_steps_base: u64,
}

/// Builds or restores the starting model. Phase 2 grafts the GLU onto the
/// phase-1 backbone; other profiles resume with the stored policy stream.
pub fn prepare(opts: &TrainOptions) -> Result<RunStart, TrainError> {
    opts.config.validate()?;
    let init = match (&opts.init_checkpoint, &opts.init_from) {
        (Some(c), _) => Some(c.clone()),
        (None, Some(p)) => Some(load_checkpoint::<f32>(p)?),
        (None, None) => None,
    };
    let init_rng = || seed::rng(seed::derive(opts.seed, &[seed::INIT]));
    let policy_rng = seed::rng(seed::derive(opts.seed, &[seed::POLICY]));

    let start = match (opts.profile, init) {
        (Profile::Track1Phase2, None) => {
            return Err(TrainError::Config("profile track1_phase2 needs a phase-1 checkpoint to start from".into()));
        }
        (Profile::Track1Phase2, Some(c)) => {
            expect_arch(&c.model, Architecture::SimpleCnn)?;
            let model = if opts.graft_glu && !c.model.spec().use_glu {
                c.model.with_fresh_glu(&mut init_rng())?
            } else {
                c.model
            };
            RunStart {
                model,
                rng: policy_rng,
                step_base: c.step,
                env_steps_base: c.env_steps,
            }
        }
        (profile, Some(c)) => {
            let arch = if profile == Profile::Track2 { Architecture::DeepResnet } else { Architecture::SimpleCnn };
            expect_arch(&c.model, arch)?;
            RunStart {
                model: c.model,
                rng: c.rng.restore(),
                step_base: c.step,
                env_steps_base: c.env_steps,
            }
        }
        (profile, None) => {
            let spec = profile_spec(profile, &opts.world, opts.config.use_norm);
            RunStart {
                model: Model::new(spec, &mut init_rng())?,
                rng: policy_rng,
                step_base: 0,
                env_steps_base: 0,
            }
        }
    };
    if start.model.spec().use_norm != opts.config.use_norm {
        return Err(TrainError::Config(format!(
            "use_norm = {} but the starting checkpoint was trained with use_norm = {}",
            opts.config.use_norm,
            start.model.spec().use_norm
        )));
    }
    Ok(start)
}

pub fn train(opts: TrainOptions) -> Result<TrainOutcome, TrainError> {
    let s = prepare(&opts)?;
    Trainer::new(opts.config, opts.world, s.model, opts.seed, s.rng, s.step_base, s.env_steps_base, opts.jobs, opts.outputs)?.run()
}

fn expect_arch(model: &Model<f32>, arch: Architecture) -> Result<(), TrainError> {
    if model.spec().architecture == arch {
        Ok(())
    } else {
        Err(TrainError::Checkpoint(CheckpointError::ArchitectureMismatch {
            expected: arch.to_string(),
            found: model.spec().architecture.to_string(),
        }))
    }
}
