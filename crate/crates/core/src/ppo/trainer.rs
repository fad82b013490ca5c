use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_grad_norm, Adam};
use super::buffer::RolloutBuffer;
use super::config::TrainingConfig;
use super::gae::normalize_advantages;
use super::loss::{ppo_loss, LossCoefficients, LossSample};
use super::metrics::{MetricsRow, MetricsWriter};
use super::TrainError;
use crate::env::{Action, ForageEnv, WorldConfig};
use crate::nn::{save_checkpoint, Model, ModelCheckpoint, RngState, ACTION_DIM};
use crate::seed;
use crate::tensor::{Scalar, Tape};

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub step: u64,
    pub env_steps: u64,
    pub path: Option<PathBuf>,
    /// In-memory copy, kept when no checkpoint directory is configured.
    pub snapshot: Option<ModelCheckpoint<f32>>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainerOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// Keep every checkpoint in memory as well.
    pub keep_snapshots: bool,
    /// Print one line per summary to stderr.
    pub verbose: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub metrics: Vec<MetricsRow>,
    /// Environment transitions consumed in this run.
    pub env_steps: u64,
    pub updates: usize,
    pub episodes: u64,
}

struct EnvSlot {
    env: ForageEnv,
    raw: Vec<f32>,
    episodes: u64,
    episode_return: f64,
}

/// Episode statistics since the last summary row.
#[derive(Default)]
struct Window {
    episodes: u64,
    return_sum: f64,
    successes: u64,
}

pub struct Trainer {
    cfg: TrainingConfig,
    model: Model<f32>,
    adam: Adam,
    rng: ChaCha8Rng,
    envs: Vec<EnvSlot>,
    seed: u64,
    jobs: usize,
    /// Nominal step this run starts from (non-zero when continuing).
    step_base: u64,
    /// Environment transitions consumed before this run.
    env_steps_base: u64,
    env_steps: u64,
    episodes: u64,
    window: Window,
    last_update: UpdateStats,
    next_summary: u64,
    next_checkpoint: u64,
    updates: usize,
    outputs: TrainerOutputs,
    metrics_writer: Option<MetricsWriter>,
    metrics: Vec<MetricsRow>,
    checkpoints: Vec<CheckpointRecord>,
}

impl Trainer {
    /// Trainer for `model`. `step_base`/`env_steps_base` position this run
    /// after earlier training; `rng` is the policy stream (restored from a
    /// checkpoint when continuing).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: TrainingConfig,
        world: WorldConfig,
        model: Model<f32>,
        seed: u64,
        rng: ChaCha8Rng,
        step_base: u64,
        env_steps_base: u64,
        jobs: usize,
        outputs: TrainerOutputs,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        world.validate()?;
        let spec = model.spec();
        if (spec.height, spec.width) != (world.render_height, world.render_width) {
            return Err(TrainError::Config(format!(
                "model expects {}x{} observations but the world renders {}x{}",
                spec.height, spec.width, world.render_height, world.render_width
            )));
        }
        let mut envs = Vec::with_capacity(cfg.num_parallel_envs);
        for i in 0..cfg.num_parallel_envs {
            let mut env = ForageEnv::new(world.clone())?;
            let raw = env.reset(episode_seed(seed, i, env_steps_base, 0))?.pixels;
            envs.push(EnvSlot {
                env,
                raw,
                episodes: 0,
                episode_return: 0.0,
            });
        }
        if let Some(dir) = &outputs.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
        }
        let metrics_writer = match &outputs.metrics_path {
            Some(p) => Some(MetricsWriter::create(p)?),
            None => None,
        };
        Ok(Self {
            adam: Adam::new(model.params()),
            next_summary: cfg.summary_frequency,
            next_checkpoint: cfg.checkpoint_interval,
            cfg,
            model,
            rng,
            envs,
            seed,
            jobs: jobs.max(1),
            step_base,
            env_steps_base,
            env_steps: 0,
            episodes: 0,
            window: Window::default(),
            last_update: UpdateStats::default(),
            updates: 0,
            outputs,
            metrics_writer,
            metrics: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Runs rollout/update cycles until the step budget is spent. The last
    /// rollout is always complete, so up to one buffer of extra transitions
    /// may be consumed.
    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        while self.env_steps < self.cfg.total_training_steps {
            let lr = self.cfg.lr_at(self.env_steps);
            let buffer = self.collect()?;
            self.last_update = self.update(&buffer, lr)?;
            self.updates += 1;
            self.save_due_checkpoints()?;
        }
        Ok(TrainOutcome {
            model: self.model,
            checkpoints: self.checkpoints,
            metrics: self.metrics,
            env_steps: self.env_steps,
            updates: self.updates,
            episodes: self.episodes,
        })
    }

    /// Fills one buffer with on-policy transitions. The normalizer absorbs
    /// every observation batch before the policy sees it.
    pub fn collect(&mut self) -> Result<RolloutBuffer, TrainError> {
        let n = self.envs.len();
        let steps = self.cfg.steps_per_env();
        let obs_len = self.model.input_len();
        let mut buffer = RolloutBuffer::new(n, steps, obs_len);
        let mut raw = vec![0f32; n * obs_len];
        for t in 0..steps {
            for (i, slot) in self.envs.iter().enumerate() {
                raw[i * obs_len..(i + 1) * obs_len].copy_from_slice(&slot.raw);
            }
            let norm = self.model.observe(&raw);
            let outs = self.model.act_batch(&norm, Some(&mut self.rng))?;
            let actions: Vec<[f64; ACTION_DIM]> = outs.iter().map(|o| o.action).collect();
            let log_probs: Vec<f64> = outs.iter().map(|o| o.log_prob).collect();
            let values: Vec<f64> = outs.iter().map(|o| o.value).collect();
            buffer.record_policy(t, &norm, &actions, &log_probs, &values);

            let results = step_all(&mut self.envs, &actions, self.jobs)?;
            let mut rewards = vec![0.0; n];
            let mut dones = vec![false; n];
            for (i, (reward, done, success)) in results.into_iter().enumerate() {
                rewards[i] = reward;
                dones[i] = done;
                let slot = &mut self.envs[i];
                slot.episode_return += reward;
                if done {
                    self.window.episodes += 1;
                    self.window.return_sum += slot.episode_return;
                    self.window.successes += success as u64;
                    self.episodes += 1;
                    slot.episodes += 1;
                    slot.episode_return = 0.0;
                    let seed = episode_seed(self.seed, i, self.env_steps_base, slot.episodes);
                    slot.raw = slot.env.reset(seed).map_err(|source| TrainError::Environment { index: i, source })?.pixels;
                }
            }
            buffer.record_outcome(t, &rewards, &dones);
            self.env_steps += n as u64;
            self.emit_due_summaries()?;
        }

        for (i, slot) in self.envs.iter().enumerate() {
            raw[i * obs_len..(i + 1) * obs_len].copy_from_slice(&slot.raw);
        }
        let tail = self.model.normalize(&raw);
        let bootstrap: Vec<f64> = self.model.act_batch::<ChaCha8Rng>(&tail, None)?.iter().map(|o| o.value).collect();
        buffer.compute_advantages(&bootstrap, self.cfg.discount_factor, self.cfg.gae_lambda, self.cfg.time_horizon);
        Ok(buffer)
    }

    /// `num_epochs` passes of shuffled minibatch Adam steps over `buffer`.
    pub fn update(&mut self, buffer: &RolloutBuffer, lr: f64) -> Result<UpdateStats, TrainError> {
        let coef = LossCoefficients {
            clip: self.cfg.clip_parameter,
            value: self.cfg.value_loss_coefficient,
            entropy: self.cfg.entropy_coefficient,
        };
        let log_std_id = self.model.heads().log_std;
        let n_params = self.model.params().len();
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        let mut advantages = buffer.advantages.clone();
        if self.cfg.normalize_advantages {
            normalize_advantages(&mut advantages);
        }
        let mut stats = UpdateStats::default();
        for epoch in 0..self.cfg.num_epochs {
            order.shuffle(&mut self.rng);
            for (mb, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
                let mut pixels = Vec::with_capacity(chunk.len() * buffer.obs_len);
                for &s in chunk {
                    pixels.extend_from_slice(buffer.observation(s));
                }
                let adv: Vec<f64> = chunk.iter().map(|&s| advantages[s]).collect();
                let samples: Vec<LossSample> = chunk
                    .iter()
                    .zip(&adv)
                    .map(|(&s, &a)| LossSample {
                        action: buffer.actions[s],
                        old_log_prob: buffer.log_probs[s],
                        advantage: a,
                        target_return: buffer.returns[s],
                    })
                    .collect();

                let (loss, mut grads) = {
                    let model = &self.model;
                    let mut tape = Tape::new();
                    let x = model.input_var(&mut tape, &pixels)?;
                    let out = model.forward(&mut tape, x)?;
                    let means: Vec<f64> = tape.value(out.mean).data().iter().map(|v| v.as_f64()).collect();
                    let values: Vec<f64> = tape.value(out.value).data().iter().map(|v| v.as_f64()).collect();
                    let log_std = model.heads().log_std(model.params());
                    let active = model.heads().log_std_active(model.params());
                    let loss = ppo_loss(&samples, &means, &values, &log_std, &active, coef);
                    if !loss.total.is_finite() {
                        return Err(non_finite(self.updates, epoch, mb, &loss.total, &means, &values, &adv));
                    }
                    let to32 = |g: &[f64]| g.iter().map(|&v| v as f32).collect::<Vec<f32>>();
                    let g = tape.backward(vec![(out.mean, to32(&loss.grad_mean)), (out.value, to32(&loss.grad_value))])?;
                    let mut grads: Vec<Option<Vec<f64>>> = g
                        .into_param_grads(n_params)
                        .into_iter()
                        .map(|o| o.map(|v| v.iter().map(|x| x.as_f64()).collect()))
                        .collect();
                    grads[log_std_id.index()] = Some(loss.grad_log_std.to_vec());
                    (loss, grads)
                };
                let norm = clip_grad_norm(&mut grads, self.cfg.max_grad_norm);
                if !norm.is_finite() {
                    return Err(TrainError::NonFinite {
                        update: self.updates,
                        epoch,
                        minibatch: mb,
                        detail: format!("gradient norm {norm}; loss {:.6}", loss.total),
                    });
                }
                self.adam.step(self.model.params_mut(), &grads, lr);
                stats.policy_loss += loss.policy;
                stats.value_loss += loss.value;
                stats.entropy += loss.entropy;
                stats.clip_fraction += loss.clip_fraction;
                stats.mean_ratio += loss.mean_ratio;
                stats.grad_norm += norm;
                stats.minibatches += 1;
            }
        }
        let k = stats.minibatches.max(1) as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.clip_fraction /= k;
        stats.mean_ratio /= k;
        stats.grad_norm /= k;
        Ok(stats)
    }

    fn emit_due_summaries(&mut self) -> Result<(), TrainError> {
        while self.env_steps >= self.next_summary {
            let w = std::mem::take(&mut self.window);
            let (mean_return, success_rate) = if w.episodes == 0 {
                (f64::NAN, f64::NAN)
            } else {
                (w.return_sum / w.episodes as f64, w.successes as f64 / w.episodes as f64)
            };
            let row = MetricsRow {
                step: self.step_base + self.next_summary,
                episodes: self.episodes,
                mean_return,
                success_rate,
                policy_loss: self.last_update.policy_loss,
                value_loss: self.last_update.value_loss,
                entropy: self.last_update.entropy,
                clip_fraction: self.last_update.clip_fraction,
                lr: self.cfg.lr_at(self.next_summary),
            };
            if let Some(w) = &mut self.metrics_writer {
                w.write(&row)?;
            }
            if self.outputs.verbose {
                eprintln!(
                    "step {:>9}  episodes {:>6}  return {:>8.3}  success {:>5.3}  entropy {:>6.3}  clip {:>5.3}",
                    row.step, row.episodes, row.mean_return, row.success_rate, row.entropy, row.clip_fraction
                );
            }
            self.metrics.push(row);
            self.next_summary += self.cfg.summary_frequency;
        }
        Ok(())
    }

    fn save_due_checkpoints(&mut self) -> Result<(), TrainError> {
        while self.next_checkpoint <= self.env_steps && self.next_checkpoint <= self.cfg.total_training_steps {
            let step = self.step_base + self.next_checkpoint;
            let ckpt = ModelCheckpoint {
                model: self.model.clone(),
                step,
                env_steps: self.env_steps_base + self.env_steps,
                rng: RngState::capture(&self.rng),
            };
            let path = match &self.outputs.checkpoint_dir {
                Some(dir) => {
                    let p = checkpoint_path(dir, step);
                    save_checkpoint(&ckpt, &p)?;
                    Some(p)
                }
                None => None,
            };
            let keep = self.outputs.keep_snapshots || path.is_none();
            self.checkpoints.push(CheckpointRecord {
                step,
                env_steps: ckpt.env_steps,
                path,
                snapshot: keep.then_some(ckpt),
            });
            self.next_checkpoint += self.cfg.checkpoint_interval;
        }
        Ok(())
    }
}

/// File name used for the checkpoint at `step`.
pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:09}.ckpt"))
}

fn episode_seed(seed: u64, env: usize, base: u64, episode: u64) -> u64 {
    seed::derive(seed, &[seed::ENV, env as u64, base, episode])
}

fn non_finite(update: usize, epoch: usize, minibatch: usize, total: &f64, means: &[f64], values: &[f64], adv: &[f64]) -> TrainError {
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:.4e}, {hi:.4e}]")
    };
    TrainError::NonFinite {
        update,
        epoch,
        minibatch,
        detail: format!("loss {total}; policy mean range {}; value range {}; advantage range {}", range(means), range(values), range(adv)),
    }
}

/// Steps every environment (in parallel across `jobs` threads) and returns
/// `(reward, done, success)` per environment. Rendering happens on the
/// worker threads; results do not depend on `jobs`.
fn step_all(envs: &mut [EnvSlot], actions: &[[f64; ACTION_DIM]], jobs: usize) -> Result<Vec<(f64, bool, bool)>, TrainError> {
    let run = |(index, slot): (usize, &mut EnvSlot), a: &[f64; ACTION_DIM]| -> Result<(f64, bool, bool), TrainError> {
        let r = slot.env.step(Action::from_slice(a)).map_err(|source| TrainError::Environment { index, source })?;
        slot.raw = r.observation.pixels;
        Ok((r.reward, r.done, r.success))
    };
    if jobs <= 1 || envs.len() <= 1 {
        return envs.iter_mut().enumerate().zip(actions).map(|(s, a)| run(s, a)).collect();
    }
    let chunk = envs.len().div_ceil(jobs);
    let mut results: Vec<Result<Vec<(f64, bool, bool)>, TrainError>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = envs
            .chunks_mut(chunk)
            .zip(actions.chunks(chunk))
            .enumerate()
            .map(|(c, (es, acts))| {
                scope.spawn(move || {
                    es.iter_mut()
                        .enumerate()
                        .map(|(i, s)| (c * chunk + i, s))
                        .zip(acts)
                        .map(|(s, a)| run(s, a))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        results = handles.into_iter().map(|h| h.join().expect("environment worker panicked")).collect();
    });
    let mut out = Vec::with_capacity(envs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
