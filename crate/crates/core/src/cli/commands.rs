use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::parse_battery;
use super::{AlignArgs, CliError, Command, CommonArgs, EvalArgs, GenDatasetArgs, InspectArgs, ModelCommand, RunConfig, SweepArgs, TrainArgs};
use crate::env::{WorldConfig, SMALL_RESOLUTION};
use crate::eval::{align_model, checkpoint_sweep, evaluate_battery, parse_site, AlignmentDataset, BehaviorSpec, Controller, SurrogateCortex};
use crate::nn::{format_layer_table, load_checkpoint, ModelCheckpoint};
use crate::ppo::{train, train_two_phase, CheckpointRecord, TrainOptions, TrainerOutputs, TwoPhaseOptions};
use crate::seed;

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Align(a) => cmd_align(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Inspect(a) | Command::Model { command: ModelCommand::Inspect(a) } => cmd_inspect(a),
        Command::GenDataset(a) => cmd_gen_dataset(a),
    }
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Resolved config plus the run directory it was written to.
struct Run {
    cfg: RunConfig,
    dir: PathBuf,
    log: fs::File,
}

impl Run {
    /// Resolves the config, applies command-line overrides, validates, and
    /// persists `config.resolved` before any work starts.
    fn start(common: &CommonArgs, name: &str, cfg: Option<RunConfig>, tweak: impl FnOnce(&mut RunConfig)) -> Result<Self, CliError> {
        let mut cfg = match cfg {
            Some(c) => c,
            None => RunConfig::resolve(common.config.as_deref(), None)?,
        };
        apply_common(&mut cfg, common);
        tweak(&mut cfg);
        cfg.validate()?;
        let started = unix_time();
        let id = common.run_id.clone().unwrap_or_else(|| format!("{name}-s{}-{started}", cfg.seed));
        let dir = cfg.out_dir.join(id);
        fs::create_dir_all(dir.join("reports"))?;
        fs::write(dir.join("config.resolved"), cfg.to_toml())?;
        let mut log = fs::OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
        writeln!(log, "{started} start {name}")?;
        Ok(Self { cfg, dir, log })
    }

    fn report(&self, file: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join("reports").join(file);
        fs::write(&path, contents)?;
        Ok(path)
    }

    fn finish(mut self) -> Result<PathBuf, CliError> {
        writeln!(self.log, "{} done", unix_time())?;
        Ok(self.dir)
    }
}

fn apply_common(cfg: &mut RunConfig, common: &CommonArgs) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if common.small {
        let (h, w) = SMALL_RESOLUTION;
        cfg.world = cfg.world.clone().with_resolution(h, w);
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
        if j > 1 {
            cfg.deterministic = false;
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(a.common.config.as_deref(), a.profile)?;
    let name = if a.two_phase { "track1".to_string() } else { cfg.profile.to_string() };
    let run = Run::start(&a.common, &name, Some(cfg), |c| {
        if let Some(steps) = a.steps {
            c.set_total_steps(steps);
        }
        if a.no_norm {
            c.training.use_norm = false;
        }
        // A run shorter than one interval still leaves a final checkpoint.
        let budget = if a.two_phase { c.schedule.phase_1_steps.min(c.schedule.phase_2_steps) } else { c.training.total_training_steps };
        c.training.checkpoint_interval = c.training.checkpoint_interval.min(budget.max(1));
    })?;
    let cfg = &run.cfg;
    let outputs = TrainerOutputs {
        checkpoint_dir: Some(run.dir.join("checkpoints")),
        metrics_path: Some(run.dir.join("metrics.csv")),
        keep_snapshots: false,
        verbose: a.verbose,
    };
    let summary = if a.two_phase {
        let out = train_two_phase(TwoPhaseOptions {
            config: cfg.training.clone(),
            phase1_steps: cfg.schedule.phase_1_steps,
            phase2_steps: cfg.schedule.phase_2_steps,
            world: cfg.world.clone(),
            seed: cfg.seed,
            jobs: cfg.effective_jobs(),
            use_glu: true,
            probe_episodes: cfg.eval.episodes,
            out_dir: Some(run.dir.clone()),
            verbose: a.verbose,
        })?;
        println!("phase 1: {} env steps, best checkpoint at step {}", out.phase1.env_steps, out.best_step);
        println!("phase 2: {} env steps, {} checkpoints", out.phase2.env_steps, out.phase2.checkpoints.len());
        TrainSummary {
            profile: name,
            env_steps: out.phase1.env_steps + out.phase2.env_steps,
            updates: out.phase1.updates + out.phase2.updates,
            episodes: out.phase1.episodes + out.phase2.episodes,
            best_phase1_step: Some(out.best_step),
            probe: out.probe,
            checkpoints: paths(&out.phase1.checkpoints).into_iter().chain(paths(&out.phase2.checkpoints)).collect(),
        }
    } else {
        let mut opts = TrainOptions::new(cfg.profile, cfg.world.clone(), cfg.seed);
        opts.config = cfg.training.clone();
        opts.jobs = cfg.effective_jobs();
        opts.init_from = a.resume.clone();
        opts.outputs = outputs;
        let out = train(opts)?;
        println!("{}: {} env steps, {} updates, {} checkpoints", cfg.profile, out.env_steps, out.updates, out.checkpoints.len());
        TrainSummary {
            profile: name,
            env_steps: out.env_steps,
            updates: out.updates,
            episodes: out.episodes,
            best_phase1_step: None,
            probe: Vec::new(),
            checkpoints: paths(&out.checkpoints),
        }
    };
    run.report("train.json", &to_json(&summary))?;
    println!("outputs in {}", run.finish()?.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    profile: String,
    env_steps: u64,
    updates: usize,
    episodes: u64,
    best_phase1_step: Option<u64>,
    probe: Vec<(u64, f64)>,
    checkpoints: Vec<String>,
}

fn paths(records: &[CheckpointRecord]) -> Vec<String> {
    records.iter().filter_map(|r| r.path.as_ref()).map(|p| p.display().to_string()).collect()
}

/// World used to evaluate a checkpoint: the configured arena at the
/// checkpoint's resolution.
fn world_for(cfg: &RunConfig, ckpt: &ModelCheckpoint<f32>) -> WorldConfig {
    let spec = ckpt.model.spec();
    cfg.world.clone().with_resolution(spec.height, spec.width)
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let run = Run::start(&a.common, "eval", None, |c| {
        if let Some(b) = &a.battery {
            c.eval.battery = b.clone();
        }
        if let Some(n) = a.episodes {
            c.eval.episodes = n;
        }
    })?;
    let cfg = &run.cfg;
    let conditions = parse_battery(&cfg.eval.battery)?;
    let eval_seed = seed::derive(cfg.seed, &[seed::EVAL]);
    let ckpt;
    let (controller, world) = match Controller::scripted(&a.checkpoint) {
        Some(c) => (c, cfg.world.clone()),
        None => {
            ckpt = load_checkpoint::<f32>(Path::new(&a.checkpoint))?;
            (Controller::Policy(&ckpt.model), world_for(cfg, &ckpt))
        }
    };
    let result = evaluate_battery(controller, &world, &conditions, cfg.eval.episodes, eval_seed)?;
    run.report("eval.json", &to_json(&result))?;
    run.report("eval.csv", &result.to_csv())?;
    print!("{}", result.to_csv());
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!("ASR {:.4}  MSR {}  final {}", result.asr, opt(result.msr), opt(result.final_score));
    println!("outputs in {}", run.finish()?.display());
    Ok(())
}

fn cmd_align(a: AlignArgs) -> Result<(), CliError> {
    let run = Run::start(&a.common, "align", None, |c| {
        if let Some(s) = &a.site {
            c.align.site = s.clone();
        }
    })?;
    let site = parse_site(&run.cfg.align.site)?;
    let dataset = AlignmentDataset::load(&a.dataset)?;
    let ckpt = load_checkpoint::<f32>(&a.checkpoint)?;
    let report = align_model(&ckpt.model, &dataset, site)?;
    run.report("align.json", &to_json(&report))?;
    let csv = format!(
        "site,feature_dim,neurons,r2,strength,rdm_correlation\n{},{},{},{:.6},{:e},{:.6}\n",
        report.site, report.feature_dim, report.neurons, report.r2, report.strength, report.rdm_correlation
    );
    run.report("align.csv", &csv)?;
    println!("{}: R2 {:.4}  RDM correlation {:.4}", report.site, report.r2, report.rdm_correlation);
    println!("outputs in {}", run.finish()?.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let run = Run::start(&a.common, "sweep", None, |c| {
        if let Some(b) = &a.battery {
            c.eval.battery = b.clone();
        }
        if let Some(n) = a.episodes {
            c.eval.episodes = n;
        }
        if let Some(s) = &a.site {
            c.align.site = s.clone();
        }
    })?;
    let cfg = &run.cfg;
    let mut files: Vec<PathBuf> = glob::glob(&a.checkpoints)
        .map_err(|e| CliError::Config(format!("bad checkpoint pattern {:?}: {e}", a.checkpoints)))?
        .filter_map(Result::ok)
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no checkpoints match {:?}", a.checkpoints)));
    }
    let mut ckpts = Vec::with_capacity(files.len());
    for f in &files {
        let label = f.file_name().map_or_else(|| f.display().to_string(), |n| n.to_string_lossy().into_owned());
        ckpts.push((label, load_checkpoint::<f32>(f)?));
    }
    let dataset = AlignmentDataset::load(&a.dataset)?;
    let behavior = BehaviorSpec {
        world: world_for(cfg, &ckpts[0].1),
        battery: parse_battery(&cfg.eval.battery)?,
        episodes: cfg.eval.episodes,
        seed: seed::derive(cfg.seed, &[seed::EVAL]),
    };
    let report = checkpoint_sweep(&ckpts, &dataset, parse_site(&cfg.align.site)?, &behavior)?;
    for step in &report.duplicate_steps {
        eprintln!("warning: several checkpoints report step {step}");
    }
    run.report("sweep.csv", &report.to_csv())?;
    print!("{}", report.to_csv());
    println!("outputs in {}", run.finish()?.display());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint::<f32>(&a.checkpoint)?;
    let spec = ckpt.model.spec();
    println!(
        "{} {}x{} norm={} glu={} step={} env_steps={}",
        spec.architecture, spec.height, spec.width, spec.use_norm, spec.use_glu, ckpt.step, ckpt.env_steps
    );
    print!("{}", format_layer_table(&ckpt.model.layer_table()));
    Ok(())
}

fn cmd_gen_dataset(a: GenDatasetArgs) -> Result<(), CliError> {
    let run = Run::start(&a.common, "dataset", None, |c| {
        if let Some(n) = a.stimuli {
            c.align.stimuli = n;
        }
        if let Some(n) = a.sites {
            c.align.sites = n;
        }
        if let Some(s) = a.noise_sigma {
            c.align.noise_sigma = s;
        }
    })?;
    let cfg = &run.cfg;
    let w = &cfg.world;
    let cortex_seed = seed::derive(cfg.seed, &[seed::DATASET, seed::INIT]);
    let dataset_seed = seed::derive(cfg.seed, &[seed::DATASET]);
    let cortex = SurrogateCortex::new(w.render_height, w.render_width, cfg.align.sites, cfg.align.noise_sigma, cortex_seed)?;
    let dataset = AlignmentDataset::generate(w, cfg.align.stimuli, dataset_seed, &cortex)?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    dataset.save(&a.output)?;
    println!(
        "{} stimuli at {}x{}, {} neurons -> {}",
        dataset.rows(),
        dataset.height,
        dataset.width,
        dataset.neurons(),
        a.output.display()
    );
    run.finish()?;
    Ok(())
}
