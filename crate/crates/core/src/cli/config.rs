//! Run configuration: one TOML tree with optional `inherits = "base.toml"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::env::{battery, Perturbation, WorldConfig, BATTERIES};
use crate::eval::{parse_site, DEFAULT_EPISODES, DEFAULT_NOISE, DEFAULT_SITES, DEFAULT_STIMULI};
use crate::ppo::{split_phases, Profile, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    F32,
}

/// Track 1 phase lengths, named after the table rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub phase_1_steps: u64,
    pub phase_2_steps: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            phase_1_steps: 1_400_000,
            phase_2_steps: 350_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub battery: String,
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            battery: "desk".into(),
            episodes: DEFAULT_EPISODES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub site: String,
    pub stimuli: usize,
    pub sites: usize,
    pub noise_sigma: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            site: "post-GLU".into(),
            stimuli: DEFAULT_STIMULI,
            sites: DEFAULT_SITES,
            noise_sigma: DEFAULT_NOISE,
        }
    }
}

/// Fully merged configuration tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Parent file, resolved relative to this one. Never persisted.
    #[serde(skip_serializing)]
    pub inherits: Option<String>,
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub precision: PrecisionMode,
    /// Single-threaded, bit-reproducible execution.
    pub deterministic: bool,
    pub jobs: usize,
    pub world: WorldConfig,
    pub training: TrainingConfig,
    pub schedule: ScheduleConfig,
    pub eval: EvalConfig,
    pub align: AlignConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Track1Phase1)
    }
}

impl RunConfig {
    /// Defaults with the profile's training hyperparameters.
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            inherits: None,
            profile,
            seed: 0,
            out_dir: PathBuf::from("out"),
            precision: PrecisionMode::F32,
            deterministic: true,
            jobs: 1,
            world: WorldConfig::default(),
            training: TrainingConfig::for_profile(profile),
            schedule: ScheduleConfig::default(),
            eval: EvalConfig::default(),
            align: AlignConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.training.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Err(CliError::Config(m)) = parse_battery(&self.eval.battery) {
            return Err(CliError::Config(format!("eval.battery: {m}")));
        }
        if self.eval.episodes == 0 {
            return Err(CliError::Config("eval.episodes must be positive".into()));
        }
        parse_site(&self.align.site).map_err(|e| CliError::Config(format!("align.site: {e}")))?;
        if self.align.stimuli < 3 || self.align.sites == 0 || !(self.align.noise_sigma >= 0.0) {
            return Err(CliError::Config("align needs stimuli >= 3, sites >= 1 and noise_sigma >= 0".into()));
        }
        if self.schedule.phase_1_steps == 0 || self.schedule.phase_2_steps == 0 {
            return Err(CliError::Config("schedule phase lengths must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Threads actually used: one in deterministic mode.
    pub fn effective_jobs(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.jobs
        }
    }

    /// Sets the total budget and rescales the two phases to 4:1.
    pub fn set_total_steps(&mut self, total: u64) {
        self.training.total_training_steps = total;
        let (a, b) = split_phases(total);
        self.schedule.phase_1_steps = a.max(1);
        self.schedule.phase_2_steps = b.max(1);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Profile defaults, overlaid by `path` and its `inherits` chain.
    /// `profile` wins over any profile named in the files.
    pub fn resolve(path: Option<&Path>, profile: Option<Profile>) -> Result<Self, CliError> {
        let tree = match path {
            Some(p) => load_tree(p, &mut Vec::new())?,
            None => toml::Table::new(),
        };
        let profile = match (profile, tree.get("profile")) {
            (Some(p), _) => p,
            (None, Some(toml::Value::String(name))) => name.parse().map_err(|e: crate::ppo::TrainError| CliError::Config(e.to_string()))?,
            (None, _) => Profile::Track1Phase1,
        };
        let base = toml::Table::try_from(Self::for_profile(profile)).expect("defaults serialize");
        let mut merged = merge(base, tree);
        merged.insert("profile".into(), toml::Value::String(profile.to_string()));
        merged.remove("inherits");
        toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::resolve(Some(path), None)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// A named battery, or a comma-separated list of perturbations such as
/// `fog:1,brightness:0.3`.
pub fn parse_battery(spec: &str) -> Result<Vec<Perturbation>, CliError> {
    let lift = |e: crate::env::EnvError| CliError::Config(e.to_string());
    if BATTERIES.contains(&spec) || !(spec.contains(':') || spec.contains(',')) {
        return battery(spec).map_err(lift);
    }
    spec.split(',').map(|p| Perturbation::parse(p).map_err(lift)).collect()
}

fn load_tree(path: &Path, chain: &mut Vec<PathBuf>) -> Result<toml::Table, CliError> {
    let canonical = path.canonicalize().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if chain.contains(&canonical) {
        return Err(CliError::Config(format!("inheritance cycle through {}", path.display())));
    }
    chain.push(canonical);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    // Checked file by file so diagnostics carry this file's line numbers.
    toml::from_str::<RunConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = match table.remove("inherits") {
        None => toml::Table::new(),
        Some(toml::Value::String(parent)) => {
            let parent = path.parent().unwrap_or(Path::new(".")).join(parent);
            load_tree(&parent, chain)?
        }
        Some(other) => return Err(CliError::Config(format!("{}: inherits must be a path string, got {other}", path.display()))),
    };
    Ok(merge(base, table))
}

/// Deep merge; `over` wins on conflicts, tables merge key by key.
fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.set_total_steps(200_000);
        c.world = WorldConfig::small();
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!((back.schedule.phase_1_steps, back.schedule.phase_2_steps), (160_000, 40_000));
    }

    #[test]
    fn inheritance_overrides_leaf_keys() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.toml"), "seed = 3\n[training]\nbatch_size = 64\nnum_epochs = 5\n").unwrap();
        std::fs::write(dir.path().join("child.toml"), "inherits = \"base.toml\"\n[training]\nnum_epochs = 2\n").unwrap();
        let c = RunConfig::load(&dir.path().join("child.toml")).unwrap();
        assert_eq!((c.seed, c.training.batch_size, c.training.num_epochs), (3, 64, 2));
        assert_eq!(c.inherits, None);
    }

    #[test]
    fn profile_selects_training_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t2.toml");
        std::fs::write(&path, "profile = \"track2\"\n[training]\nnum_epochs = 4\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.training, TrainingConfig { num_epochs: 4, ..TrainingConfig::track2() });
        let forced = RunConfig::resolve(Some(&path), Some(Profile::Track1Phase1)).unwrap();
        assert_eq!(forced.training.learning_rate, 9e-5);
    }

    #[test]
    fn diagnostics_name_the_file_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.toml"), "seed = 1\n\n[world]\nfov = \"wide\"\n").unwrap();
        std::fs::write(dir.path().join("child.toml"), "inherits = \"base.toml\"\n").unwrap();
        let err = RunConfig::load(&dir.path().join("child.toml")).unwrap_err().to_string();
        assert!(err.contains("base.toml") && err.contains("line 4"), "{err}");
    }

    #[test]
    fn battery_lists_parse() {
        assert_eq!(parse_battery("desk").unwrap().len(), 13);
        let two = parse_battery("fog:1,brightness:0.3").unwrap();
        assert_eq!(two, vec![Perturbation::Fog { density: 1.0 }, Perturbation::Brightness { offset: 0.3 }]);
        let err = parse_battery("lab").unwrap_err().to_string();
        assert!(err.contains("desk"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("[training]\nlearning_rat = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("learning_rat"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }
}
