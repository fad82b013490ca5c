//! Neural alignment, checkpoint sweeps and ablation tables.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::behavior::{evaluate_battery, final_score, Controller};
use super::dataset::AlignmentDataset;
use super::rdm::rdm_correlation;
use super::ridge::{default_grid, ridge_fit_predict, train_test_split, TEST_FRACTION};
use super::EvalError;
use crate::env::{Perturbation, WorldConfig};
use crate::nn::{FeatureSite, Model, ModelCheckpoint};
use crate::seed;

const FEATURE_BATCH: usize = 32;

/// Site activations for raw stimuli, normalized with the model's frozen
/// statistics; one row per stimulus.
pub fn extract_features(model: &Model<f32>, stimuli: &[f32], site: FeatureSite) -> Result<DMatrix<f64>, EvalError> {
    let per = model.input_len();
    if stimuli.is_empty() || stimuli.len() % per != 0 {
        return Err(EvalError::Data(format!(
            "stimuli hold {} values, not a whole number of {}x{} images",
            stimuli.len(),
            model.spec().height,
            model.spec().width
        )));
    }
    let mut rows = Vec::with_capacity(stimuli.len() / per);
    for chunk in stimuli.chunks(per * FEATURE_BATCH) {
        rows.extend(model.features(&model.normalize(chunk), site)?);
    }
    let dim = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

/// Parses a site name, listing the valid ones on failure.
pub fn parse_site(name: &str) -> Result<FeatureSite, EvalError> {
    FeatureSite::parse(name).ok_or_else(|| EvalError::Site {
        given: name.to_string(),
        valid: FeatureSite::NAMES.join(", "),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub site: String,
    pub feature_dim: usize,
    pub neurons: usize,
    pub r2: f64,
    pub strength: f64,
    pub excluded_neurons: usize,
    pub rdm_correlation: f64,
    pub rdm_pairs: usize,
    pub rdm_excluded_pairs: usize,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Ridge readout and RDM comparison of `features` against the dataset's
/// responses. The 80/20 split is fixed by the dataset seed.
pub fn align_features(features: &DMatrix<f64>, dataset: &AlignmentDataset, site: &str) -> Result<AlignmentReport, EvalError> {
    if features.nrows() != dataset.rows() {
        return Err(EvalError::Data(format!("{} feature rows for {} stimuli", features.nrows(), dataset.rows())));
    }
    let (train, test) = train_test_split(dataset.rows(), TEST_FRACTION, seed::derive(dataset.dataset_seed, &[seed::EVAL]));
    let ridge = ridge_fit_predict(features, &dataset.responses, &train, &test, &default_grid())?;
    let rdm = rdm_correlation(features, &dataset.responses)?;
    Ok(AlignmentReport {
        site: site.to_string(),
        feature_dim: features.ncols(),
        neurons: dataset.neurons(),
        r2: ridge.test_r2.mean,
        strength: ridge.readout.strength,
        excluded_neurons: ridge.test_r2.excluded,
        rdm_correlation: rdm.correlation,
        rdm_pairs: rdm.pairs,
        rdm_excluded_pairs: rdm.excluded_pairs,
        train_rows: ridge.train_rows,
        test_rows: ridge.test_rows,
    })
}

pub fn align_model(model: &Model<f32>, dataset: &AlignmentDataset, site: FeatureSite) -> Result<AlignmentReport, EvalError> {
    dataset.validate()?;
    let spec = model.spec();
    if (spec.height, spec.width) != (dataset.height, dataset.width) {
        return Err(EvalError::Data(format!(
            "dataset stimuli are {}x{} but the model expects {}x{}",
            dataset.height, dataset.width, spec.height, spec.width
        )));
    }
    let features = extract_features(model, &dataset.stimuli, site)?;
    align_features(&features, dataset, &site.to_string())
}

/// Behavioral protocol settings shared by sweeps and ablations.
#[derive(Debug, Clone)]
pub struct BehaviorSpec {
    pub world: WorldConfig,
    pub battery: Vec<Perturbation>,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub step: u64,
    pub label: String,
    pub r2: f64,
    pub rdm_correlation: f64,
    pub asr: f64,
    pub msr: Option<f64>,
    pub final_score: Option<f64>,
    /// Set on the checkpoint with the highest R².
    pub best_r2: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Step counts that appeared more than once.
    pub duplicate_steps: Vec<u64>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        let mut out = String::from("step,checkpoint,r2,rdm_correlation,asr,msr,final_score,best_r2\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{},{},{}\n",
                r.step,
                r.label,
                r.r2,
                r.rdm_correlation,
                r.asr,
                opt(r.msr),
                opt(r.final_score),
                u8::from(r.best_r2)
            ));
        }
        out
    }
}

/// Alignment and behavior per checkpoint, sorted by step.
pub fn checkpoint_sweep(
    checkpoints: &[(String, ModelCheckpoint<f32>)],
    dataset: &AlignmentDataset,
    site: FeatureSite,
    behavior: &BehaviorSpec,
) -> Result<SweepReport, EvalError> {
    if checkpoints.len() < 2 {
        return Err(EvalError::Config(format!("a sweep needs at least 2 checkpoints, got {}", checkpoints.len())));
    }
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by_key(|&i| checkpoints[i].1.step);
    let mut duplicate_steps: Vec<u64> = order.windows(2).filter(|w| checkpoints[w[0]].1.step == checkpoints[w[1]].1.step).map(|w| checkpoints[w[0]].1.step).collect();
    duplicate_steps.dedup();
    let mut rows = Vec::with_capacity(order.len());
    for i in order {
        let (label, ckpt) = &checkpoints[i];
        let align = align_model(&ckpt.model, dataset, site)?;
        let eval = evaluate_battery(Controller::Policy(&ckpt.model), &behavior.world, &behavior.battery, behavior.episodes, behavior.seed)?;
        rows.push(SweepRow {
            step: ckpt.step,
            label: label.clone(),
            r2: align.r2,
            rdm_correlation: align.rdm_correlation,
            asr: eval.asr,
            msr: eval.msr,
            final_score: eval.final_score,
            best_r2: false,
        });
    }
    let best = (0..rows.len()).fold(0, |b, i| if rows[i].r2 > rows[b].r2 { i } else { b });
    rows[best].best_r2 = true;
    Ok(SweepReport { rows, duplicate_steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub asr: f64,
    pub msr: f64,
    pub final_score: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,asr,msr,final_score\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.variant, r.asr, r.msr, r.final_score));
    }
    out
}

/// Behavioral grid over model variants; every variant needs a checkpoint
/// and the battery must be non-empty.
pub fn run_ablation_protocol(variants: &[(String, Option<&Model<f32>>)], behavior: &BehaviorSpec) -> Result<Vec<AblationRow>, EvalError> {
    if behavior.battery.is_empty() {
        return Err(EvalError::Config("ablation needs a non-empty perturbation battery".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (name, model) in variants {
        let model = model.ok_or_else(|| EvalError::MissingCheckpoint(name.clone()))?;
        let r = evaluate_battery(Controller::Policy(model), &behavior.world, &behavior.battery, behavior.episodes, behavior.seed)?;
        let msr = r.msr.expect("battery is non-empty");
        rows.push(AblationRow {
            variant: name.clone(),
            asr: r.asr,
            msr,
            final_score: final_score(r.asr, msr)?,
        });
    }
    Ok(rows)
}
