//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{ParamSet, Tape, Tensor, TensorError, Var};

/// Denominator floor for the relative error, so components whose true
/// gradient is ~0 are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("perturbation {0} outside [1e-7, 1e-4]")]
    Delta(f64),
    #[error("non-finite analytic gradient for {name}[{index}]")]
    NonFinite { name: String, index: usize },
    #[error("function returned a {0}-element output; expected a scalar")]
    NotScalar(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which components of each tensor to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// At most `per_tensor` components per tensor, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor name, component)` where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub components_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Generic driver: `eval(point)` returns the scalar value and its analytic
/// gradient with respect to every tensor of `point`.
pub fn check<F>(names: &[String], point: &[Tensor<f64>], delta: f64, coords: Coords, mut eval: F) -> Result<GradCheckReport, GradCheckError>
where
    F: FnMut(&[Tensor<f64>]) -> Result<(f64, Vec<Vec<f64>>), TensorError>,
{
    if !(1e-7..=1e-4).contains(&delta) {
        return Err(GradCheckError::Delta(delta));
    }
    let (_, analytic) = eval(point)?;
    for (t, g) in analytic.iter().enumerate() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(GradCheckError::NonFinite {
                name: names[t].clone(),
                index: i,
            });
        }
    }

    let mut probe = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        components_checked: 0,
    };
    for t in 0..point.len() {
        let n = point[t].len();
        let indices: Vec<usize> = match coords {
            Coords::All => (0..n).collect(),
            Coords::Sample { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut idx = sample(&mut rng, n, per_tensor.min(n)).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        for i in indices {
            let orig = point[t].data()[i];
            probe[t].data_mut()[i] = orig + delta;
            let (plus, _) = eval(&probe)?;
            probe[t].data_mut()[i] = orig - delta;
            let (minus, _) = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * delta);
            let err = relative_error(analytic[t][i], numeric);
            report.components_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((names[t].clone(), i));
            }
        }
    }
    Ok(report)
}

/// Checks a scalar function built on a tape with respect to its inputs.
pub fn check_inputs<F>(point: &[Tensor<f64>], delta: f64, coords: Coords, build: F) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let names: Vec<String> = (0..point.len()).map(|i| format!("input{i}")).collect();
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.variable(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(GradCheckError::NotScalar(tape.value(out).len()));
        }
    }
    check(&names, point, delta, coords, |p| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.iter().map(|t| tape.variable(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let value = tape.value(out).data()[0];
        let grads = tape.backward(vec![(out, vec![1.0])])?;
        let g = vars
            .iter()
            .zip(p)
            .map(|(&v, t)| grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, g))
    })
}

/// Checks a scalar function of a parameter set with respect to every
/// parameter tensor.
pub fn check_params<F>(params: &ParamSet<f64>, delta: f64, coords: Coords, build: F) -> Result<GradCheckReport, GradCheckError>
where
    F: for<'s> Fn(&mut Tape<'s, f64>, &'s ParamSet<f64>) -> Result<Var, TensorError>,
{
    let names: Vec<String> = params.iter().map(|(_, n, _)| n.to_string()).collect();
    let point: Vec<Tensor<f64>> = params.iter().map(|(_, _, t)| t.clone()).collect();
    check(&names, &point, delta, coords, |p| {
        let mut set = params.clone();
        for (id, t) in params.ids().zip(p) {
            *set.get_mut(id) = t.clone();
        }
        let mut tape = Tape::new();
        let out = build(&mut tape, &set)?;
        let value = tape.value(out).data()[0];
        let grads = tape.backward(vec![(out, vec![1.0])])?.into_param_grads(set.len());
        let g = grads
            .into_iter()
            .zip(p)
            .map(|(g, t)| g.unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, g))
    })
}
