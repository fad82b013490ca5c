//! Cross-validated ridge readout from features to responses.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::seed;

pub const CV_FOLDS: usize = 5;
pub const TEST_FRACTION: f64 = 0.2;

/// Eight strengths log-spaced over `[1e-6, 1e3]`.
pub fn default_grid() -> Vec<f64> {
    (0..8).map(|k| 10f64.powf(-6.0 + 9.0 * k as f64 / 7.0)).collect()
}

/// Fitted map `N ≈ F W + b`.
#[derive(Debug, Clone)]
pub struct RidgeReadout {
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub strength: f64,
}

impl RidgeReadout {
    pub fn predict(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = features * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        out
    }
}

/// Spectral factorization of centered training features shared by every
/// strength: `W(λ) = A diag(1 / (e + λ)) Qᵀ Y` with `A = Fᵀ Q`, where
/// `Q, e` are the left singular vectors and squared singular values.
struct Spectral {
    a: DMatrix<f64>,
    e: Vec<f64>,
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    qty: DMatrix<f64>,
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()))
}

fn center(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

impl Spectral {
    fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Self {
        let x_mean = column_means(x);
        let y_mean = column_means(y);
        let xc = center(x, &x_mean);
        let yc = center(y, &y_mean);
        let (q, e) = if xc.nrows() > xc.ncols() {
            let svd = xc.clone().svd(true, false);
            let u = svd.u.expect("left singular vectors requested");
            (u, svd.singular_values.iter().map(|s| s * s).collect::<Vec<_>>())
        } else {
            let gram = &xc * xc.transpose();
            let eig = SymmetricEigen::new(gram);
            (eig.eigenvectors, eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect())
        };
        // Drop directions at round-off level so strength 0 is a pseudo-inverse.
        let top = e.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..e.len()).filter(|&i| e[i] > top * 1e-24 && e[i] > 0.0).collect();
        let q = q.select_columns(&keep);
        let e: Vec<f64> = keep.iter().map(|&i| e[i]).collect();
        let a = xc.transpose() * &q;
        let qty = q.transpose() * &yc;
        Self { a, e, x_mean, y_mean, qty }
    }

    fn readout(&self, strength: f64) -> RidgeReadout {
        let mut scaled = self.qty.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= self.e[i] + strength;
        }
        let weights = &self.a * scaled;
        let intercept = &self.y_mean - weights.transpose() * &self.x_mean;
        RidgeReadout { weights, intercept, strength }
    }
}

/// Ridge fit at a fixed strength (intercept unpenalized).
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, strength: f64) -> RidgeReadout {
    Spectral::new(x, y).readout(strength)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Summary {
    /// Uniform mean over neurons with non-constant responses.
    pub mean: f64,
    pub per_neuron: Vec<Option<f64>>,
    /// Neurons skipped because their responses were constant.
    pub excluded: usize,
}

/// Per-neuron `1 - SS_res / SS_tot`, averaged over neurons.
pub fn r2_score(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> R2Summary {
    let mut per = Vec::with_capacity(truth.ncols());
    for k in 0..truth.ncols() {
        let t = truth.column(k);
        let mean = t.mean();
        let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = t.iter().zip(pred.column(k).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        per.push((ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot));
    }
    let valid: Vec<f64> = per.iter().flatten().copied().collect();
    R2Summary {
        mean: if valid.is_empty() { f64::NAN } else { valid.iter().sum::<f64>() / valid.len() as f64 },
        excluded: per.len() - valid.len(),
        per_neuron: per,
    }
}

fn mse(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> f64 {
    (truth - pred).iter().map(|v| v * v).sum::<f64>() / truth.len() as f64
}

/// Disjoint, covering train/test index sets from a seeded shuffle.
pub fn train_test_split(rows: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_test = ((rows as f64 * test_fraction).round() as usize).clamp(1, rows.saturating_sub(2).max(1));
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    (train, test)
}

#[derive(Debug, Clone)]
pub struct RidgeReport {
    pub readout: RidgeReadout,
    pub test_r2: R2Summary,
    /// Mean CV squared error per grid strength.
    pub cv_mse: Vec<f64>,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Picks the strength by `CV_FOLDS`-fold CV on the training rows, refits
/// on all of them and scores held-out R².
pub fn ridge_fit_predict(features: &DMatrix<f64>, responses: &DMatrix<f64>, train: &[usize], test: &[usize], grid: &[f64]) -> Result<RidgeReport, EvalError> {
    if features.nrows() != responses.nrows() {
        return Err(EvalError::Data(format!("{} feature rows but {} response rows", features.nrows(), responses.nrows())));
    }
    if grid.is_empty() {
        return Err(EvalError::Config("strength grid is empty".into()));
    }
    if train.len() < 2 || test.is_empty() {
        return Err(EvalError::Data(format!("need >= 2 training rows and >= 1 test row (got {} and {})", train.len(), test.len())));
    }
    let xs = features.select_rows(train);
    let ys = responses.select_rows(train);
    let folds = CV_FOLDS.min(train.len());
    let mut cv_mse = vec![0.0; grid.len()];
    if folds >= 2 {
        for f in 0..folds {
            let fit_rows: Vec<usize> = (0..train.len()).filter(|i| i % folds != f).collect();
            let val_rows: Vec<usize> = (0..train.len()).filter(|i| i % folds == f).collect();
            let spectral = Spectral::new(&xs.select_rows(&fit_rows), &ys.select_rows(&fit_rows));
            let xv = xs.select_rows(&val_rows);
            let yv = ys.select_rows(&val_rows);
            for (g, &s) in grid.iter().enumerate() {
                cv_mse[g] += mse(&yv, &spectral.readout(s).predict(&xv)) / folds as f64;
            }
        }
    }
    let best = (0..grid.len()).fold(0, |b, g| if cv_mse[g] < cv_mse[b] { g } else { b });
    let readout = ridge_fit(&xs, &ys, grid[best]);
    let xt = features.select_rows(test);
    let yt = responses.select_rows(test);
    let test_r2 = r2_score(&yt, &readout.predict(&xt));
    Ok(RidgeReport {
        readout,
        test_r2,
        cv_mse,
        train_rows: train.len(),
        test_rows: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spans_the_range() {
        let g = default_grid();
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-6).abs() < 1e-18 && (g[7] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (tr, te) = train_test_split(500, 0.2, 9);
        assert_eq!((tr.len(), te.len()), (400, 100));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn wide_features_match_tall_solution() {
        // More columns than rows: the Gram path against the dual closed form.
        let x = DMatrix::from_fn(6, 9, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let y = DMatrix::from_fn(6, 2, |i, j| (i as f64 - 2.0) * (j as f64 + 1.0));
        let lam = 0.3;
        let r = ridge_fit(&x, &y, lam);
        let xm = column_means(&x);
        let ym = column_means(&y);
        let xc = center(&x, &xm);
        let yc = center(&y, &ym);
        let k = &xc * xc.transpose() + DMatrix::identity(6, 6) * lam;
        let w = xc.transpose() * k.try_inverse().unwrap() * yc;
        assert!((r.weights - w).abs().max() < 1e-9);
    }
}
