//! Representational dissimilarity matrices and their rank correlation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Upper-triangular `1 - pearson(row_i, row_j)`, row-major over `i < j`;
/// `None` for pairs involving a constant row.
pub fn rdm_upper(m: &DMatrix<f64>) -> Vec<Option<f64>> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    let n = rows.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(pearson(&rows[i], &rows[j]).map(|r| 1.0 - r));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdmComparison {
    pub correlation: f64,
    pub pairs: usize,
    /// Pairs dropped because a row was constant in either matrix.
    pub excluded_pairs: usize,
}

/// Spearman correlation between the two RDMs' off-diagonal entries.
pub fn rdm_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<RdmComparison, EvalError> {
    if a.nrows() != b.nrows() {
        return Err(EvalError::Data(format!("RDM inputs have {} and {} rows", a.nrows(), b.nrows())));
    }
    if a.nrows() < 3 {
        return Err(EvalError::Data(format!("RDM comparison needs at least 3 rows, got {}", a.nrows())));
    }
    let (ra, rb) = (rdm_upper(a), rdm_upper(b));
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (p, q) in ra.iter().zip(&rb) {
        if let (Some(p), Some(q)) = (p, q) {
            xa.push(*p);
            xb.push(*q);
        }
    }
    let excluded_pairs = ra.len() - xa.len();
    let correlation = if xa.len() < 2 { None } else { spearman(&xa, &xb) };
    let correlation = correlation.ok_or_else(|| EvalError::Data("RDM has fewer than two distinct dissimilarities".into()))?;
    Ok(RdmComparison {
        correlation,
        pairs: xa.len(),
        excluded_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn monotone_transform_keeps_spearman_at_one() {
        let a = [0.1, 0.5, 0.2, 0.9, 0.4];
        let b: Vec<f64> = a.iter().map(|x: &f64| x.powi(3) + 2.0).collect();
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_rows_are_excluded() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 3.0, 2.0, 2.0, 2.0, 3.0, 1.0, 0.0, 0.5, 0.7, 0.1]);
        let r = rdm_correlation(&m, &m).unwrap();
        assert_eq!(r.excluded_pairs, 3);
        assert_eq!(r.pairs, 3);
    }
}
