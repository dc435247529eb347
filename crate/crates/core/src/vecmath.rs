//! Small dense-vector helpers shared by the numeric modules. All f64.

use crate::error::{GapError, Result};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance on the input norm of operations that require unit vectors.
pub const UNIT_TOL: f64 = 1e-5;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-length copy of `v`; `row` only labels the error.
pub fn normalized(v: &[f64], row: usize) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n >= ZERO_NORM) {
        return Err(GapError::DegenerateVector { row });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn normalize_in_place(v: &mut [f64], row: usize) -> Result<()> {
    let n = norm(v);
    if !(n >= ZERO_NORM) {
        return Err(GapError::DegenerateVector { row });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

pub(crate) fn check_unit(v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(GapError::Parameter(format!(
            "expected a unit vector, got norm {n}"
        )));
    }
    Ok(())
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(GapError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Column means of a set of equal-length rows.
pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    let n = rows.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Sample covariance (divisor n - 1) of equal-length rows.
pub fn covariance(rows: &[Vec<f64>], mean: &[f64]) -> nalgebra::DMatrix<f64> {
    let dim = mean.len();
    let mut cov = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for r in rows {
        for ((c, x), m) in centered.iter_mut().zip(r).zip(mean) {
            *c = x - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in 0..=i {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (rows.len() as f64 - 1.0).max(1.0);
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_divisor_is_n_minus_one() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.0]];
        let m = mean_rows(&rows);
        let c = covariance(&rows, &m);
        assert_eq!(m, vec![0.0, 0.0]);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(c[(1, 1)], 0.0);
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        assert!(matches!(
            normalized(&[0.0, 0.0], 4),
            Err(GapError::DegenerateVector { row: 4 })
        ));
    }

    #[test]
    fn std_of_single_value_is_zero() {
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
    }
}
