use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves `a x = b` for symmetric positive (semi-)definite `a`.
///
/// Cholesky first; falls back to LU when `a` is only semi-definite.
pub(crate) fn solve_symmetric(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    what: &str,
) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// `a + lambda * I`.
pub(crate) fn add_ridge(mut a: DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    for i in 0..a.nrows().min(a.ncols()) {
        a[(i, i)] += lambda;
    }
    a
}

/// Largest eigenvalue of a symmetric matrix.
pub(crate) fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Applies [`softmax_in_place`] to every row of `logits`.
pub(crate) fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    let mut buf = vec![0.0; out.ncols()];
    for r in 0..out.nrows() {
        for (c, b) in buf.iter_mut().enumerate() {
            *b = out[(r, c)];
        }
        softmax_in_place(&mut buf);
        for (c, b) in buf.iter().enumerate() {
            out[(r, c)] = *b;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = solve_symmetric(&a, &b, "test").unwrap();
        assert!((&a * &x - &b).norm() < 1e-12);
    }

    #[test]
    fn singular_is_reported() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            solve_symmetric(&a, &b, "z"),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn softmax_is_stable() {
        let mut r = [1000.0, 1000.0];
        softmax_in_place(&mut r);
        assert_eq!(r, [0.5, 0.5]);
    }
}
