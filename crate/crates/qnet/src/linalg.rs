//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Solves `x A = b` for the row vector `x`.
pub fn solve_row_system(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.transpose()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// Solves `A x = b`.
pub fn solve_col_system(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// `max_ij |a_ij - b_ij|`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Relative deviation `max|a-b| / max(1, max|b|)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs_diff(a, b) / b.amax().max(1.0)
}

/// Smallest nonzero decay rate of a (sub)generator-like matrix: the minimum
/// `|Re(lambda)|` over eigenvalues with `Re(lambda) < -tol`. Used to pick
/// horizons that are "effectively stationary".
pub fn spectral_gap(a: &DMatrix<f64>) -> f64 {
    let eigs = a.complex_eigenvalues();
    eigs.iter()
        .map(|e| -e.re)
        .filter(|&g| g > 1e-9)
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &e| m.min(e))
}

/// Checks that a symmetric matrix is PSD within `tol` on the smallest
/// eigenvalue.
pub fn assert_psd(a: &DMatrix<f64>, tol: f64) -> Result<()> {
    let min = min_symmetric_eigenvalue(a);
    if min < -tol {
        return Err(Error::Numerical(format!(
            "matrix not positive semidefinite: min eigenvalue {min}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn row_system_solves() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        let x = solve_row_system(&a, &b).unwrap();
        // x A = b with symmetric A.
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(x[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn gap_of_two_state_chain() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        assert_relative_eq!(spectral_gap(&q), 4.0, max_relative = 1e-10);
    }
}
