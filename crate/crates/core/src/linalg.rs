//! Small dense solvers for normal equations.

use nalgebra::{DMatrix, DVector, Matrix6, SymmetricEigen, Vector6};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Minimum-norm solution of `A x = b` for symmetric positive semidefinite
/// `A`: directions the system does not constrain get no update.
pub fn solve_psd_pinv6(a: &Matrix6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let eig = SymmetricEigen::new(*a);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut x = Vector6::zeros();
    if !(max > 0.0) {
        return x;
    }
    for i in 0..6 {
        let l = eig.eigenvalues[i];
        if l > RANK_TOLERANCE * max {
            let v = eig.eigenvectors.column(i);
            x += v * (v.dot(b) / l);
        }
    }
    x
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
/// Fails with `SingularSystem` when `A` is not numerically positive definite.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::SingularSystem(format!("{what}: normal equations are not positive definite")))?;
    // Cholesky succeeds on some nearly singular matrices; reject pivots that
    // are negligible relative to the system scale.
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * max_diag) {
        return Err(Error::SingularSystem(format!(
            "{what}: rank-deficient normal equations (pivot {min_pivot:e})"
        )));
    }
    Ok(chol.solve(b))
}
