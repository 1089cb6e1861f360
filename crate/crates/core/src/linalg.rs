//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_CONDITION: f64 = 1e12;

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Fails with [`Error::Singular`] when the condition number exceeds 1e12.
pub fn check_conditioning(m: &DMatrix<f64>) -> Result<()> {
    let condition = condition_number(m);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::Singular { condition });
    }
    Ok(())
}

/// Cholesky factor of a symmetric PSD matrix, adding jitter 1e-10·trace/r to
/// the diagonal if the plain factorisation fails.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let r = m.nrows().max(1) as f64;
    let jitter = 1e-10 * m.trace().abs() / r;
    log::warn!("Cholesky factorisation failed; retrying with diagonal jitter {jitter:.3e}");
    let mut j = m.clone();
    for i in 0..j.nrows() {
        j[(i, i)] += jitter;
    }
    j.cholesky()
        .ok_or_else(|| Error::Numeric("matrix is not positive definite even after jitter".into()))
}

/// Solves `m x = rhs` for a well-conditioned symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    check_conditioning(m)?;
    Ok(cholesky_with_jitter(m)?.solve(rhs))
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_conditioning(m)?;
    Ok(cholesky_with_jitter(m)?.inverse())
}

/// Copies the upper triangle onto the lower one so the result is exactly
/// symmetric.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
}
