//! Small dense linear-algebra helpers shared by the density modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric matrix square root via eigendecomposition.
///
/// Fails if the input has a non-positive eigenvalue.
pub fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (a + a.transpose());
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// Eigenvalue range (min, max) of a symmetric matrix.
pub fn sym_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let sym = 0.5 * (a + a.transpose());
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Cholesky-backed inverse and log-determinant of an SPD matrix.
pub fn spd_inverse_logdet(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let sym = 0.5 * (a + a.transpose());
    let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((chol.inverse(), logdet))
}

/// Density of N(mean, cov) at `z`.
pub fn gaussian_pdf(mean: &DVector<f64>, cov: &DMatrix<f64>, z: &DVector<f64>) -> Result<f64> {
    let d = mean.len() as f64;
    let (inv, logdet) = spd_inverse_logdet(cov)?;
    let u = z - mean;
    let quad = (&inv * &u).dot(&u);
    Ok((-0.5 * quad - 0.5 * logdet - 0.5 * d * (2.0 * std::f64::consts::PI).ln()).exp())
}
