//! Small dense helpers shared by the model, filter and controllers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues above `-CLAMP_TOL` are treated as zero when a covariance is
/// PSD but singular.
pub const CLAMP_TOL: f64 = 1e-10;

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    sym.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

pub fn check_psd(name: &'static str, m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !is_symmetric(m, 1e-9) {
        return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
    }
    let min = min_eigenvalue(m);
    if min < -tol {
        return Err(Error::NotDefinite {
            name,
            kind: "positive semidefinite",
            min_eigenvalue: min,
        });
    }
    Ok(())
}

pub fn check_pd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if !is_symmetric(m, 1e-9) {
        return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::NotDefinite {
            name,
            kind: "positive definite",
            min_eigenvalue: min_eigenvalue(m),
        });
    }
    Ok(())
}

/// Solves `S X = rhs` for symmetric positive definite `S` by Cholesky.
///
/// When the factorization fails but the smallest eigenvalue is above
/// `-CLAMP_TOL`, falls back to a pseudo-solve with the non-positive part of
/// the spectrum dropped.
pub fn spd_solve(name: &'static str, s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = s.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let eig = s.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -CLAMP_TOL || !min.is_finite() {
        return Err(Error::NotDefinite {
            name,
            kind: "positive definite",
            min_eigenvalue: min,
        });
    }
    let max = eig.eigenvalues.amax();
    let cutoff = max * 1e-14;
    let inv_diag = eig
        .eigenvalues
        .map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_diag) * v.transpose() * rhs)
}

/// Spectral radius from the full (complex) eigenvalue set.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Returns `F` with `F Fᵀ = cov`, via Cholesky or, for singular PSD
/// matrices, a clamped eigendecomposition.
pub fn gaussian_factor(name: &'static str, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.unpack());
    }
    let eig = cov.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -CLAMP_TOL {
        return Err(Error::NotDefinite {
            name,
            kind: "positive semidefinite",
            min_eigenvalue: min,
        });
    }
    let sqrt_diag = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_diag))
}

/// `xᵀ M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_matches_inverse() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let rhs = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = spd_solve("s", &s, &rhs).unwrap();
        let expected = s.clone().try_inverse().unwrap() * &rhs;
        assert!((x - expected).amax() < 1e-14);
    }

    #[test]
    fn spd_solve_pseudo_on_singular() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let rhs = DMatrix::from_row_slice(2, 1, &[2.0, 5.0]);
        let x = spd_solve("s", &s, &rhs).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-14);
        assert_eq!(x[(1, 0)], 0.0);
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let rhs = DMatrix::from_element(2, 1, 1.0);
        assert!(spd_solve("s", &s, &rhs).is_err());
    }

    #[test]
    fn factor_of_singular_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = gaussian_factor("cov", &cov).unwrap();
        assert!((&f * f.transpose() - cov).amax() < 1e-12);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        assert!((spectral_radius(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trace_product_matches_product_trace() {
        let a = DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 + 0.5);
        let b = DMatrix::from_fn(2, 3, |i, j| (i as f64) - (j as f64) * 0.3);
        assert!((trace_product(&a, &b) - (&a * &b).trace()).abs() < 1e-12);
    }
}
