//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Draws one sample of CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hermitian_inverse(m: &CMatrix) -> Result<CMatrix> {
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numerical(format!("{0}x{0} matrix is not numerically positive definite", m.nrows())))?;
    let inv = chol.inverse();
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite matrix inverse".into()));
    }
    Ok(inv)
}

/// Principal square root of a Hermitian PSD matrix. Negative eigenvalues
/// produced by round-off are clipped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    if is_scaled_identity(m) {
        return identity(n) * C64::new(m[(0, 0)].re.max(0.0).sqrt(), 0.0);
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let roots = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)));
    let q = &eig.eigenvectors;
    q * CMatrix::from_diagonal(&roots) * q.adjoint()
}

fn is_scaled_identity(m: &CMatrix) -> bool {
    let d = m[(0, 0)];
    d.im == 0.0
        && m.iter().enumerate().all(|(k, &z)| {
            let (i, j) = (k % m.nrows(), k / m.nrows());
            if i == j {
                z == d
            } else {
                z == C64::new(0.0, 0.0)
            }
        })
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && (m - m.adjoint()).norm() <= tol * m.norm().max(f64::MIN_POSITIVE)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn is_psd(m: &CMatrix, tol: f64) -> bool {
    is_hermitian(m, 1e-9) && min_eigenvalue(m) >= -tol * m.norm().max(f64::MIN_POSITIVE)
}

pub fn trace_re(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_hermitian_matrix() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.5, 0.5), C64::new(0.5, -0.5), C64::new(1.5, 0.0)],
        );
        let inv = hermitian_inverse(&m).unwrap();
        let prod = &m * &inv;
        assert!((prod - identity(2)).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = CMatrix::zeros(2, 2);
        assert!(matches!(hermitian_inverse(&m), Err(Error::Numerical(_))));
    }

    #[test]
    fn square_root_squares_back() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.3, -0.4), C64::new(0.3, 0.4), C64::new(1.0, 0.0)],
        );
        let s = psd_sqrt(&m);
        assert!((&s * &s - &m).norm() < 1e-12);
        let d = identity(3) * C64::new(4.0, 0.0);
        assert_eq!(psd_sqrt(&d)[(1, 1)], C64::new(2.0, 0.0));
    }
}
