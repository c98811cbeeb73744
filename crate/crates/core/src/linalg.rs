//! Thin helpers over `nalgebra` for the complex vectors and matrices used
//! throughout the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Unconjugated inner product `aᵀb`.
pub fn dotu(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = ZERO;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Conjugated inner product `aᴴb`.
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = ZERO;
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute norm when `b` vanishes.
pub fn frobenius_rel(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

pub fn is_hermitian(m: &CMatrix, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.adjoint()).norm() <= rel_tol * scale
}

/// Solves `m x = rhs` for Hermitian positive (semi)definite `m`.
///
/// When the Cholesky factorization breaks down, a diagonal ridge starting at
/// `ridge_floor · tr(m)/n` is added and grown by decades until it succeeds.
pub fn hermitian_solve(m: &CMatrix, rhs: &CVector, ridge_floor: f64) -> Result<CVector> {
    let n = m.nrows();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rhs.len(),
        });
    }
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let scale = (m.trace().re / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut ridge = ridge_floor.max(f64::EPSILON) * scale;
    for _ in 0..12 {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += ridge;
        }
        if let Some(chol) = shifted.cholesky() {
            return Ok(chol.solve(rhs));
        }
        ridge *= 10.0;
    }
    Err(Error::Numerical(
        "Hermitian system not positive definite after ridge regularization".into(),
    ))
}

/// Outer product `a bᴴ`.
pub fn outer_h(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}
