//! Small dense-matrix helpers shared by the filters.
//!
//! Everything in the tracking problem is 4×4, so the fixed-size nalgebra
//! types carry the state. The sigma-point code works in arbitrary dimension
//! and uses the dynamic types.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen, Vector4};

use crate::error::{Error, Result};

pub type Vec4 = Vector4<f64>;
pub type Mat4 = Matrix4<f64>;

/// Jitter ladder for Cholesky, in units of `trace / n`.
const JITTER_STEPS: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

pub fn symmetrize4(m: &Mat4) -> Mat4 {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse by LU with partial pivoting. Fails on exact or numerical
/// singularity (non-finite result).
pub fn inverse4(m: &Mat4, what: &'static str) -> Result<Mat4> {
    let inv = m.lu().try_inverse().ok_or(Error::Singular(what))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what))
    }
}

pub fn inverse_dyn(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let inv = m.clone().lu().try_inverse().ok_or(Error::Singular(what))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what))
    }
}

/// Lower-triangular square-root factor `L` with `L Lᵗ ≈ cov`.
///
/// A zero matrix yields a zero factor. Otherwise plain Cholesky is tried
/// first, then with diagonal jitter `{1e-12, 1e-10, 1e-8} · trace/n`.
pub fn sqrt_factor(cov: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition { what });
    }
    let sym = symmetrize(cov);
    let scale = sym.trace().abs() / n as f64;
    for step in JITTER_STEPS {
        let mut jittered = sym.clone();
        for i in 0..n {
            jittered[(i, i)] += step * scale;
        }
        if let Some(chol) = jittered.cholesky() {
            return Ok(chol.l());
        }
    }
    Err(Error::Decomposition { what })
}

pub fn sqrt_factor4(cov: &Mat4, what: &'static str) -> Result<Mat4> {
    let l = sqrt_factor(&DMatrix::from_column_slice(4, 4, cov.as_slice()), what)?;
    Ok(Mat4::from_column_slice(l.as_slice()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `true` when no eigenvalue of the symmetric part falls below
/// `-1e-9 · |trace|`.
pub fn is_numerically_psd(m: &DMatrix<f64>) -> bool {
    let tol = 1e-9 * m.trace().abs();
    min_eigenvalue(m) >= -tol
}

/// Symmetrizes `m` and repairs round-off level indefiniteness.
///
/// Eigenvalues below `-1e-9 · trace` are a hard [`Error::Conditioning`].
/// Eigenvalues between that and `1e-12 · trace` are lifted to
/// `1e-12 · trace`, so the result is invertible.
pub fn repair_psd4(m: &Mat4, what: &'static str) -> Result<Mat4> {
    let sym = symmetrize4(m);
    let trace = sym.trace();
    if trace == 0.0 && sym.iter().all(|v| *v == 0.0) {
        return Ok(sym);
    }
    if !trace.is_finite() || trace < 0.0 {
        return Err(Error::Conditioning {
            what,
            min_eigenvalue: f64::NAN,
            trace,
        });
    }
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -1e-9 * trace {
        return Err(Error::Conditioning {
            what,
            min_eigenvalue: min,
            trace,
        });
    }
    let floor = 1e-12 * trace;
    if min >= floor {
        return Ok(sym);
    }
    let lifted = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = eig.eigenvectors * Mat4::from_diagonal(&lifted) * eig.eigenvectors.transpose();
    Ok(symmetrize4(&rebuilt))
}

pub fn to_dvector(v: &Vec4) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

pub fn to_dmatrix(m: &Mat4) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 4, m.as_slice())
}

/// Panics if `v` is not 4-dimensional.
pub fn to_vec4(v: &DVector<f64>) -> Vec4 {
    Vec4::from_column_slice(v.as_slice())
}

/// Panics if `m` is not 4×4.
pub fn to_mat4(m: &DMatrix<f64>) -> Mat4 {
    Mat4::from_column_slice(m.as_slice())
}
