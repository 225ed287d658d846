//! Fully symmetric degree-5 cubature for Gaussian expectations.
//!
//! The rule in `n` dimensions uses `2n² + 1` points on the unit-Gaussian
//! lattice `{0, ±√3 eᵢ, ±√3 eᵢ ± √3 eⱼ}`. Weights follow from matching the
//! moments `E[uᵢ²] = 1`, `E[uᵢ⁴] = 3` and `E[uᵢ² uⱼ²] = 1`:
//!
//! | generator          | count        | weight               |
//! |--------------------|--------------|----------------------|
//! | `0`                | 1            | `1 + (n² − 7n)/18`   |
//! | `±√3 eᵢ`           | `2n`         | `(4 − n)/18`         |
//! | `±√3 eᵢ ± √3 eⱼ`   | `2n(n − 1)`  | `1/36`               |
//!
//! Odd moments vanish by symmetry. For `n > 4` the axis weights turn
//! negative, which is why [`TransformedStats`] exposes a PSD check instead of
//! assuming one.

use nalgebra::{DMatrix, DVector};

use crate::coordmap::CoordinateMap;
use crate::error::{Error, Result};
use crate::linalg::{
    is_numerically_psd, sqrt_factor, symmetrize, to_dmatrix, to_dvector, Mat4, Vec4,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRule {
    dim: usize,
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl SigmaRule {
    /// Degree-5 fully symmetric rule for the standard Gaussian in `n`
    /// dimensions.
    pub fn degree5(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain(
                "sigma rule dimension must be at least 1".into(),
            ));
        }
        let nf = n as f64;
        let lambda = 3.0_f64.sqrt();
        let w_center = 1.0 + (nf * nf - 7.0 * nf) / 18.0;
        let w_axis = (4.0 - nf) / 18.0;
        let w_pair = 1.0 / 36.0;

        let mut points = Vec::with_capacity(2 * n * n + 1);
        let mut weights = Vec::with_capacity(2 * n * n + 1);

        points.push(DVector::zeros(n));
        weights.push(w_center);

        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut p = DVector::zeros(n);
                p[i] = sign * lambda;
                points.push(p);
                weights.push(w_axis);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut p = DVector::zeros(n);
                    p[i] = si * lambda;
                    p[j] = sj * lambda;
                    points.push(p);
                    weights.push(w_pair);
                }
            }
        }
        Ok(Self {
            dim: n,
            points,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unit-Gaussian points.
    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Points mapped onto `N(mean, cov)` through the Cholesky factor.
    pub fn scaled_points(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<Vec<DVector<f64>>> {
        if mean.len() != self.dim || cov.shape() != (self.dim, self.dim) {
            return Err(Error::Domain(format!(
                "rule dimension {} does not match mean {} / covariance {:?}",
                self.dim,
                mean.len(),
                cov.shape()
            )));
        }
        let l = sqrt_factor(cov, "sigma-point covariance")?;
        Ok(self.points.iter().map(|u| mean + &l * u).collect())
    }

    /// Weighted sample mean and covariance of `f` over `N(mean, cov)`.
    pub fn transform<F>(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        f: F,
    ) -> Result<TransformedStats>
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let mapped = self
            .scaled_points(mean, cov)?
            .iter()
            .map(f)
            .collect::<Result<Vec<_>>>()?;
        Ok(weighted_stats(&mapped, &self.weights))
    }
}

/// Mean and covariance of a transformed sigma-point set.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl TransformedStats {
    /// `E[y]`.
    pub fn first_moment(&self) -> &DVector<f64> {
        &self.mean
    }

    /// `E[y yᵗ] ≈ C + μ μᵗ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.covariance + &self.mean * self.mean.transpose()
    }

    /// Covariance passes the `-1e-9 · trace` eigenvalue test.
    pub fn is_numerically_psd(&self) -> bool {
        is_numerically_psd(&self.covariance)
    }

    pub fn mean4(&self) -> Vec4 {
        Vec4::from_column_slice(self.mean.as_slice())
    }

    pub fn covariance4(&self) -> Mat4 {
        Mat4::from_column_slice(self.covariance.as_slice())
    }
}

fn weighted_stats(ys: &[DVector<f64>], weights: &[f64]) -> TransformedStats {
    let dim = ys[0].len();
    let mut mean = DVector::zeros(dim);
    for (y, w) in ys.iter().zip(weights) {
        mean.axpy(*w, y, 1.0);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (y, w) in ys.iter().zip(weights) {
        let d = y - &mean;
        cov.ger(*w, &d, &d, 1.0);
    }
    TransformedStats {
        mean,
        covariance: symmetrize(&cov),
    }
}

/// Statistics of `y(u) = g(h(x̂) − u)` for `u ~ N(0, cov_u)`.
///
/// With `cov_u = P_z` this is the predicted-state error pushed through the
/// conversion; with `cov_u = P_z + R_z` it is the combined error.
pub fn expectations_of_converted(
    rule: &SigmaRule,
    predicted: &Vec4,
    cov_u: &Mat4,
    map: &dyn CoordinateMap,
) -> Result<TransformedStats> {
    let center = map.to_measurement(predicted)?;
    rule.transform(&DVector::zeros(4), &to_dmatrix(cov_u), |u| {
        let z = center - Vec4::from_column_slice(u.as_slice());
        Ok(to_dvector(&map.to_state(&z)))
    })
}
