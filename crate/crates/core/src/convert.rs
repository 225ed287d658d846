//! Debiased converted measurements and their rank-`M` precision matrices.
//!
//! The pipeline for one measurement, given the predicted state `x̂` and
//! covariance `P`:
//!
//! 1. Fill the unobserved measurement coordinates from `h(x̂)`.
//! 2. Map `P` into measurement coordinates: `P_z = J_h P J_hᵗ`.
//! 3. Push `u ~ N(0, P_z)` and `v ~ N(0, P_z + R_z)` through
//!    `y(u) = g(h(x̂) − u)` with the sigma-point rule.
//! 4. Debias `g(z)` additively (`b = μ_x − μ_v`) or multiplicatively
//!    (`B = diag(μ_x / μ_v)`, or a closed form supplied by the map).
//! 5. Estimate the converted covariance `R̂_x` from the two sigma-point
//!    covariances.
//! 6. Zero the information of the unobserved coordinates in measurement
//!    space and map the precision back to state space.

use nalgebra::DMatrix;

use crate::coordmap::{check_observed_count, partition_inverse_transpose, CoordinateMap, DIM};
use crate::error::{Error, Result};
use crate::linalg::{inverse4, repair_psd4, symmetrize4, Mat4, Vec4};
use crate::sigma::{expectations_of_converted, SigmaRule, TransformedStats};

/// How the raw converted measurement is debiased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DebiasMode {
    /// Multiplicative, with `B` from the map's closed form (falls back to
    /// the numerical ratio when the map has none).
    #[default]
    ClosedForm,
    /// Multiplicative, `B = diag(μ_x) / diag(μ_v)` from sigma points.
    NumericalMultiplicative,
    /// Additive, `b = μ_x − μ_v` from sigma points.
    NumericalAdditive,
}

/// A resolved debiasing function.
#[derive(Debug, Clone, PartialEq)]
pub enum Debias {
    Additive(Vec4),
    Multiplicative(Mat4),
}

impl Debias {
    pub fn apply(&self, raw: &Vec4) -> Vec4 {
        match self {
            Debias::Additive(b) => raw + b,
            Debias::Multiplicative(b) => b * raw,
        }
    }
}

/// Full measurement vector with its observed count and noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    /// Observed entries first, unobserved entries filled from prediction.
    pub z_full: Vec4,
    pub observed: usize,
    pub r_z: Mat4,
}

/// Debiased converted measurement and its precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedMeasurement {
    pub z_bar: Vec4,
    /// Symmetric PSD, rank equal to the observed count.
    pub precision: Mat4,
}

/// Polar measurement noise covariance: range couples to range rate through
/// `ρ`; bearing and cross-range rate are independent.
pub fn polar_noise_covariance(
    sigma_r: f64,
    sigma_alpha: f64,
    sigma_rdot: f64,
    sigma_cdot: f64,
    rho: f64,
) -> Mat4 {
    let c = rho * sigma_r * sigma_rdot;
    #[rustfmt::skip]
    let r = Mat4::new(
        sigma_r * sigma_r, 0.0,                       c,                       0.0,
        0.0,               sigma_alpha * sigma_alpha, 0.0,                     0.0,
        c,                 0.0,                       sigma_rdot * sigma_rdot, 0.0,
        0.0,               0.0,                       0.0,                     sigma_cdot * sigma_cdot,
    );
    r
}

/// Full measurement vector: observed entries from `z_m`, the rest from
/// `h(predicted)`.
pub fn augment_unobserved(z_m: &[f64], predicted: &Vec4, map: &dyn CoordinateMap) -> Result<Vec4> {
    check_observed_count(z_m.len())?;
    let mut z = map.to_measurement(predicted)?;
    for (slot, v) in z.iter_mut().zip(z_m) {
        *slot = *v;
    }
    Ok(z)
}

/// `P_z = J_h P_x J_hᵗ` at the predicted state.
pub fn predicted_measurement_covariance(
    p_x: &Mat4,
    predicted: &Vec4,
    map: &dyn CoordinateMap,
) -> Result<Mat4> {
    let jh = map.jacobian_h(predicted)?;
    Ok(symmetrize4(&(jh * p_x * jh.transpose())))
}

/// `B = diag(μ_v)⁻¹ ∘ diag(μ_x)`.
///
/// A coordinate whose `|μ_v|` is below `1e-12 · ‖μ_v‖` gets ratio 1.
pub fn debias_multiplicative(mu_x: &Vec4, mu_v: &Vec4) -> Mat4 {
    let floor = 1e-12 * mu_v.norm();
    let diag = Vec4::from_fn(|i, _| {
        if mu_v[i].abs() <= floor || mu_v[i] == 0.0 {
            1.0
        } else {
            mu_x[i] / mu_v[i]
        }
    });
    Mat4::from_diagonal(&diag)
}

/// `b = μ_x − μ_v`.
pub fn debias_additive(mu_x: &Vec4, mu_v: &Vec4) -> Vec4 {
    mu_x - mu_v
}

/// Converted-measurement covariance estimate `R̂_x`.
///
/// Additive: `C̄_v − C̄_x`. Multiplicative: `B C̄_v B − C̄_x`. The result is
/// symmetrized; eigenvalues below `-1e-9 · trace` raise
/// [`Error::Conditioning`], smaller negative excursions are lifted.
pub fn converted_covariance(
    stats_x: &TransformedStats,
    stats_v: &TransformedStats,
    debias: &Debias,
) -> Result<Mat4> {
    let cx = stats_x.covariance4();
    let cv = stats_v.covariance4();
    let raw = match debias {
        Debias::Additive(_) => cv - cx,
        Debias::Multiplicative(b) => b * cv * b - cx,
    };
    repair_psd4(&raw, "converted measurement covariance")
}

/// Measurement-frame precision with unobserved rows and columns zeroed:
/// `W (J_h⁻ᵗ R̂_x⁻¹ J_h⁻¹) Wᵗ`.
pub fn measurement_frame_precision(
    r_hat_x: &Mat4,
    map: &dyn CoordinateMap,
    predicted: &Vec4,
    m: usize,
) -> Result<Mat4> {
    check_observed_count(m)?;
    let precision_x = inverse4(r_hat_x, "converted measurement covariance")?;
    // J_h⁻¹ = J_g at h(x̂).
    let jg = map.jacobian_g(&map.to_measurement(predicted)?);
    let mut bracket = jg.transpose() * precision_x * jg;
    for i in m..DIM {
        for j in 0..DIM {
            bracket[(i, j)] = 0.0;
            bracket[(j, i)] = 0.0;
        }
    }
    Ok(bracket)
}

/// Information-zeroed precision `R̄_x⁻¹ = J_g⁻ᵗ [W (J_h⁻ᵗ R̂_x⁻¹ J_h⁻¹) Wᵗ] J_g⁻¹`.
///
/// With every coordinate observed there is nothing to zero and the result
/// is `R̂_x⁻¹` itself.
pub fn zero_information(
    r_hat_x: &Mat4,
    map: &dyn CoordinateMap,
    predicted: &Vec4,
    m: usize,
) -> Result<Mat4> {
    check_observed_count(m)?;
    if m == DIM {
        return inverse4(r_hat_x, "converted measurement covariance");
    }
    let bracket = measurement_frame_precision(r_hat_x, map, predicted, m)?;
    let jg_inv = map.jacobian_h(predicted)?;
    Ok(symmetrize4(&(jg_inv.transpose() * bracket * jg_inv)))
}

/// Block form of the zeroed precision built from the partition of `J_g⁻ᵗ`:
/// only the observed column blocks of `J_g⁻ᵗ` survive.
pub fn zero_information_blockwise(
    r_hat_x: &Mat4,
    map: &dyn CoordinateMap,
    predicted: &Vec4,
    m: usize,
) -> Result<Mat4> {
    let bracket = measurement_frame_precision(r_hat_x, map, predicted, m)?;
    let blocks = partition_inverse_transpose(&map.jacobian_h(predicted)?, m)?;
    let rzm = DMatrix::from_fn(m, m, |i, j| bracket[(i, j)]);
    let top = &blocks.observed;
    let bottom = &blocks.unobserved_observed;
    let tl = top * &rzm * top.transpose();
    let tr = top * &rzm * bottom.transpose();
    let bl = bottom * &rzm * top.transpose();
    let br = bottom * &rzm * bottom.transpose();
    Ok(Mat4::from_fn(|i, j| match (i < m, j < m) {
        (true, true) => tl[(i, j)],
        (true, false) => tr[(i, j - m)],
        (false, true) => bl[(i - m, j)],
        (false, false) => br[(i - m, j - m)],
    }))
}

/// Everything needed to turn a raw observation into a converted measurement.
#[derive(Clone, Copy)]
pub struct SensorModel<'a> {
    pub map: &'a dyn CoordinateMap,
    /// Full `N×N` measurement noise covariance, including the assumed
    /// spreads of unobserved coordinates.
    pub r_z: Mat4,
    pub observed: usize,
    pub debias: DebiasMode,
}

impl<'a> SensorModel<'a> {
    pub fn new(
        map: &'a dyn CoordinateMap,
        r_z: Mat4,
        observed: usize,
        debias: DebiasMode,
    ) -> Result<Self> {
        check_observed_count(observed)?;
        Ok(Self {
            map,
            r_z,
            observed,
            debias,
        })
    }

    /// Leading `M×M` block of `R_z`.
    pub fn observed_noise(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.observed, self.observed, |i, j| self.r_z[(i, j)])
    }
}

/// One full conversion at the predicted state `(mean, cov)`.
pub fn convert_measurement(
    z_m: &[f64],
    predicted_mean: &Vec4,
    predicted_cov: &Mat4,
    sensor: &SensorModel<'_>,
    rule: &SigmaRule,
) -> Result<ConvertedMeasurement> {
    if z_m.len() != sensor.observed {
        return Err(Error::Domain(format!(
            "expected {} observed coordinates, got {}",
            sensor.observed,
            z_m.len()
        )));
    }
    let map = sensor.map;
    let z_full = augment_unobserved(z_m, predicted_mean, map)?;
    let p_z = predicted_measurement_covariance(predicted_cov, predicted_mean, map)?;
    let stats_x = expectations_of_converted(rule, predicted_mean, &p_z, map)?;
    let stats_v = expectations_of_converted(rule, predicted_mean, &(p_z + sensor.r_z), map)?;

    let debias = resolve_debias(sensor, &stats_x, &stats_v);
    let z_bar = debias.apply(&map.to_state(&z_full));
    let r_hat_x = converted_covariance(&stats_x, &stats_v, &debias)?;
    let precision = zero_information(&r_hat_x, map, predicted_mean, sensor.observed)?;
    Ok(ConvertedMeasurement { z_bar, precision })
}

fn resolve_debias(
    sensor: &SensorModel<'_>,
    stats_x: &TransformedStats,
    stats_v: &TransformedStats,
) -> Debias {
    let (mu_x, mu_v) = (stats_x.mean4(), stats_v.mean4());
    match sensor.debias {
        DebiasMode::ClosedForm => match sensor.map.closed_form_debias(&sensor.r_z) {
            Some(b) => Debias::Multiplicative(b),
            None => Debias::Multiplicative(debias_multiplicative(&mu_x, &mu_v)),
        },
        DebiasMode::NumericalMultiplicative => {
            Debias::Multiplicative(debias_multiplicative(&mu_x, &mu_v))
        }
        DebiasMode::NumericalAdditive => Debias::Additive(debias_additive(&mu_x, &mu_v)),
    }
}
