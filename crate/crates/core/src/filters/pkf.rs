use crate::convert::{convert_measurement, ConvertedMeasurement, SensorModel};
use crate::error::Result;
use crate::linalg::{inverse4, symmetrize4, Mat4};
use crate::sigma::SigmaRule;

use super::{check_length, predict, MotionModel, StateEstimate};

/// Information-form update with a converted measurement:
/// `P⁺ = (P⁻¹ + R̄⁻¹)⁻¹`, `x⁺ = x + P⁺ R̄⁻¹ (z̄ − x)`.
pub fn pkf_update(pred: &StateEstimate, cm: &ConvertedMeasurement) -> Result<StateEstimate> {
    let info = inverse4(&pred.covariance, "predicted covariance")? + cm.precision;
    let covariance = symmetrize4(&inverse4(&info, "posterior information")?);
    let gain = pkf_gain(&covariance, &cm.precision);
    Ok(StateEstimate {
        mean: pred.mean + gain * (cm.z_bar - pred.mean),
        covariance,
        k: pred.k,
    })
}

/// `G = P⁺ R̄⁻¹`.
pub fn pkf_gain(posterior_cov: &Mat4, precision: &Mat4) -> Mat4 {
    posterior_cov * precision
}

pub fn pkf_step(
    est: &StateEstimate,
    z_m: &[f64],
    sensor: &SensorModel<'_>,
    model: &MotionModel,
    rule: &SigmaRule,
) -> Result<StateEstimate> {
    check_length(z_m, sensor)?;
    let pred = predict(est, model);
    let cm = convert_measurement(z_m, &pred.mean, &pred.covariance, sensor, rule)?;
    pkf_update(&pred, &cm)
}
