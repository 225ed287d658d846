use nalgebra::{DMatrix, DVector};

use crate::convert::SensorModel;
use crate::error::Result;
use crate::linalg::{inverse_dyn, symmetrize, to_dmatrix, to_mat4, to_vec4};

use super::{check_length, predict, MotionModel, StateEstimate};

/// Extended Kalman filter on the raw observed measurement.
///
/// `H` is the first `M` rows of `J_h` at the prediction; angular
/// innovations are wrapped. The covariance uses the Joseph form.
pub fn ekf_step(
    est: &StateEstimate,
    z_m: &[f64],
    sensor: &SensorModel<'_>,
    model: &MotionModel,
) -> Result<StateEstimate> {
    check_length(z_m, sensor)?;
    let m = sensor.observed;
    let pred = predict(est, model);
    let map = sensor.map;

    let predicted_z = map.to_measurement(&pred.mean)?;
    let mut z_full = predicted_z;
    z_full.as_mut_slice()[..m].copy_from_slice(z_m);
    let innovation = map.measurement_residual(&z_full, &predicted_z);
    let nu = DVector::from_column_slice(&innovation.as_slice()[..m]);

    let jh = to_dmatrix(&map.jacobian_h(&pred.mean)?);
    let h = jh.rows(0, m).into_owned();
    let p = to_dmatrix(&pred.covariance);
    let r = sensor.observed_noise();

    let s = symmetrize(&(&h * &p * h.transpose() + &r));
    let k = &p * h.transpose() * inverse_dyn(&s, "innovation covariance")?;
    let mean = pred.mean + to_vec4(&(&k * nu));

    let i_kh = DMatrix::identity(4, 4) - &k * &h;
    let joseph = &i_kh * &p * i_kh.transpose() + &k * &r * k.transpose();
    Ok(StateEstimate {
        mean,
        covariance: to_mat4(&symmetrize(&joseph)),
        k: pred.k,
    })
}
