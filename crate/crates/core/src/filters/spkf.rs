use nalgebra::{DMatrix, DVector};

use crate::convert::SensorModel;
use crate::error::{Error, Result};
use crate::linalg::{inverse_dyn, symmetrize, to_dmatrix, to_dvector, to_mat4, to_vec4, Vec4};
use crate::sigma::SigmaRule;

use super::{check_length, predict, unwrap_observed, MotionModel, StateEstimate};

/// Gaussian filter with sigma-point measurement moments.
///
/// The predicted density `N(x̂, P)` is pushed through `h` with the degree-5
/// rule. Angular coordinates of each transformed point are unwrapped around
/// the bearing of the predicted mean before averaging, so the moments stay
/// continuous across the `±π` seam.
pub fn spkf_step(
    est: &StateEstimate,
    z_m: &[f64],
    sensor: &SensorModel<'_>,
    model: &MotionModel,
    rule: &SigmaRule,
) -> Result<StateEstimate> {
    check_length(z_m, sensor)?;
    if rule.dim() != 4 {
        return Err(Error::Domain(format!(
            "sigma rule has dimension {}, expected 4",
            rule.dim()
        )));
    }
    let m = sensor.observed;
    let pred = predict(est, model);
    let map = sensor.map;
    let reference = map.to_measurement(&pred.mean)?;

    let points = rule.scaled_points(&to_dvector(&pred.mean), &to_dmatrix(&pred.covariance))?;
    let mapped = points
        .iter()
        .map(|chi| {
            let z = map.to_measurement(&to_vec4(chi))?;
            let z = unwrap_observed(sensor, &z, &reference);
            Ok(DVector::from_column_slice(&z.as_slice()[..m]))
        })
        .collect::<Result<Vec<_>>>()?;

    let weights = rule.weights();
    let x_mean = to_dvector(&pred.mean);
    let z_hat = mapped
        .iter()
        .zip(weights)
        .fold(DVector::zeros(m), |acc, (z, w)| acc + z * *w);

    let mut s = sensor.observed_noise();
    let mut cross = DMatrix::zeros(4, m);
    for ((chi, z), w) in points.iter().zip(&mapped).zip(weights) {
        let dz = z - &z_hat;
        s.ger(*w, &dz, &dz, 1.0);
        cross.ger(*w, &(chi - &x_mean), &dz, 1.0);
    }
    let s = symmetrize(&s);
    let gain = &cross * inverse_dyn(&s, "innovation covariance")?;

    let mut z_full = reference;
    z_full.as_mut_slice()[..m].copy_from_slice(z_m);
    let mut z_hat_full = reference;
    z_hat_full.as_mut_slice()[..m].copy_from_slice(z_hat.as_slice());
    let innovation = map.measurement_residual(&z_full, &z_hat_full);
    let nu = DVector::from_column_slice(&innovation.as_slice()[..m]);

    let mean: Vec4 = pred.mean + to_vec4(&(&gain * nu));
    let covariance = to_dmatrix(&pred.covariance) - &gain * &s * gain.transpose();
    Ok(StateEstimate {
        mean,
        covariance: to_mat4(&symmetrize(&covariance)),
        k: pred.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::{polar_noise_covariance, DebiasMode};
    use crate::coordmap::{wrap_angle, CoordinateMap, IdentityMap, PolarMap};
    use crate::filters::{ekf_step, pkf_step};
    use crate::linalg::Mat4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn static_model() -> MotionModel {
        MotionModel {
            transition: Mat4::identity(),
            process_noise: Mat4::zeros(),
        }
    }

    /// Plain-array Gaussian filter update built from the lattice directly.
    fn reference_update(
        mean: [f64; 4],
        cov: &Mat4,
        z: &[f64],
        r: &Mat4,
        m: usize,
    ) -> ([f64; 4], Mat4) {
        let l = cov.cholesky().unwrap().l();
        let lam = 3f64.sqrt();
        let mut nodes: Vec<([f64; 4], f64)> = vec![([0.0; 4], 1.0 / 3.0)];
        for i in 0..4 {
            for s in [-1.0, 1.0] {
                let mut u = [0.0; 4];
                u[i] = s * lam;
                nodes.push((u, 0.0));
            }
        }
        for i in 0..4 {
            for j in i + 1..4 {
                for si in [-1.0, 1.0] {
                    for sj in [-1.0, 1.0] {
                        let mut u = [0.0; 4];
                        u[i] = si * lam;
                        u[j] = sj * lam;
                        nodes.push((u, 1.0 / 36.0));
                    }
                }
            }
        }
        assert_eq!(nodes.len(), 33);
        let centre = {
            let (x, y) = (mean[0], mean[1]);
            y.atan2(x)
        };
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for (u, w) in &nodes {
            let mut x = mean;
            for i in 0..4 {
                for j in 0..4 {
                    x[i] += l[(i, j)] * u[j];
                }
            }
            let r_ = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let a = centre + wrap_angle(x[1].atan2(x[0]) - centre);
            let rdot = (x[0] * x[2] + x[1] * x[3]) / r_;
            let cdot = (x[0] * x[3] - x[1] * x[2]) / r_;
            let full = [r_, a, rdot, cdot];
            xs.push((x, *w));
            zs.push(full[..m].to_vec());
        }
        let mut zbar = vec![0.0; m];
        for ((_, w), z) in xs.iter().zip(&zs) {
            for i in 0..m {
                zbar[i] += w * z[i];
            }
        }
        let mut s = DMatrix::<f64>::zeros(m, m);
        let mut c = DMatrix::<f64>::zeros(4, m);
        for ((x, w), z) in xs.iter().zip(&zs) {
            for i in 0..m {
                for j in 0..m {
                    s[(i, j)] += w * (z[i] - zbar[i]) * (z[j] - zbar[j]);
                }
                for a in 0..4 {
                    c[(a, i)] += w * (x[a] - mean[a]) * (z[i] - zbar[i]);
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] += r[(i, j)];
            }
        }
        let k = &c * s.clone().try_inverse().unwrap();
        let mut nu: Vec<f64> = (0..m).map(|i| z[i] - zbar[i]).collect();
        nu[1] = wrap_angle(nu[1]);
        let mut out = mean;
        for a in 0..4 {
            for i in 0..m {
                out[a] += k[(a, i)] * nu[i];
            }
        }
        let p = to_dmatrix(cov) - &k * &s * k.transpose();
        (out, to_mat4(&p))
    }

    #[test]
    fn matches_reference_gaussian_filter() {
        let rule = SigmaRule::degree5(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..100 {
            let m = if trial % 2 == 0 { 2 } else { 3 };
            let r = polar_noise_covariance(30.0, 0.0873, 1.0, 10.0, -0.2);
            let sensor = SensorModel::new(&PolarMap, r, m, DebiasMode::ClosedForm).unwrap();
            let range = rng.random_range(1000.0..6000.0);
            let bearing: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let mean = Vec4::new(
                range * bearing.cos(),
                range * bearing.sin(),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            let a = Mat4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let cov = a * a.transpose() * 200.0
                + Mat4::from_diagonal(&Vec4::new(400.0, 400.0, 20.0, 20.0));
            let zt = PolarMap.to_measurement(&mean).unwrap();
            let mut z: Vec<f64> = (0..m)
                .map(|i| zt[i] + [30.0, 0.0873, 1.0][i] * rng.random_range(-2.0..2.0))
                .collect();
            z[1] = wrap_angle(z[1]);

            let est = StateEstimate::new(mean, cov);
            let got = spkf_step(&est, &z, &sensor, &static_model(), &rule).unwrap();
            let (want_mean, want_cov) = reference_update(mean.into(), &cov, &z, &r, m);
            let want_mean = Vec4::from(want_mean);
            assert!(
                (got.mean - want_mean).amax() <= 1e-8 * want_mean.amax().max(1.0),
                "trial {trial}"
            );
            assert!(
                (got.covariance - want_cov).amax() <= 1e-8 * want_cov.amax().max(1.0),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn linear_problem_agrees_across_filters() {
        let rule = SigmaRule::degree5(4).unwrap();
        let mut a = Mat4::identity();
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        let model = MotionModel {
            transition: a,
            process_noise: Mat4::identity() * 0.3,
        };
        let r = Mat4::from_diagonal(&Vec4::new(4.0, 9.0, 1.0, 2.0));
        let sensor = SensorModel::new(&IdentityMap, r, 4, DebiasMode::ClosedForm).unwrap();
        let start = StateEstimate::new(Vec4::new(1.0, 2.0, 0.5, -0.5), Mat4::identity() * 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut p, mut s, mut e) = (start.clone(), start.clone(), start);
        for _ in 0..50 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            p = pkf_step(&p, &z, &sensor, &model, &rule).unwrap();
            s = spkf_step(&s, &z, &sensor, &model, &rule).unwrap();
            e = ekf_step(&e, &z, &sensor, &model).unwrap();
            for other in [&s, &e] {
                assert!((p.mean - other.mean).amax() <= 1e-8 * p.mean.amax().max(1.0));
                assert!(
                    (p.covariance - other.covariance).amax() <= 1e-8 * p.covariance.amax().max(1.0)
                );
            }
        }
    }

    #[test]
    fn noiseless_tracking_stays_on_truth() {
        let rule = SigmaRule::degree5(4).unwrap();
        let mut a = Mat4::identity();
        a[(0, 2)] = 2.0;
        a[(1, 3)] = 2.0;
        let model = MotionModel {
            transition: a,
            process_noise: Mat4::zeros(),
        };
        let r = polar_noise_covariance(1e-3, 1e-7, 1e-3, 1e-3, 0.0);
        let sensor = SensorModel::new(&PolarMap, r, 2, DebiasMode::ClosedForm).unwrap();
        let mut truth = Vec4::new(100.0, -3000.0, -3.0, 9.0);
        let mut est = StateEstimate::new(truth, Mat4::identity() * 1e-6);
        for _ in 0..100 {
            truth = a * truth;
            let z = PolarMap.to_measurement(&truth).unwrap();
            est = spkf_step(&est, &z.as_slice()[..2], &sensor, &model, &rule).unwrap();
            assert!((est.mean - truth).amax() < 1e-6);
        }
    }

    #[test]
    fn rejects_wrong_rule_dimension() {
        let rule = SigmaRule::degree5(3).unwrap();
        let r = polar_noise_covariance(30.0, 0.0873, 10.0, 10.0, 0.0);
        let sensor = SensorModel::new(&PolarMap, r, 2, DebiasMode::ClosedForm).unwrap();
        let est = StateEstimate::new(Vec4::new(1000.0, 0.0, 0.0, 0.0), Mat4::identity());
        assert!(spkf_step(&est, &[1000.0, 0.0], &sensor, &static_model(), &rule).is_err());
    }
}
