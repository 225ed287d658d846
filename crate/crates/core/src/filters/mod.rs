//! Tracking filters: the converted-measurement PKF and two baselines.
//!
//! Every filter is a pure function from the previous posterior to the next
//! one. Each `*_step` predicts with the [`MotionModel`] and then applies its
//! own measurement update.

use std::fmt;
use std::str::FromStr;

use crate::convert::SensorModel;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize4, Mat4, Vec4};
use crate::sigma::SigmaRule;

mod ekf;
mod pkf;
mod spkf;

pub use ekf::ekf_step;
pub use pkf::{pkf_gain, pkf_step, pkf_update};
pub use spkf::spkf_step;

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub mean: Vec4,
    pub covariance: Mat4,
    pub k: usize,
}

impl StateEstimate {
    pub fn new(mean: Vec4, covariance: Mat4) -> Self {
        Self {
            mean,
            covariance: symmetrize4(&covariance),
            k: 0,
        }
    }
}

/// Linear motion `x(k) = A x(k−1) + q`, `q ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub transition: Mat4,
    pub process_noise: Mat4,
}

pub fn predict(est: &StateEstimate, model: &MotionModel) -> StateEstimate {
    let a = &model.transition;
    StateEstimate {
        mean: a * est.mean,
        covariance: symmetrize4(&(a * est.covariance * a.transpose() + model.process_noise)),
        k: est.k + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    Pkf,
    Spkf,
    Ekf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Pkf, FilterKind::Spkf, FilterKind::Ekf];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Pkf => "pkf",
            FilterKind::Spkf => "spkf",
            FilterKind::Ekf => "ekf",
        }
    }

    /// One predict/update cycle of this filter.
    pub fn step(
        self,
        est: &StateEstimate,
        z_m: &[f64],
        sensor: &SensorModel<'_>,
        model: &MotionModel,
        rule: &SigmaRule,
    ) -> Result<StateEstimate> {
        match self {
            FilterKind::Pkf => pkf_step(est, z_m, sensor, model, rule),
            FilterKind::Spkf => spkf_step(est, z_m, sensor, model, rule),
            FilterKind::Ekf => ekf_step(est, z_m, sensor, model),
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pkf" => Ok(FilterKind::Pkf),
            "spkf" | "ukf" => Ok(FilterKind::Spkf),
            "ekf" => Ok(FilterKind::Ekf),
            other => Err(Error::Config(format!("unknown filter `{other}`"))),
        }
    }
}

/// Observed measurement entries with angular ones re-centred on `reference`.
fn unwrap_observed(sensor: &SensorModel<'_>, z: &Vec4, reference: &Vec4) -> Vec4 {
    let mut out = *z;
    for &i in sensor.map.angular_coordinates() {
        out[i] = reference[i] + crate::coordmap::wrap_angle(z[i] - reference[i]);
    }
    out
}

fn check_length(z_m: &[f64], sensor: &SensorModel<'_>) -> Result<()> {
    if z_m.len() == sensor.observed {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "expected {} observed coordinates, got {}",
            sensor.observed,
            z_m.len()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_identity_without_noise_is_unchanged() {
        let est = StateEstimate::new(Vec4::new(1.0, 2.0, 3.0, 4.0), Mat4::identity() * 3.0);
        let model = MotionModel {
            transition: Mat4::identity(),
            process_noise: Mat4::zeros(),
        };
        let p = predict(&est, &model);
        assert_eq!(p.mean, est.mean);
        assert_eq!(p.covariance, est.covariance);
        assert_eq!(p.k, 1);
    }

    #[test]
    fn predict_constant_velocity() {
        let mut a = Mat4::identity();
        a[(0, 2)] = 2.0;
        a[(1, 3)] = 2.0;
        let model = MotionModel {
            transition: a,
            process_noise: Mat4::zeros(),
        };
        let p = predict(
            &StateEstimate::new(Vec4::new(0.0, 0.0, 1.0, 2.0), Mat4::identity()),
            &model,
        );
        assert_eq!(p.mean, Vec4::new(2.0, 4.0, 1.0, 2.0));
    }

    #[test]
    fn predict_adds_process_noise() {
        let model = MotionModel {
            transition: Mat4::identity(),
            process_noise: Mat4::identity(),
        };
        let p = predict(&StateEstimate::new(Vec4::zeros(), Mat4::identity()), &model);
        assert_eq!(p.covariance, Mat4::identity() * 2.0);
    }

    #[test]
    fn filter_names_round_trip() {
        for kind in FilterKind::ALL {
            assert_eq!(kind.name().parse::<FilterKind>().unwrap(), kind);
        }
        assert_eq!("UKF".parse::<FilterKind>().unwrap(), FilterKind::Spkf);
        assert!("imm".parse::<FilterKind>().is_err());
    }
}
