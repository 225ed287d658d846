//! Ground truth, sensor simulation and the posterior Cramér–Rao bound.
//!
//! A trial draws a random constant-velocity target, propagates it with
//! white-noise acceleration, measures it from a radar at the origin, and
//! runs every selected filter on the same measurement stream.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};

use crate::convert::{polar_noise_covariance, DebiasMode, SensorModel};
use crate::coordmap::{wrap_angle, CoordinateMap, PolarMap, BEARING};
use crate::error::{Error, Result};
use crate::filters::{FilterKind, MotionModel, StateEstimate};
use crate::linalg::{
    inverse4, inverse_dyn, sqrt_factor, sqrt_factor4, symmetrize4, to_dmatrix, to_mat4, Mat4, Vec4,
};
use crate::sigma::SigmaRule;

/// Which polar coordinates the radar reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservedCase {
    /// Range and bearing.
    #[default]
    RangeBearing,
    /// Range, bearing and range rate.
    RangeBearingRangeRate,
}

impl ObservedCase {
    pub fn observed(self) -> usize {
        match self {
            ObservedCase::RangeBearing => 2,
            ObservedCase::RangeBearingRangeRate => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObservedCase::RangeBearing => "rb",
            ObservedCase::RangeBearingRangeRate => "rbd",
        }
    }
}

impl fmt::Display for ObservedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObservedCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rb" => Ok(ObservedCase::RangeBearing),
            "rbd" => Ok(ObservedCase::RangeBearingRangeRate),
            other => Err(Error::Config(format!(
                "unknown case `{other}` (expected rb or rbd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    /// Seconds between updates.
    pub update_period: f64,
    pub n_updates: usize,
    pub sigma_r: f64,
    pub sigma_alpha: f64,
    pub sigma_rdot: f64,
    pub sigma_cdot: f64,
    /// Range / range-rate noise correlation.
    pub rho: f64,
    /// Process-noise intensity in m²/s³.
    pub q: f64,
    pub init_range_mean: f64,
    pub init_range_std: f64,
    /// Target speed is `speed_scale · χ²(2)`.
    pub speed_scale: f64,
    pub case: ObservedCase,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            update_period: 2.0,
            n_updates: 100,
            sigma_r: 30.0,
            sigma_alpha: 0.0873,
            sigma_rdot: 10.0,
            sigma_cdot: 10.0,
            rho: -0.2,
            q: 0.44 * 0.44,
            init_range_mean: 4000.0,
            init_range_std: 30.0,
            speed_scale: 10.0,
            case: ObservedCase::RangeBearing,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("update_period", self.update_period),
            ("sigma_r", self.sigma_r),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_rdot", self.sigma_rdot),
            ("sigma_cdot", self.sigma_cdot),
            ("init_range_mean", self.init_range_mean),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("q", self.q),
            ("init_range_std", self.init_range_std),
            ("speed_scale", self.speed_scale),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if self.n_updates == 0 {
            return Err(Error::Config("n_updates must be at least 1".into()));
        }
        Ok(())
    }

    pub fn observed(&self) -> usize {
        self.case.observed()
    }

    /// Full polar measurement covariance, unobserved spreads included.
    pub fn measurement_covariance(&self) -> Mat4 {
        polar_noise_covariance(
            self.sigma_r,
            self.sigma_alpha,
            self.sigma_rdot,
            self.sigma_cdot,
            self.rho,
        )
    }

    pub fn sensor<'a>(
        &self,
        map: &'a dyn CoordinateMap,
        debias: DebiasMode,
    ) -> Result<SensorModel<'a>> {
        SensorModel::new(map, self.measurement_covariance(), self.observed(), debias)
    }
}

/// `diag(30², 30², 10², 10²)`.
pub fn initial_covariance() -> Mat4 {
    Mat4::from_diagonal(&Vec4::new(900.0, 900.0, 100.0, 100.0))
}

pub fn sample_initial_truth<R: Rng + ?Sized>(rng: &mut R, params: &ScenarioParams) -> Vec4 {
    let range =
        params.init_range_mean + params.init_range_std * rng.sample::<f64, _>(StandardNormal);
    let bearing = rng.random_range(0.0..TAU);
    let heading = rng.random_range(0.0..TAU);
    let speed =
        params.speed_scale * rng.sample(ChiSquared::new(2.0).expect("two degrees of freedom"));
    Vec4::new(
        range * bearing.cos(),
        range * bearing.sin(),
        speed * heading.cos(),
        speed * heading.sin(),
    )
}

/// Constant velocity with white-noise acceleration, axes independent.
pub fn build_motion_model(params: &ScenarioParams) -> MotionModel {
    let t = params.update_period;
    let q = params.q;
    let mut a = Mat4::identity();
    a[(0, 2)] = t;
    a[(1, 3)] = t;
    let (pp, pv, vv) = (q * t * t * t / 3.0, q * t * t / 2.0, q * t);
    #[rustfmt::skip]
    let noise = Mat4::new(
        pp,  0.0, pv,  0.0,
        0.0, pp,  0.0, pv,
        pv,  0.0, vv,  0.0,
        0.0, pv,  0.0, vv,
    );
    MotionModel {
        transition: a,
        process_noise: noise,
    }
}

fn gaussian4<R: Rng + ?Sized>(rng: &mut R, factor: &Mat4) -> Vec4 {
    let w = Vec4::from_fn(|_, _| rng.sample(StandardNormal));
    factor * w
}

pub fn propagate_truth<R: Rng + ?Sized>(
    x: &Vec4,
    model: &MotionModel,
    rng: &mut R,
) -> Result<Vec4> {
    let l = sqrt_factor4(&model.process_noise, "process noise")?;
    Ok(model.transition * x + gaussian4(rng, &l))
}

/// Observed polar coordinates of `x_true` plus noise from the leading
/// `M×M` block of the measurement covariance. Bearing is wrapped.
pub fn synthesize_measurement<R: Rng + ?Sized>(
    x_true: &Vec4,
    params: &ScenarioParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = params.observed();
    let z = PolarMap.to_measurement(x_true)?;
    let r = params.measurement_covariance();
    let r_m = DMatrix::from_fn(m, m, |i, j| r[(i, j)]);
    let l = sqrt_factor(&r_m, "measurement noise")?;
    let w = nalgebra::DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
    let noise = l * w;
    let mut out: Vec<f64> = (0..m).map(|i| z[i] + noise[i]).collect();
    out[BEARING] = wrap_angle(out[BEARING]);
    Ok(out)
}

/// Filter start: covariance `p0`, mean drawn from `N(x_true0, p0)`.
pub fn initialize_filter<R: Rng + ?Sized>(
    x_true0: &Vec4,
    p0: &Mat4,
    rng: &mut R,
) -> Result<StateEstimate> {
    let l = sqrt_factor4(p0, "initial covariance")?;
    Ok(StateEstimate::new(x_true0 + gaussian4(rng, &l), *p0))
}

/// Recursive information bound along a true trajectory.
///
/// `J(0) = P0⁻¹`, `J(k) = [Q + A J(k−1)⁻¹ Aᵗ]⁻¹ + Hᵗ R_m⁻¹ H` with `H` the
/// observed rows of `J_h` at the true state. Returns
/// `(trace of position block, trace of velocity block)` of `J⁻¹` for
/// `k = 0..truth.len()`.
pub fn pcrlb(
    truth: &[Vec4],
    p0: &Mat4,
    model: &MotionModel,
    sensor: &SensorModel<'_>,
) -> Result<Vec<(f64, f64)>> {
    let m = sensor.observed;
    let r_m_inv = inverse_dyn(&sensor.observed_noise(), "observed measurement noise")?;
    let mut bound = *p0;
    let mut out = Vec::with_capacity(truth.len());
    out.push(block_traces(&bound));
    for x in truth.iter().skip(1) {
        let prior = symmetrize4(
            &(model.process_noise + model.transition * bound * model.transition.transpose()),
        );
        let jh = to_dmatrix(&sensor.map.jacobian_h(x)?);
        let h = jh.rows(0, m);
        let info = inverse4(&prior, "bound prior")? + to_mat4(&(h.transpose() * &r_m_inv * h));
        bound = symmetrize4(&inverse4(&info, "Fisher information")?);
        out.push(block_traces(&bound));
    }
    Ok(out)
}

fn block_traces(p: &Mat4) -> (f64, f64) {
    (p[(0, 0)] + p[(1, 1)], p[(2, 2)] + p[(3, 3)])
}

/// One filter's run through a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrack {
    pub kind: FilterKind,
    /// Index `k = 0..=n`; `None` from the failing step onward.
    pub estimates: Vec<Option<StateEstimate>>,
    /// First numerical failure, with the update index where it occurred.
    pub failure: Option<(usize, Error)>,
}

impl FilterTrack {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// `k = 0..=n`.
    pub truth: Vec<Vec4>,
    pub tracks: Vec<FilterTrack>,
    /// `(position, velocity)` bound for `k = 0..=n`.
    pub pcrlb: Vec<(f64, f64)>,
}

impl TrialRecord {
    pub fn track(&self, kind: FilterKind) -> Option<&FilterTrack> {
        self.tracks.iter().find(|t| t.kind == kind)
    }
}

/// Independent stream for `trial` under a root `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Shared per-experiment inputs for [`run_trial`].
pub struct TrialSetup<'a> {
    pub params: &'a ScenarioParams,
    pub filters: &'a [FilterKind],
    pub debias: DebiasMode,
    pub rule: &'a SigmaRule,
}

pub fn run_trial(setup: &TrialSetup<'_>, seed: u64, trial: usize) -> Result<TrialRecord> {
    let params = setup.params;
    let model = build_motion_model(params);
    let sensor = params.sensor(&PolarMap, setup.debias)?;
    let p0 = initial_covariance();
    let mut rng = trial_rng(seed, trial);

    let x0 = sample_initial_truth(&mut rng, params);
    let start = initialize_filter(&x0, &p0, &mut rng)?;
    let n = params.n_updates;

    let mut truth = Vec::with_capacity(n + 1);
    let mut measurements = Vec::with_capacity(n);
    truth.push(x0);
    let q_factor = sqrt_factor4(&model.process_noise, "process noise")?;
    for _ in 0..n {
        let prev = truth.last().expect("non-empty");
        let x = model.transition * prev + gaussian4(&mut rng, &q_factor);
        measurements.push(synthesize_measurement(&x, params, &mut rng)?);
        truth.push(x);
    }

    let tracks = setup
        .filters
        .iter()
        .map(|&kind| run_filter(kind, &start, &measurements, &sensor, &model, setup.rule))
        .collect();
    let bound = pcrlb(&truth, &p0, &model, &sensor)?;
    Ok(TrialRecord {
        trial,
        seed,
        truth,
        tracks,
        pcrlb: bound,
    })
}

fn run_filter(
    kind: FilterKind,
    start: &StateEstimate,
    measurements: &[Vec<f64>],
    sensor: &SensorModel<'_>,
    model: &MotionModel,
    rule: &SigmaRule,
) -> FilterTrack {
    let mut estimates = Vec::with_capacity(measurements.len() + 1);
    estimates.push(Some(start.clone()));
    let mut current = start.clone();
    let mut failure = None;
    for (i, z) in measurements.iter().enumerate() {
        let k = i + 1;
        let next = kind.step(&current, z, sensor, model, rule).and_then(|est| {
            if est
                .mean
                .iter()
                .chain(est.covariance.iter())
                .all(|v| v.is_finite())
            {
                Ok(est)
            } else {
                Err(Error::Domain("non-finite estimate".into()))
            }
        });
        match next {
            Ok(est) => {
                estimates.push(Some(est.clone()));
                current = est;
            }
            Err(e) => {
                failure = Some((k, e));
                break;
            }
        }
    }
    estimates.resize(measurements.len() + 1, None);
    FilterTrack {
        kind,
        estimates,
        failure,
    }
}
