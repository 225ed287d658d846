//! Consistency, accuracy and track-loss statistics over Monte Carlo trials.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::linalg::{inverse4, Mat4, Vec4};
use crate::sim::{FilterTrack, TrialRecord};

pub const STATE_DIM: usize = 4;
pub const POSITION: [usize; 2] = [0, 1];
pub const VELOCITY: [usize; 2] = [2, 3];

/// Normalized estimation error squared `eᵗ P⁻¹ e`.
pub fn nees(error: &Vec4, covariance: &Mat4) -> Result<f64> {
    let inv = inverse4(covariance, "state covariance")?;
    Ok(error.dot(&(inv * error)))
}

/// `(1 / NL) Σ eᵗ P⁻¹ e` over `L` trials.
pub fn anees(errors: &[Vec4], covariances: &[Mat4]) -> Result<f64> {
    if errors.is_empty() || errors.len() != covariances.len() {
        return Err(Error::Domain(format!(
            "anees needs matching non-empty inputs, got {} errors and {} covariances",
            errors.len(),
            covariances.len()
        )));
    }
    let mut total = 0.0;
    for (i, (e, p)) in errors.iter().zip(covariances).enumerate() {
        total += nees(e, p).map_err(|err| Error::Domain(format!("trial {i}: {err}")))?;
    }
    Ok(total / (STATE_DIM * errors.len()) as f64)
}

/// Two-sided chi-square band for ANEES with `n·l` degrees of freedom.
pub fn anees_confidence(n: usize, l: usize, level: f64) -> (f64, f64) {
    let dof = (n * l) as f64;
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    let lo = chi.inverse_cdf((1.0 - level) / 2.0);
    let hi = chi.inverse_cdf((1.0 + level) / 2.0);
    (lo / dof, hi / dof)
}

/// `(1/L) Σ ‖H_S e‖²` for the coordinates in `selector`.
pub fn mse(errors: &[Vec4], selector: &[usize]) -> Result<f64> {
    if selector.is_empty() || selector.iter().any(|&i| i >= STATE_DIM) {
        return Err(Error::Domain(format!(
            "invalid coordinate selector {selector:?}"
        )));
    }
    if errors.is_empty() {
        return Err(Error::Domain("mse of an empty error list".into()));
    }
    let total: f64 = errors.iter().map(|e| squared_norm(e, selector)).sum();
    Ok(total / errors.len() as f64)
}

fn squared_norm(e: &Vec4, selector: &[usize]) -> f64 {
    selector.iter().map(|&i| e[i] * e[i]).sum()
}

/// Normal-approximation interval for the mean of `squared_errors`.
pub fn mse_confidence(squared_errors: &[f64], level: f64) -> Option<(f64, f64)> {
    let n = squared_errors.len();
    if n == 0 {
        return None;
    }
    let mean = squared_errors.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, mean));
    }
    let var = squared_errors
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let z = standard_normal_quantile((1.0 + level) / 2.0);
    let half = z * (var / n as f64).sqrt();
    Some((mean - half, mean + half))
}

fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Divergence rule for a single filter in a single trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCriterion {
    /// Position error, in metres, that counts as off track.
    pub threshold: f64,
    /// Number of final updates that must all be off track.
    pub window: usize,
}

impl Default for LossCriterion {
    fn default() -> Self {
        Self {
            threshold: 1000.0,
            window: 10,
        }
    }
}

/// A track is lost if the filter failed numerically, or its position error
/// exceeds the threshold at each of the final `window` updates.
pub fn track_lost(track: &FilterTrack, truth: &[Vec4], criterion: &LossCriterion) -> bool {
    if track.failed() {
        return true;
    }
    let n = truth.len().min(track.estimates.len());
    let start = n.saturating_sub(criterion.window).max(1.min(n));
    if start >= n {
        return false;
    }
    (start..n).all(|k| match &track.estimates[k] {
        Some(est) => {
            let e = est.mean - truth[k];
            e[0].hypot(e[1]) > criterion.threshold
        }
        None => true,
    })
}

/// 95% normal-approximation interval on a loss count, rounded to whole
/// trials. `None` when nothing was lost.
pub fn loss_confidence(losses: usize, l: usize) -> Option<(u64, u64)> {
    if losses == 0 || l == 0 {
        return None;
    }
    let lf = l as f64;
    let p = losses as f64 / lf;
    let half = 1.96 * (p * (1.0 - p) / lf).sqrt();
    let lo = (lf * (p - half)).round().max(0.0);
    let hi = (lf * (p + half)).round().min(lf);
    Some((lo as u64, hi as u64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    pub loss: LossCriterion,
    pub anees_excludes_lost: bool,
    pub level: f64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            loss: LossCriterion::default(),
            anees_excludes_lost: false,
            level: 0.95,
        }
    }
}

/// Per-update statistics for one filter, `k = 1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub filter: FilterKind,
    pub trials: usize,
    pub anees: Vec<Option<f64>>,
    pub anees_ci: Vec<Option<(f64, f64)>>,
    pub mse_pos: Vec<Option<f64>>,
    pub mse_pos_ci: Vec<Option<(f64, f64)>>,
    pub mse_vel: Vec<Option<f64>>,
    pub mse_vel_ci: Vec<Option<(f64, f64)>>,
    pub pcrlb_pos: Vec<f64>,
    pub pcrlb_vel: Vec<f64>,
    pub lost: usize,
    pub loss_ci: Option<(u64, u64)>,
}

impl MetricsSeries {
    pub fn len(&self) -> usize {
        self.anees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anees.is_empty()
    }
}

/// Reduces trial records for `filter`, in trial order.
///
/// MSE uses trials where the filter kept track. ANEES uses every trial
/// with an estimate at `k` unless `anees_excludes_lost` is set. Records
/// must share one update count.
pub fn aggregate(
    records: &[TrialRecord],
    filter: FilterKind,
    opts: &AggregateOptions,
) -> Result<MetricsSeries> {
    let first = records
        .first()
        .ok_or_else(|| Error::Domain("no trial records".into()))?;
    let n = first.truth.len() - 1;
    if records
        .iter()
        .any(|r| r.truth.len() != n + 1 || r.pcrlb.len() != n + 1)
    {
        return Err(Error::Domain("trial records differ in length".into()));
    }
    let tracks: Vec<&FilterTrack> = records
        .iter()
        .map(|r| {
            r.track(filter)
                .ok_or_else(|| Error::Domain(format!("trial {} has no {filter} track", r.trial)))
        })
        .collect::<Result<_>>()?;
    let lost: Vec<bool> = records
        .iter()
        .zip(&tracks)
        .map(|(r, t)| track_lost(t, &r.truth, &opts.loss))
        .collect();
    let lost_count = lost.iter().filter(|v| **v).count();
    let l = records.len();

    let mut series = MetricsSeries {
        filter,
        trials: l,
        anees: Vec::with_capacity(n),
        anees_ci: Vec::with_capacity(n),
        mse_pos: Vec::with_capacity(n),
        mse_pos_ci: Vec::with_capacity(n),
        mse_vel: Vec::with_capacity(n),
        mse_vel_ci: Vec::with_capacity(n),
        pcrlb_pos: Vec::with_capacity(n),
        pcrlb_vel: Vec::with_capacity(n),
        lost: lost_count,
        loss_ci: loss_confidence(lost_count, l),
    };

    for k in 1..=n {
        let mut nees_errors = Vec::new();
        let mut nees_covs = Vec::new();
        let mut kept_pos = Vec::new();
        let mut kept_vel = Vec::new();
        for ((record, track), &is_lost) in records.iter().zip(&tracks).zip(&lost) {
            let Some(est) = &track.estimates[k] else {
                continue;
            };
            let e = est.mean - record.truth[k];
            if !(is_lost && opts.anees_excludes_lost) {
                nees_errors.push(e);
                nees_covs.push(est.covariance);
            }
            if !is_lost {
                kept_pos.push(squared_norm(&e, &POSITION));
                kept_vel.push(squared_norm(&e, &VELOCITY));
            }
        }
        if nees_errors.is_empty() {
            series.anees.push(None);
            series.anees_ci.push(None);
        } else {
            series.anees.push(Some(anees(&nees_errors, &nees_covs)?));
            series.anees_ci.push(Some(anees_confidence(
                STATE_DIM,
                nees_errors.len(),
                opts.level,
            )));
        }
        series.mse_pos.push(mean(&kept_pos));
        series
            .mse_pos_ci
            .push(mse_confidence(&kept_pos, opts.level));
        series.mse_vel.push(mean(&kept_vel));
        series
            .mse_vel_ci
            .push(mse_confidence(&kept_vel, opts.level));
        series
            .pcrlb_pos
            .push(records.iter().map(|r| r.pcrlb[k].0).sum::<f64>() / l as f64);
        series
            .pcrlb_vel
            .push(records.iter().map(|r| r.pcrlb[k].1).sum::<f64>() / l as f64);
    }
    Ok(series)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::StateEstimate;
    use crate::linalg::sqrt_factor4;
    use nalgebra::Rotation2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, l: &Mat4) -> Vec4 {
        l * Vec4::from_fn(|_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn anees_simple_values() {
        assert_eq!(
            anees(&[Vec4::zeros(); 3], &[Mat4::identity(); 3]).unwrap(),
            0.0
        );
        assert_eq!(
            anees(&[Vec4::new(2.0, 0.0, 0.0, 0.0)], &[Mat4::identity()]).unwrap(),
            1.0
        );
        assert!(anees(&[], &[]).is_err());
        let err = anees(
            &[Vec4::zeros(), Vec4::zeros()],
            &[Mat4::identity(), Mat4::zeros()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("trial 1"));
    }

    #[test]
    fn anees_of_consistent_errors_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = 10_000;
        let mut errors = Vec::with_capacity(l);
        let mut covs = Vec::with_capacity(l);
        for _ in 0..l {
            let a = Mat4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = a * a.transpose() + Mat4::identity() * 0.5;
            errors.push(gaussian(&mut rng, &sqrt_factor4(&p, "p").unwrap()));
            covs.push(p);
        }
        let psi = anees(&errors, &covs).unwrap();
        let tol = 4.0 * (2.0 / (4.0 * l as f64)).sqrt();
        assert!((psi - 1.0).abs() < tol, "psi {psi}");
    }

    #[test]
    fn anees_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rot2 = Rotation2::new(0.7).into_inner();
        let mut rot = Mat4::zeros();
        rot.fixed_view_mut::<2, 2>(0, 0).copy_from(&rot2);
        rot.fixed_view_mut::<2, 2>(2, 2).copy_from(&rot2);
        let errors: Vec<Vec4> = (0..20)
            .map(|_| Vec4::from_fn(|_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let covs: Vec<Mat4> = (0..20)
            .map(|_| {
                let a = Mat4::from_fn(|_, _| rng.random_range(-1.0..1.0));
                a * a.transpose() + Mat4::identity()
            })
            .collect();
        let e2: Vec<Vec4> = errors.iter().map(|e| rot * e).collect();
        let c2: Vec<Mat4> = covs.iter().map(|c| rot * c * rot.transpose()).collect();
        let a = anees(&errors, &covs).unwrap();
        let b = anees(&e2, &c2).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn anees_band_values() {
        let (lo, hi) = anees_confidence(4, 1000, 0.95);
        assert!(
            (lo - 0.956).abs() < 1e-3 && (hi - 1.044).abs() < 1e-3,
            "{lo} {hi}"
        );
        // Wilson–Hilferty: χ²_p / ν ≈ (1 − 2/(9ν) + z √(2/(9ν)))³.
        for l in [200, 1000] {
            let nu = 4.0 * l as f64;
            let c = 2.0 / (9.0 * nu);
            let wh = |z: f64| (1.0 - c + z * c.sqrt()).powi(3);
            let (lo, hi) = anees_confidence(4, l, 0.95);
            assert!(
                (lo - wh(-1.959964)).abs() < 1e-3 && (hi - wh(1.959964)).abs() < 1e-3,
                "{lo} {hi}"
            );
        }
        let (lo, hi) = anees_confidence(4, 1000, 1e-9);
        assert!((hi - lo) < 1e-9 && (lo - 1.0).abs() < 1e-3);
        let (lo, hi) = anees_confidence(4, 1, 0.95);
        assert!(lo < 1.0 && hi > 1.0 && hi - lo > 2.0);
    }

    #[test]
    fn mse_selectors() {
        let e = [Vec4::new(3.0, 4.0, 5.0, 6.0)];
        assert_eq!(mse(&e, &POSITION).unwrap(), 25.0);
        assert_eq!(mse(&e, &VELOCITY).unwrap(), 61.0);
        assert_eq!(mse(&e, &[0, 1, 2, 3]).unwrap(), 86.0);
        assert!(mse(&e, &[]).is_err());
        assert!(mse(&e, &[4]).is_err());
    }

    #[test]
    fn mse_blocks_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e: Vec<Vec4> = (0..100)
            .map(|_| Vec4::from_fn(|_, _| rng.random_range(-5.0..5.0)))
            .collect();
        let sum = mse(&e, &POSITION).unwrap() + mse(&e, &VELOCITY).unwrap();
        assert!((sum - mse(&e, &[0, 1, 2, 3]).unwrap()).abs() < 1e-12 * sum);
    }

    #[test]
    fn mse_interval_cases() {
        assert_eq!(mse_confidence(&[4.0; 10], 0.95), Some((4.0, 4.0)));
        assert_eq!(mse_confidence(&[], 0.95), None);

        // Coverage of χ²(2) means at L = 10⁴ over repeated experiments.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reps = 400;
        let mut covered = 0;
        for _ in 0..reps {
            let sq: Vec<f64> = (0..10_000)
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    a * a + b * b
                })
                .collect();
            let (lo, hi) = mse_confidence(&sq, 0.95).unwrap();
            if lo <= 2.0 && 2.0 <= hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / reps as f64;
        assert!((rate - 0.95).abs() < 0.04, "coverage {rate}");
    }

    #[test]
    fn loss_intervals_match_reference_counts() {
        assert_eq!(loss_confidence(0, 1000), None);
        assert_eq!(loss_confidence(21, 1000), Some((12, 30)));
        assert_eq!(loss_confidence(47, 1000), Some((34, 60)));
        let table = [
            (21, (12, 30)),
            (47, (34, 60)),
            (20, (11, 29)),
            (52, (38, 66)),
            (16, (8, 24)),
            (33, (22, 44)),
            (27, (17, 37)),
            (493, (462, 524)),
            (19, (11, 27)),
            (502, (471, 533)),
            (20, (11, 29)),
            (528, (497, 559)),
        ];
        for (losses, ci) in table {
            assert_eq!(loss_confidence(losses, 1000), Some(ci), "losses {losses}");
        }
    }

    #[test]
    fn loss_intervals_are_centred_and_clamped() {
        for losses in [1, 5, 20, 500, 995, 1000] {
            let (lo, hi) = loss_confidence(losses, 1000).unwrap();
            assert!(lo as usize <= losses && losses <= hi as usize);
            assert!(hi <= 1000);
        }
    }

    fn track(kind: FilterKind, offsets: &[f64], truth: &[Vec4]) -> FilterTrack {
        FilterTrack {
            kind,
            estimates: truth
                .iter()
                .zip(offsets)
                .map(|(x, d)| {
                    Some(StateEstimate::new(
                        x + Vec4::new(*d, 0.0, 0.0, 0.0),
                        Mat4::identity(),
                    ))
                })
                .collect(),
            failure: None,
        }
    }

    #[test]
    fn loss_rule() {
        let truth: Vec<Vec4> = (0..21)
            .map(|k| Vec4::new(k as f64, 0.0, 1.0, 0.0))
            .collect();
        let crit = LossCriterion::default();
        assert!(!track_lost(
            &track(FilterKind::Pkf, &[0.0; 21], &truth),
            &truth,
            &crit
        ));

        let mut far = [2000.0; 21];
        assert!(track_lost(
            &track(FilterKind::Pkf, &far, &truth),
            &truth,
            &crit
        ));
        // Back on track at the last update.
        far[20] = 10.0;
        assert!(!track_lost(
            &track(FilterKind::Pkf, &far, &truth),
            &truth,
            &crit
        ));

        let mut failed = track(FilterKind::Ekf, &[0.0; 21], &truth);
        failed.failure = Some((3, Error::Singular("x")));
        assert!(track_lost(&failed, &truth, &crit));
    }

    fn record(trial: usize, offsets: &[f64]) -> TrialRecord {
        let truth: Vec<Vec4> = (0..offsets.len())
            .map(|k| Vec4::new(1000.0 + k as f64, 0.0, 1.0, 0.0))
            .collect();
        TrialRecord {
            trial,
            seed: 0,
            tracks: vec![track(FilterKind::Pkf, offsets, &truth)],
            pcrlb: vec![(2.0, 1.0); offsets.len()],
            truth,
        }
    }

    #[test]
    fn aggregate_excludes_lost_trials_from_mse() {
        let good = [record(0, &[3.0; 12]), record(1, &[1.0; 12])];
        let opts = AggregateOptions::default();
        let base = aggregate(&good, FilterKind::Pkf, &opts).unwrap();
        assert_eq!(base.len(), 11);
        assert_eq!(base.mse_pos[0], Some(5.0));
        assert_eq!(base.anees[0], Some(10.0 / 8.0));
        assert_eq!(base.pcrlb_pos[4], 2.0);
        assert_eq!(base.lost, 0);
        assert_eq!(base.loss_ci, None);

        let mut with_lost = good.to_vec();
        with_lost.push(record(2, &[5000.0; 12]));
        let s = aggregate(&with_lost, FilterKind::Pkf, &opts).unwrap();
        assert_eq!(s.lost, 1);
        assert_eq!(s.mse_pos, base.mse_pos);
        assert_eq!(s.mse_pos_ci, base.mse_pos_ci);
        // ANEES still counts the lost trial by default.
        assert!(s.anees[0].unwrap() > 1e6);

        let excl = aggregate(
            &with_lost,
            FilterKind::Pkf,
            &AggregateOptions {
                anees_excludes_lost: true,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(excl.anees, base.anees);
        assert!(aggregate(&good, FilterKind::Ekf, &opts).is_err());
    }
}
