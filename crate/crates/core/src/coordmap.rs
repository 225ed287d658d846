//! Bijective maps between state coordinates and measurement coordinates.
//!
//! A [`CoordinateMap`] bundles the pair `h: X → Z` (state to measurement)
//! and `g: Z → X` (measurement to state) together with the Jacobian of `g`
//! and its inverse. The Jacobian of `h` is never differentiated directly;
//! it is the inverse of the Jacobian of `g` evaluated at `h(x)`.
//!
//! Measurement vectors are ordered so that the `M` observed coordinates come
//! first. For the polar map that order is `(r, α, ṙ, ċ)`: range/bearing
//! observes the first two, range/bearing/range-rate the first three, and
//! cross-range rate `ċ = r α̇` is never observed.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{inverse4, Mat4, Vec4};

/// Dimension of both coordinate systems.
pub const DIM: usize = 4;

/// Index of the bearing coordinate in polar measurement vectors.
pub const BEARING: usize = 1;

/// Target position and velocity in polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarState {
    /// Range, metres.
    pub r: f64,
    /// Bearing, radians, counter-clockwise from +x.
    pub alpha: f64,
    /// Range rate, m/s.
    pub rdot: f64,
    /// Cross-range rate `r α̇`, m/s.
    pub cdot: f64,
}

/// Target position and velocity in Cartesian coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub x: f64,
    pub y: f64,
    pub xdot: f64,
    pub ydot: f64,
}

impl PolarState {
    pub fn new(r: f64, alpha: f64, rdot: f64, cdot: f64) -> Self {
        Self {
            r,
            alpha,
            rdot,
            cdot,
        }
    }

    pub fn to_vector(&self) -> Vec4 {
        Vec4::new(self.r, self.alpha, self.rdot, self.cdot)
    }

    pub fn from_vector(v: &Vec4) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl CartesianState {
    pub fn new(x: f64, y: f64, xdot: f64, ydot: f64) -> Self {
        Self { x, y, xdot, ydot }
    }

    pub fn to_vector(&self) -> Vec4 {
        Vec4::new(self.x, self.y, self.xdot, self.ydot)
    }

    pub fn from_vector(v: &Vec4) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// `g`: polar to Cartesian.
pub fn polar_to_cartesian(z: &PolarState) -> Result<CartesianState> {
    if !(z.r > 0.0) {
        return Err(Error::Domain(format!(
            "range must be positive, got {}",
            z.r
        )));
    }
    Ok(CartesianState::from_vector(&polar_g(&z.to_vector())))
}

/// `h`: Cartesian to polar, bearing in `(-π, π]`.
pub fn cartesian_to_polar(x: &CartesianState) -> Result<PolarState> {
    polar_h(&x.to_vector()).map(|v| PolarState::from_vector(&v))
}

/// Jacobian of `g` at `z`.
pub fn jacobian_g(z: &PolarState) -> Mat4 {
    polar_jacobian_g(&z.to_vector())
}

/// Closed-form inverse of [`jacobian_g`]; this is also the Jacobian of `h`
/// at `g(z)`.
pub fn jacobian_g_inverse(z: &PolarState) -> Result<Mat4> {
    polar_jacobian_g_inverse(&z.to_vector())
}

// `g` is a plain formula and is evaluated for any sign of r. A negative range
// reflects to (-r, α+π, -ṙ, -ċ), which maps to the same Cartesian point, so
// sigma points that cross the origin stay on the bijection's double cover.
fn polar_g(z: &Vec4) -> Vec4 {
    let (r, a, rd, cd) = (z[0], z[1], z[2], z[3]);
    let (s, c) = a.sin_cos();
    Vec4::new(r * c, r * s, rd * c - cd * s, rd * s + cd * c)
}

fn polar_h(x: &Vec4) -> Result<Vec4> {
    let (px, py, vx, vy) = (x[0], x[1], x[2], x[3]);
    let r = px.hypot(py);
    if !(r > 0.0) {
        return Err(Error::Singular("position at sensor origin"));
    }
    Ok(Vec4::new(
        r,
        py.atan2(px),
        (px * vx + py * vy) / r,
        (px * vy - py * vx) / r,
    ))
}

fn polar_jacobian_g(z: &Vec4) -> Mat4 {
    let (r, a, rd, cd) = (z[0], z[1], z[2], z[3]);
    let (s, c) = a.sin_cos();
    #[rustfmt::skip]
    let j = Mat4::new(
        c,   -r * s,           0.0, 0.0,
        s,    r * c,           0.0, 0.0,
        0.0, -rd * s - cd * c, c,  -s,
        0.0,  rd * c - cd * s, s,   c,
    );
    j
}

fn polar_jacobian_g_inverse(z: &Vec4) -> Result<Mat4> {
    let (r, a, rd, cd) = (z[0], z[1], z[2], z[3]);
    if r == 0.0 || !r.is_finite() {
        return Err(Error::Singular("polar Jacobian at zero range"));
    }
    let (s, c) = a.sin_cos();
    let ri = 1.0 / r;
    #[rustfmt::skip]
    let j = Mat4::new(
        c,              s,             0.0, 0.0,
        -ri * s,        ri * c,        0.0, 0.0,
        -cd * ri * s,   cd * ri * c,   c,   s,
        rd * ri * s,   -rd * ri * c,  -s,   c,
    );
    Ok(j)
}

/// A bijective pair of coordinate maps on ℝ⁴.
pub trait CoordinateMap: Send + Sync {
    /// `h`: state to measurement coordinates.
    fn to_measurement(&self, x: &Vec4) -> Result<Vec4>;

    /// `g`: measurement to state coordinates.
    fn to_state(&self, z: &Vec4) -> Vec4;

    fn jacobian_g(&self, z: &Vec4) -> Mat4;

    fn jacobian_g_inverse(&self, z: &Vec4) -> Result<Mat4> {
        inverse4(&self.jacobian_g(z), "Jacobian of g")
    }

    /// Jacobian of `h` at `x`, taken as `J_g⁻¹(h(x))`.
    fn jacobian_h(&self, x: &Vec4) -> Result<Mat4> {
        self.jacobian_g_inverse(&self.to_measurement(x)?)
    }

    /// Indices of measurement coordinates that are angles; residuals in
    /// these coordinates wrap to `(-π, π]`.
    fn angular_coordinates(&self) -> &'static [usize] {
        &[]
    }

    /// Multiplicative debiasing matrix known in closed form for the
    /// measurement covariance `r_z`, if this map has one.
    fn closed_form_debias(&self, _r_z: &Mat4) -> Option<Mat4> {
        None
    }

    /// `a - b` in measurement coordinates with angular entries wrapped.
    fn measurement_residual(&self, a: &Vec4, b: &Vec4) -> Vec4 {
        let mut d = a - b;
        for &i in self.angular_coordinates() {
            d[i] = wrap_angle(d[i]);
        }
        d
    }
}

/// Stationary sensor at the origin measuring `(r, α, ṙ, ċ)` of a planar
/// constant-velocity target with Cartesian state `(x, y, ẋ, ẏ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolarMap;

impl CoordinateMap for PolarMap {
    fn to_measurement(&self, x: &Vec4) -> Result<Vec4> {
        polar_h(x)
    }

    fn to_state(&self, z: &Vec4) -> Vec4 {
        polar_g(z)
    }

    fn jacobian_g(&self, z: &Vec4) -> Mat4 {
        polar_jacobian_g(z)
    }

    fn jacobian_g_inverse(&self, z: &Vec4) -> Result<Mat4> {
        polar_jacobian_g_inverse(z)
    }

    fn angular_coordinates(&self) -> &'static [usize] {
        &[BEARING]
    }

    /// With bearing noise independent of the other coordinates,
    /// `E[g(z)] = e^{-σ_α²/2} x`, so `B = e^{σ_α²/2} I`.
    fn closed_form_debias(&self, r_z: &Mat4) -> Option<Mat4> {
        let var_alpha = r_z[(BEARING, BEARING)];
        Some(Mat4::identity() * (0.5 * var_alpha).exp())
    }
}

/// Measurement coordinates equal to state coordinates. Used for the linear
/// sanity model, where every filter must reduce to the Kalman filter.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl CoordinateMap for IdentityMap {
    fn to_measurement(&self, x: &Vec4) -> Result<Vec4> {
        Ok(*x)
    }

    fn to_state(&self, z: &Vec4) -> Vec4 {
        *z
    }

    fn jacobian_g(&self, _z: &Vec4) -> Mat4 {
        Mat4::identity()
    }

    fn jacobian_g_inverse(&self, _z: &Vec4) -> Result<Mat4> {
        Ok(Mat4::identity())
    }

    fn closed_form_debias(&self, _r_z: &Mat4) -> Option<Mat4> {
        Some(Mat4::identity())
    }
}

/// The four blocks of `J_g⁻ᵗ` split at the observed count `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseTransposeBlocks {
    /// Upper-left `M×M`.
    pub observed: DMatrix<f64>,
    /// Upper-right `M×(N−M)`.
    pub observed_unobserved: DMatrix<f64>,
    /// Lower-left `(N−M)×M`.
    pub unobserved_observed: DMatrix<f64>,
    /// Lower-right `(N−M)×(N−M)`.
    pub unobserved: DMatrix<f64>,
}

impl InverseTransposeBlocks {
    pub fn reassemble(&self) -> Mat4 {
        let m = self.observed.nrows();
        let mut out = Mat4::zeros();
        for i in 0..DIM {
            for j in 0..DIM {
                out[(i, j)] = match (i < m, j < m) {
                    (true, true) => self.observed[(i, j)],
                    (true, false) => self.observed_unobserved[(i, j - m)],
                    (false, true) => self.unobserved_observed[(i - m, j)],
                    (false, false) => self.unobserved[(i - m, j - m)],
                };
            }
        }
        out
    }
}

/// Partitions `J_g⁻ᵗ` (the transpose of `j_g_inv`) into observed and
/// unobserved blocks.
pub fn partition_inverse_transpose(j_g_inv: &Mat4, m: usize) -> Result<InverseTransposeBlocks> {
    check_observed_count(m)?;
    let t = j_g_inv.transpose();
    let u = DIM - m;
    let block = |r0: usize, c0: usize, nr: usize, nc: usize| {
        DMatrix::from_fn(nr, nc, |i, j| t[(r0 + i, c0 + j)])
    };
    Ok(InverseTransposeBlocks {
        observed: block(0, 0, m, m),
        observed_unobserved: block(0, m, m, u),
        unobserved_observed: block(m, 0, u, m),
        unobserved: block(m, m, u, u),
    })
}

pub fn check_observed_count(m: usize) -> Result<()> {
    if (1..=DIM).contains(&m) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "observed count must be in 1..=4, got {m}"
        )))
    }
}
