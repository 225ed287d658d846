//! Tracking with converted measurements and precision-matrix updates.
//!
//! A polar sensor observes some leading subset of `(r, α, ṙ, ċ)` for a
//! planar constant-velocity target. [`filters::pkf_step`] converts each
//! observation to Cartesian coordinates, removes its bias, and fuses it
//! through a precision matrix whose rank matches the number of observed
//! coordinates. [`filters::spkf_step`] and [`filters::ekf_step`] are the
//! baselines, and [`experiment`] runs Monte Carlo comparisons of all three.
//!
//! ```
//! use pkf::experiment::{parse_config, run_experiment};
//!
//! let config = parse_config(None, &[("trials", "4"), ("n_updates", "10")]).unwrap();
//! let out = run_experiment(&config, Some(1)).unwrap();
//! assert_eq!(out.series.len(), 3);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convert;
pub mod coordmap;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod linalg;
pub mod metrics;
pub mod sigma;
pub mod sim;

pub use error::{Error, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coordinates.md")]
    mod coordinates {}
    #[doc = include_str!("../../../book/src/sigma-points.md")]
    mod sigma_points {}
    #[doc = include_str!("../../../book/src/converted-measurements.md")]
    mod converted_measurements {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
