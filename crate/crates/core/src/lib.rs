//! Numerical laboratory for the stationary measure of open ASEP in the fan
//! region `a*b < 1`.
//!
//! The crate computes the same objects along independent routes so that they
//! can be checked against each other:
//!
//! * [`mpa`] builds the Enaud–Derrida matrices and evaluates stationary
//!   probabilities, partition functions and height marginals;
//! * [`twolayer`] works with the ordered pair of Bernoulli paths whose first
//!   layer carries the ASEP height function, through a gap transfer matrix,
//!   brute-force enumeration and an exact forward–backward sampler;
//! * [`ctmc`] simulates the particle dynamics directly;
//! * [`bridges`] implements uniform Bernoulli bridges, their Gibbs
//!   resampling and monotone couplings, and exact checks of the correlation
//!   inequalities they satisfy;
//! * [`ratefn`] evaluates the large-deviation rate function of the height
//!   profile in closed form, in pair form and through its variational and
//!   finite-dimensional versions;
//! * [`experiments`] ties these together into reproducible verdicts.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridges;
pub mod config;
pub mod ctmc;
pub mod error;
pub mod experiments;
pub mod mpa;
pub mod params;
pub mod qkernel;
pub mod ratefn;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod twolayer;

pub use error::{AsepError, Result};
pub use params::{BoundaryRates, FanParams, Phase, PhaseInfo, Region};
pub use qkernel::NumericMode;
pub use scalar::Scalar;
