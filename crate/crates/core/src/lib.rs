//! Randomly perturbed iterated function systems on `[-1, 1)`.
//!
//! The crate samples the invariant measures of perturbed and unperturbed
//! systems, evaluates the closed-form L2 density bounds, estimates L2 norms
//! through the correlation form `(mu, mu)_r`, and simulates the skew product
//! on the cube `[-1, 1)^3` whose x-projection approximates the perturbed law.

// `!(x < y)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(feature = "cli")]
pub mod cli;
pub mod constants;
pub mod error;
pub mod ifs;
pub mod measure;
pub(crate) mod rng;
pub mod sampler;
pub mod skewprod;
pub mod study;

pub use constants::{bounds_report, BoundsReport, Theorem};
pub use error::{IfsError, Result};
pub use ifs::{IfsSpec, MapSpec, Perturbation, ValidationReport};
pub use measure::{correlation_form, ks_distance, l2_estimate, EmpiricalMeasure};
pub use rng::stream_rng;
pub use sampler::{sample_x_lambda, sample_z_epsilon, SampleBatch};
