//! Thompson sampling with dynamic episodes (TSDE) for learning-based
//! linear-quadratic control, its time-varying variant, and a seeded Monte
//! Carlo harness for regret experiments.
//!
//! Module map:
//! - [`control`]: Riccati solver, optimal gain, spectral radius, support sets.
//! - [`bayes`]: Gaussian posterior recursions and restricted sampling.
//! - [`tsde`]: the episode schedule and the learning control loop.
//! - [`sim`]: true plant, jump process, regret records.
//! - [`harness`]: configuration, presets, parallel runs, aggregation, output.

pub mod bayes;
pub mod control;
pub mod error;
pub mod harness;
pub mod sim;
pub mod tsde;

pub use error::{Error, Result};
