//! Detection-rate / inspection-capacity tradeoffs for streaming binary
//! classification with a limited inspection budget.
//!
//! Events arrive on `[0, τ]` as a non-homogeneous Poisson process, each
//! carrying a classifier score in `[0, 1]` and a hidden binary label. An
//! inspector can examine `n_k = ⌊k·Λ(τ)⌋` of them. The crate provides
//!
//! - [`nhpp`]: piecewise-linear intensities, exact cumulative rate and its
//!   inverse, arrival simulation, thinning and rate estimation;
//! - [`scoredist`]: continuous piecewise-linear score CDFs, the class
//!   mixture and the partial expectation `φ(α) = E[max(S − α, 0)]`;
//! - [`curves`]: the critical-curve ODE system for dynamic thresholds;
//! - [`policies`]: static, dynamic, random and batch selection run on
//!   episodes, plus empirical detection rates;
//! - [`bounds`]: analytical and Monte Carlo detection-rate bounds.

pub mod bounds;
pub mod curves;
mod error;
pub mod nhpp;
pub mod policies;
pub mod rng;
pub mod scoredist;

pub use error::{Error, Result};
