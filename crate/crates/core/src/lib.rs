//! Simulation of bifurcating Markov chains on regular binary trees and
//! estimation of their invariant density with a locally selected kernel
//! bandwidth.
//!
//! The crate is organised bottom-up:
//!
//! * [`tree`]: heap-indexed binary tree arithmetic and flat sample storage.
//! * [`models`]: the Beta bifurcating autoregressive model and the
//!   growth-fragmentation size model, with counter-based RNG streams.
//! * [`kernel`]: product kernels, bandwidths, norms and kernel convolution.
//! * [`estimator`]: the kernel density estimator, bandwidth grids and the
//!   Goldenshluger–Lepski local selection rule.
//! * [`calibration`]: data-driven choice of the penalty constant by
//!   bandwidth-jump detection.
//! * [`analysis`]: risk harness, rate regression, Bernstein-type bounds and
//!   the splitting-rate estimator.

pub mod analysis;
pub mod calibration;
pub mod estimator;
pub mod kernel;
pub mod models;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod tree;

mod error;

pub use error::{Error, Result};
