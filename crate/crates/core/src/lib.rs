//! Core algorithms for finite-dimensional quantum state tomography.
//!
//! The crate reconstructs N-dimensional density matrices (N = 2 or 3) from
//! projective measurement counts by constrained maximum likelihood, and
//! provides everything needed to study the estimator itself: measurement
//! basis construction (mutually unbiased and deliberately biased sets),
//! seeded sample simulation, asymptotic inference (observed Fisher
//! information, delta method, t and Wald statistics), and a Monte Carlo
//! harness with summary statistics and kernel density estimation.
//!
//! Everything here is `no_std` + `alloc`: pure computation with no IO.
//! File formats, configuration, and parallel execution live in the
//! companion CLI crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod algebra;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod linalg;
pub(crate) mod math;
pub mod measurement;
pub mod rng;
pub mod sampling;
pub mod state;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;
