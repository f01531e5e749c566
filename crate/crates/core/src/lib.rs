//! Density deconvolution from grouped sums.
//!
//! Each observation is the sum of K i.i.d. draws from an unknown density f.
//! The estimator takes the K-th root of the empirical characteristic function
//! along its distinguished logarithm and inverts it up to a spectral cutoff.

pub mod bandwidth;
pub mod charfn;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod inversion;
pub mod rng;
pub mod rootlog;
pub mod samples;
pub mod special;

pub use error::{Error, Result};
