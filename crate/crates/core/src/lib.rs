//! Transition densities of diffusions with linear-growth drift and of their
//! Euler-type Markov-chain discretizations.
//!
//! The library computes the continuous density through a truncated parametrix
//! series built on frozen Gaussian densities transported along the drift
//! flow, computes the chain density exactly on grids by Chapman-Kolmogorov
//! recursion, and provides the experiment harness that measures the uniform
//! distance between the two as the step count grows.

pub mod chain;
pub mod error;
pub mod flow;
pub mod frozen;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod parametrix;
pub mod polykernel;

pub use error::{Error, Result};
