//! Coupled stochastic approximation for misspecified optimization and
//! variational inequality problems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod problems;
pub mod reference;
pub mod rng;
pub mod sets;
pub mod solvers;
pub mod steplengths;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
