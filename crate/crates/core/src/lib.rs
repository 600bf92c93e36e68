//! Numerical laboratory for normal approximation of Langevin Monte Carlo
//! ergodic averages.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod decomposition;
pub mod error;
pub mod linalg;
pub mod linear;
pub mod pair;
pub mod potential;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod stein;
pub mod tolerances;
pub mod wasserstein;

pub use error::{Error, Result};
