//! Monte Carlo solvers for electrical impedance tomography forward problems
//! built on reflecting diffusions, and estimators of effective conductivity
//! for stationary random media.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod diffusion;
pub mod error;
pub mod feynman_kac;
pub mod geometry;
pub mod homogenize;
pub mod linalg;
pub mod media;
pub mod parallel;
pub mod reference;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
