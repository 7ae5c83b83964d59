//! Latent subspace estimation for multi-index models with first- and
//! second-order Stein scores.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod scores;
pub mod simulation;
pub mod special;

pub use error::{Error, Result};
