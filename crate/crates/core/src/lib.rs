//! Goodness-of-fit tests for the volatility of noisy high-frequency data.

// `!(x > 0.0)` is used on purpose so that NaN takes the error branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod bootstrap;
pub mod error;
pub mod experiment;
pub mod func;
pub mod gof_abs;
pub mod gof_linear;
pub mod gof_nonlinear;
pub mod kernel;
pub mod preavg;
pub mod projection;
pub mod report;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
