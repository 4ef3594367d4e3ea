//! Covariate-adjusted estimators of the treatment-arm mean under complete
//! randomization, with exact randomization moments, variance estimators,
//! an exhaustive-enumeration oracle, simulation harnesses and the
//! adversarial quadratic-form search.
//!
//! The finite population `(X, y(1))` is held fixed; the treatment
//! assignment vector is the only source of randomness.

pub mod adversarial;
pub mod check;
pub mod config;
pub mod design;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod io;
pub mod moments;
pub mod numeric;
pub mod optim;
pub mod oracle;
pub mod randomization;
pub mod rng;
pub mod varest;

pub use error::{Error, Result};
