//! Sparse Gaussian-process multiple-instance classification with
//! Gaussian-scale-mixture augmentation.

pub mod cli;
pub mod data;
pub mod error;
pub mod gsm;
pub mod hyperopt;
pub mod inference;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod quadrature;
pub mod verification;

pub use error::{Error, Result};
