//! Uncertainty quantification for heteroscedastic neural regressors.
//!
//! The crate trains small feed-forward networks that predict a Gaussian mean
//! and log-variance, combines several of them (MC-Dropout passes, deep
//! ensembles or bootstrap ensembles) into aleatoric, epistemic and total
//! uncertainty, and scores those uncertainties with ranking and calibration
//! metrics.

pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Result, UqError};
