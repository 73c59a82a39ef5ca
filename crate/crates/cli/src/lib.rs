//! Batch harness around `laplace-core`: synthetic data, MAP training, Laplace
//! fitting and calibration, the curvature × calibration sweep, the
//! function-space demo and CSV artifacts.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fsp_run;
pub mod laplace;
pub mod output;
pub mod plot;
pub mod sweep;
pub mod train;

pub use error::{CliError, Result};
