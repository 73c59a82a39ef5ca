//! Matrix-free Laplace approximations for small neural networks.
//!
//! The pipeline runs bottom-up: [`net`] differentiates the model,
//! [`curvature`] builds and compresses curvature-vector products,
//! [`posterior`] turns an estimate into a Gaussian over weights,
//! [`pushforward`] and [`predictive`] carry it to outputs, and
//! [`evidence`] and [`calibration`] select the hyperparameters.
//! [`fsp`] implements the function-space variant with Gaussian-process priors.

pub mod calibration;
pub mod curvature;
pub mod error;
pub mod evidence;
pub mod fsp;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod posterior;
pub mod predictive;
pub mod pushforward;
pub mod tensor;

pub use error::{Error, Result};
