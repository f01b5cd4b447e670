//! Bayesian calibration toolkit for numerical simulators.

pub mod config;
pub mod design;
pub mod error;
pub mod estimators;
pub mod gp;
pub mod io;
pub mod kernel;
pub mod mcmc;
pub mod models;
pub mod optim;
pub mod seeding;
pub mod seq;
pub mod sim;
pub mod testbed;
pub mod validate;
pub mod workflow;

pub use error::{CalError, Result};
