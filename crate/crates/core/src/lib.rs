//! Imbalanced binary classification with a variational latent classifier,
//! a latent-space adversary and resampling baselines.

pub mod adversary;
pub mod autodiff;
pub mod baseline;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod report;
pub mod resampling;

pub use error::{Error, Result};
