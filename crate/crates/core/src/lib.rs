//! Rare-failure search for a learned braking controller.
//!
//! A DDPG agent learns to brake a point-mass vehicle before an obstacle.
//! Failures of the trained agent are then hunted with plain Monte Carlo, a
//! learned failure predictor, a Gaussian mixture over known failures, or
//! the two guided methods combined.

pub mod avf;
pub mod config;
pub mod ddpg;
pub mod error;
pub mod gmm;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod rundir;
pub mod search;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
