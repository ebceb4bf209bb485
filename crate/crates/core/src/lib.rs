//! Analytical model of freeway on-ramp merging: effective discharge rate,
//! delay and crash-risk metrics, a dynamic-programming merge controller and
//! a Newell microsimulation used to check the closed forms.

pub mod calibration;
pub mod config;
pub mod discharge;
pub mod dp;
pub mod error;
pub mod metrics;
pub mod sim;
pub mod traffic;
pub mod units;

pub use error::{Error, Result};
