//! Multi-target pedestrian tracking from foreground pixels.
//!
//! Pixels are grouped by a variational Bayesian Gaussian mixture, targets are
//! predicted with a social-force particle filter, and clusters are associated
//! to targets through k-best joint hypotheses.

pub mod assignment;
pub mod association;
pub mod config;
pub mod coords;
pub mod error;
pub mod foreground;
pub mod io;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod sim;
pub mod socialforce;
pub mod tracker;
pub mod vbcluster;

pub use error::{Error, Result};
