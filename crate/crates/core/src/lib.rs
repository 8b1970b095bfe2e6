//! Predictive power allocation for mobile video streaming.
//!
//! A user drives past a line of base stations while streaming a segmented
//! video. Each one-second frame the agent picks an average rate; within the
//! frame the base station water-fills over Rayleigh slots to deliver that
//! rate at minimum energy. The agent must keep every segment buffered before
//! its playback deadline.

pub mod agents;
pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod mobility;
pub mod power_math;
pub mod rng;
pub mod tinynet;

pub use error::{Error, Result};
