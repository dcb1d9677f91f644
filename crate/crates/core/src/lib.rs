//! Deep BSDE pricing engine.
//!
//! Option pricing problems are posed as time-discrete forward-backward SDE
//! control problems. The hedging controls (and, for random initial states,
//! the initial-value function) are small feedforward networks trained by
//! stochastic gradient methods over simulated risk-factor paths.

pub mod analytics;
pub mod api;
pub mod config;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod instruments;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod solver;
pub mod svg;
pub mod timegrid;

pub use error::{Error, Result};
