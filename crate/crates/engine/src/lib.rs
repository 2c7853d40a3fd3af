//! Online model-based reinforcement learning for trajectory tracking.
//!
//! The engine interleaves two online learners per episode: a neural dynamics
//! model fitted to a growing replay buffer by one-step prediction error, and
//! a control policy updated with an analytical closed-loop gradient assembled
//! from the model's Jacobians along the real rollout, preconditioned by a
//! trust-region matrix. Simulated plants (linear, pendulum, two-link actuated
//! arm) stand in for the physical system, and a diagnostics layer measures
//! gradient error, regret, and data-distribution drift.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod gradient;
pub mod logging;
pub mod model;
pub mod nn;
pub mod plants;
pub mod policy;
pub mod precond;
pub mod reference;
pub mod replay;
pub mod rollout;
pub mod seed;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{EngineError, Result};
