//! Multitask kernel regression with task-similarity coupling, confidence
//! widths, and the bandit and active-learning policies built on them.

pub mod cholesky;
pub mod confidence;
pub mod envs;
mod error;
pub mod policies;
pub mod posterior;
pub mod rng;
pub mod sim;
pub mod taskalgebra;

pub use error::{Error, Result};
