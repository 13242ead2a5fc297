//! Batched bandit algorithms for heavy-tailed rewards.

pub mod error;
pub mod estimators;
pub mod finite_arm;
pub mod grids;
pub mod harness;
pub mod lipschitz;
pub mod rewards;
mod util;

pub use error::{Error, Result};
