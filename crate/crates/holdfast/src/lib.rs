//! Desk-scale grasp synthesis, stability scoring, and residual-policy
//! adaptation for tool-like objects in a simplified rigid-body simulation.

pub mod demo;
pub mod error;
pub mod grasp;
pub mod hand;
pub mod math;
pub mod metrics;
pub mod object;
pub mod physics;
pub mod provenance;
pub mod rl;
pub mod shapes;
pub mod stability;
pub mod task;
#[cfg(test)]
pub(crate) mod testutil;
pub mod trace;
pub mod trajectory;

pub use error::{Error, Result};
