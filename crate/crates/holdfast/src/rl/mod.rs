//! Residual grasp-adaptation policy: recurrent actor-critic, PPO training,
//! replay-driven environment, and checkpointing.

pub mod checkpoint;
pub mod env;
pub mod net;
pub mod normalizer;
pub mod policy;
pub mod ppo;
