//! Decoupled exploration and exploitation for reinforcement learning on
//! hard-exploration grid tasks.
//!
//! An exploration policy trained on extrinsic plus intrinsic reward collects
//! experience; a separate exploitation policy learns off-policy from the
//! extrinsic part only. Baseline A2C, PPO and DQN agents, six intrinsic
//! reward models, the DeepSea and Hallway tasks and an evaluation harness
//! are included.

pub mod agents;
pub mod config;
pub mod decoupled;
pub mod envs;
pub mod error;
pub mod exec;
pub mod harness;
pub mod intrinsic;
pub mod nn;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use harness::{run_experiment, EvalRecord, RunLog};
