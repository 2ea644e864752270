//! Device-aware federated learning simulator.
//!
//! Devices are profiled and scored, clustered into capability tiers, and each
//! tier trains a slice of a nested MLP family. Cluster models are merged on
//! shared coordinates into one global model.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod aggregation;
pub mod clustering;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod models;
pub mod profiles;
pub mod rng;
pub mod simulator;
pub mod training;

pub use config::ExperimentConfig;
pub use error::{AsaError, Result};
pub use exec::ExecMode;
pub use models::{ParamVector, Rung};
pub use simulator::{Method, SimState, Simulator};
