//! Planning core: historical data model, similarity belief, the implicit
//! MDP, the MCTS-DPW planner, ensemble voting and the synthetic benchmark.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod data;
pub mod error;

pub use error::{Error, Result};
pub mod config;
pub mod ensemble;
pub mod env;
pub mod planner;
pub mod report;
pub mod scenario;
pub mod synthetic;

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
