//! Decentralized swarm optimization with trajectory-driven coefficient and
//! cooperation-weight adaptation.
//!
//! Agents on a fixed communication graph each run a small particle swarm on
//! their own objective, publish a representative state, and fuse the states
//! of their neighbors with row-stochastic weights. A guidance provider
//! (a deterministic heuristic, or a locally served language model) retunes
//! the swarm coefficients and cooperation weights at iterations chosen by a
//! phased scheduler.

pub mod analysis;
pub mod config;
pub mod cooperation;
pub mod engine;
pub mod error;
pub mod guidance;
pub mod history;
pub mod objectives;
pub mod scheduler;
pub mod swarm;
pub mod topology;
pub mod wsn;

pub use error::{Error, Result};
