//! Decentralized coordination of connected automated vehicles along a
//! corridor of signal-free intersections.
//!
//! The crate has two halves. The planning half computes, per vehicle,
//! safety-feasible merging-zone arrival times against a coordinator
//! snapshot ([`scheduler`], [`coordinator`]) and turns them into
//! minimum-control-effort trajectories in closed form ([`ocp`]). The
//! evaluation half replays whole traffic flows through the corridor,
//! monitors safety independently, compares against a signalized
//! car-following baseline, and aggregates travel-time, delay and fuel
//! metrics ([`sim`], [`baseline`], [`metrics`]).
//!
//! See the `examples/` directory for runnable entry points per capability.

pub mod baseline;
pub mod cli;
pub mod coordinator;
pub mod error;
pub mod metrics;
pub mod ocp;
pub mod oracle;
pub mod scenario;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
