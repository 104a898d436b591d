//! Device placement for sharded tensor dataflow graphs executed by a
//! work-conserving dynamic scheduler.
//!
//! The crate provides the graph model and builders ([`graph`]), an
//! event-driven scheduler simulator ([`sim`]), classical placement engines
//! ([`heuristics`]), a small reverse-mode autodiff library ([`nn`]), the
//! dual select/place policy ([`policy`]), and its staged training pipeline
//! ([`training`]).

pub mod assignment;
#[cfg(feature = "cli")]
pub mod cli;
pub mod engines;
pub mod fixtures;
pub mod graph;
pub mod heuristics;
pub mod nn;
pub mod policy;
pub mod sim;
pub mod stats;
pub mod training;

pub use assignment::{Assignment, AssignmentRecord};
pub use graph::DataflowGraph;
pub use sim::{ClusterSpec, Schedule, Strategy};
