use thiserror::Error;

use crate::assignment::Assignment;
use crate::graph::DataflowGraph;
use crate::sim::{makespan, ClusterSpec, Strategy};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ExecutorError(pub String);

/// Anything that can run an assignment and report its runtime.
pub trait Executor: Sync {
    fn name(&self) -> String;

    /// Observed runtime in milliseconds. `run_id` distinguishes repeated
    /// runs, for executors with run-to-run variation.
    fn run(&self, graph: &DataflowGraph, a: &Assignment, run_id: u64) -> Result<f64, ExecutorError>;
}

/// Simulator-backed executor. With a jittered cluster each `run_id` draws
/// fresh durations, which makes it a stand-in for a real system.
#[derive(Debug, Clone)]
pub struct SimExecutor {
    pub cluster: ClusterSpec,
    pub strategy: Strategy,
}

impl SimExecutor {
    pub fn new(cluster: ClusterSpec, strategy: Strategy) -> Self {
        Self { cluster, strategy }
    }
}

impl Executor for SimExecutor {
    fn name(&self) -> String {
        match self.cluster.jitter {
            crate::sim::Jitter::None => "simulator".into(),
            crate::sim::Jitter::Lognormal { sigma, .. } => format!("jittered simulator (sigma {sigma})"),
        }
    }

    fn run(&self, graph: &DataflowGraph, a: &Assignment, run_id: u64) -> Result<f64, ExecutorError> {
        makespan(graph, a, &self.cluster, self.strategy, run_id).map_err(|e| ExecutorError(e.to_string()))
    }
}
