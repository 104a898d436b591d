use thiserror::Error;

use super::ClusterSpec;
use crate::graph::{DataflowGraph, VertexId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimateError {
    #[error("predecessor {pred} of vertex {vertex} has not been placed")]
    UnplacedPredecessor { vertex: VertexId, pred: VertexId },
}

/// Greedy earliest-start timeline used by list scheduling and by the
/// placement policy's device features.
///
/// Vertices are placed one at a time in any order that places predecessors
/// first. A placed vertex starts once its inputs have arrived on its device
/// and an exec slot there is free, and runs for its nominal duration. Inputs
/// finish at time zero everywhere. Link contention is not modeled.
#[derive(Debug, Clone)]
pub struct EarliestStartModel<'a> {
    graph: &'a DataflowGraph,
    cluster: &'a ClusterSpec,
    device: Vec<Option<usize>>,
    start: Vec<f64>,
    finish: Vec<f64>,
    slot_free: Vec<Vec<f64>>,
    assigned_flops: Vec<u64>,
}

impl<'a> EarliestStartModel<'a> {
    pub fn new(graph: &'a DataflowGraph, cluster: &'a ClusterSpec) -> Self {
        let devices = cluster.device_count();
        Self {
            graph,
            cluster,
            device: vec![None; graph.len()],
            start: vec![0.0; graph.len()],
            finish: vec![0.0; graph.len()],
            slot_free: (0..devices).map(|d| vec![0.0; cluster.exec_slots[d]]).collect(),
            assigned_flops: vec![0; devices],
        }
    }

    pub fn device_of(&self, v: VertexId) -> Option<usize> {
        self.device[v]
    }

    pub fn start_of(&self, v: VertexId) -> f64 {
        self.start[v]
    }

    pub fn finish_of(&self, v: VertexId) -> f64 {
        self.finish[v]
    }

    pub fn assigned_flops(&self, d: usize) -> u64 {
        self.assigned_flops[d]
    }

    pub fn is_placed(&self, v: VertexId) -> bool {
        self.device[v].is_some()
    }

    /// Time at which every input of `v` is present on `d`.
    pub fn data_ready(&self, v: VertexId, d: usize) -> Result<f64, EstimateError> {
        let mut t = 0.0f64;
        for &p in self.graph.preds(v) {
            if self.graph.is_input(p) {
                continue;
            }
            let pd = self.device[p].ok_or(EstimateError::UnplacedPredecessor { vertex: v, pred: p })?;
            let arrive = self.finish[p] + self.cluster.transfer_ms(self.graph.vertex(p).output_bytes, pd, d);
            t = t.max(arrive);
        }
        Ok(t)
    }

    fn free_slot(&self, d: usize) -> (usize, f64) {
        self.slot_free[d]
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, t)| if t < best.1 { (i, t) } else { best })
    }

    /// Earliest time `v` could start on `d` given everything placed so far.
    pub fn earliest_start(&self, v: VertexId, d: usize) -> Result<f64, EstimateError> {
        if self.graph.is_input(v) {
            return Ok(0.0);
        }
        Ok(self.data_ready(v, d)?.max(self.free_slot(d).1))
    }

    /// Device with the smallest earliest start for `v`; ties go to the
    /// lowest device id.
    pub fn best_device(&self, v: VertexId) -> Result<(usize, f64), EstimateError> {
        let mut best = (0, f64::INFINITY);
        for d in 0..self.cluster.device_count() {
            let t = self.earliest_start(v, d)?;
            if t < best.1 {
                best = (d, t);
            }
        }
        Ok(best)
    }

    /// Commits `v` to `d` and returns its `(start, finish)`.
    pub fn place(&mut self, v: VertexId, d: usize) -> Result<(f64, f64), EstimateError> {
        if self.graph.is_input(v) {
            self.device[v] = Some(d);
            return Ok((0.0, 0.0));
        }
        let ready = self.data_ready(v, d)?;
        let (slot, free) = self.free_slot(d);
        let start = ready.max(free);
        let finish = start + self.cluster.exec_ms(self.graph.vertex(v).flops, d);
        self.slot_free[d][slot] = finish;
        self.device[v] = Some(d);
        self.start[v] = start;
        self.finish[v] = finish;
        self.assigned_flops[d] += self.graph.vertex(v).flops;
        Ok((start, finish))
    }
}
