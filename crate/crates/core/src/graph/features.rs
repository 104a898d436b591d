use serde::{Deserialize, Serialize};

use super::{DataflowGraph, VertexId};

/// Bytes-to-cost multiplier applied to every edge.
pub const DEFAULT_COMM_FACTOR: f64 = 4.0;

/// Columns per vertex row.
pub const FEATURE_COUNT: usize = 5;

/// Per-vertex static features.
///
/// Column order: compute cost, summed incoming communication, summed
/// outgoing communication, t-level cost, b-level cost. The t-level runs from
/// a vertex toward the exits and the b-level toward the entries; both include
/// the vertex's own compute cost and the communication cost of every edge on
/// the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticGraphFeatures {
    pub rows: Vec<[f64; FEATURE_COUNT]>,
    /// Longest cost path from each vertex to an exit, starting at the vertex.
    pub t_path: Vec<Vec<VertexId>>,
    /// Longest cost path from each vertex back to an entry, starting at the vertex.
    pub b_path: Vec<Vec<VertexId>>,
    pub comm_factor: f64,
}

impl StaticGraphFeatures {
    pub fn compute_cost(&self, v: VertexId) -> f64 {
        self.rows[v][0]
    }
    pub fn in_comm_sum(&self, v: VertexId) -> f64 {
        self.rows[v][1]
    }
    pub fn out_comm_sum(&self, v: VertexId) -> f64 {
        self.rows[v][2]
    }
    pub fn t_level(&self, v: VertexId) -> f64 {
        self.rows[v][3]
    }
    pub fn b_level(&self, v: VertexId) -> f64 {
        self.rows[v][4]
    }
}

/// Static features of a valid graph. Panics if the graph has a cycle.
pub fn static_features(graph: &DataflowGraph, comm_factor: f64) -> StaticGraphFeatures {
    let n = graph.len();
    let order = graph.topo_order().expect("static_features requires an acyclic graph");
    let comm = |u: VertexId| graph.vertex(u).output_bytes as f64 * comm_factor;
    let flops = |v: VertexId| graph.vertex(v).flops as f64;

    let mut t_level = vec![0.0; n];
    let mut t_next: Vec<Option<VertexId>> = vec![None; n];
    for &v in order.iter().rev() {
        let mut best: Option<(f64, VertexId)> = None;
        // succs are sorted ascending, so strict `>` keeps the smallest id on ties.
        for &s in graph.succs(v) {
            let cand = comm(v) + t_level[s];
            if best.is_none_or(|(b, _)| cand > b) {
                best = Some((cand, s));
            }
        }
        t_level[v] = flops(v) + best.map_or(0.0, |(c, _)| c);
        t_next[v] = best.map(|(_, s)| s);
    }

    let mut b_level = vec![0.0; n];
    let mut b_next: Vec<Option<VertexId>> = vec![None; n];
    for &v in &order {
        let mut best: Option<(f64, VertexId)> = None;
        for &p in graph.preds(v) {
            let cand = comm(p) + b_level[p];
            if best.is_none_or(|(b, _)| cand > b) {
                best = Some((cand, p));
            }
        }
        b_level[v] = flops(v) + best.map_or(0.0, |(c, _)| c);
        b_next[v] = best.map(|(_, p)| p);
    }

    let follow = |start: VertexId, next: &[Option<VertexId>]| {
        let mut path = vec![start];
        let mut cur = start;
        while let Some(nx) = next[cur] {
            path.push(nx);
            cur = nx;
        }
        path
    };

    let rows = (0..n)
        .map(|v| {
            let in_sum: f64 = graph.preds(v).iter().map(|&p| comm(p)).sum();
            let out_sum = comm(v) * graph.succs(v).len() as f64;
            [flops(v), in_sum, out_sum, t_level[v], b_level[v]]
        })
        .collect();

    StaticGraphFeatures {
        rows,
        t_path: (0..n).map(|v| follow(v, &t_next)).collect(),
        b_path: (0..n).map(|v| follow(v, &b_next)).collect(),
        comm_factor,
    }
}
