//! Dataflow graph model: vertices carry compute cost, edges carry the
//! producer's output tensor to its consumers, and meta-ops group the
//! fragments produced by sharding one original operation.

mod builders;
mod features;
mod io;

pub use builders::{build_chainmm, build_ffnn, explode_matmul_chain, BuildError, DTYPE_BYTES};
pub use features::{static_features, StaticGraphFeatures, DEFAULT_COMM_FACTOR, FEATURE_COUNT};
pub use io::{load_json, save_json, GraphIoError};

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type VertexId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Matmul,
    Add,
    Elemwise,
    Reduction,
    Formation,
    Other,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::Input => "input",
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Elemwise => "elemwise",
            OpKind::Reduction => "reduction",
            OpKind::Formation => "formation",
            OpKind::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: VertexId,
    pub op_kind: OpKind,
    pub flops: u64,
    pub output_bytes: u64,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
}

impl Edge {
    pub fn new(src: VertexId, dst: VertexId) -> Self {
        Self { src, dst }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaOp {
    pub id: usize,
    pub shard_ops: Vec<VertexId>,
    pub reduce_ops: Vec<VertexId>,
}

impl MetaOp {
    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.shard_ops.iter().chain(self.reduce_ops.iter()).copied()
    }
}

/// A broken graph invariant, reported by [`DataflowGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonDenseId { position: usize, id: VertexId },
    DanglingEdge { src: VertexId, dst: VertexId },
    DuplicateEdge { src: VertexId, dst: VertexId },
    Cycle { members: Vec<VertexId> },
    NoEntry,
    NoExit,
    InputHasFlops { vertex: VertexId },
    ComputeWithoutFlops { vertex: VertexId },
    InputHasPredecessor { vertex: VertexId },
    ConsumedWithoutBytes { vertex: VertexId },
    MetaOpOverlap { vertex: VertexId },
    MetaOpUnknownVertex { meta_op: usize, vertex: VertexId },
    MetaOpReduceExceedsShard { meta_op: usize },
    MetaOpOrder { earlier: usize, later: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonDenseId { position, id } => {
                write!(f, "non-dense id: vertex at position {position} has id {id}")
            }
            Violation::DanglingEdge { src, dst } => write!(f, "dangling edge ({src}, {dst})"),
            Violation::DuplicateEdge { src, dst } => write!(f, "duplicate edge ({src}, {dst})"),
            Violation::Cycle { members } => write!(f, "cycle through vertices {members:?}"),
            Violation::NoEntry => f.write_str("graph has no entry vertex"),
            Violation::NoExit => f.write_str("graph has no exit vertex"),
            Violation::InputHasFlops { vertex } => write!(f, "input vertex {vertex} has non-zero flops"),
            Violation::ComputeWithoutFlops { vertex } => {
                write!(f, "non-input vertex {vertex} has zero flops")
            }
            Violation::InputHasPredecessor { vertex } => {
                write!(f, "input vertex {vertex} has an incoming edge")
            }
            Violation::ConsumedWithoutBytes { vertex } => {
                write!(f, "vertex {vertex} is consumed but has zero output bytes")
            }
            Violation::MetaOpOverlap { vertex } => {
                write!(f, "vertex {vertex} belongs to more than one meta-op slot")
            }
            Violation::MetaOpUnknownVertex { meta_op, vertex } => {
                write!(f, "meta-op {meta_op} references unknown vertex {vertex}")
            }
            Violation::MetaOpReduceExceedsShard { meta_op } => {
                write!(f, "meta-op {meta_op} has more reduce ops than shard ops")
            }
            Violation::MetaOpOrder { earlier, later } => {
                write!(f, "meta-op {later} reaches earlier meta-op {earlier}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph is invalid: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("cycle detected through vertex {0}")]
    Cycle(VertexId),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Directed acyclic graph of tensor operations.
///
/// Adjacency lists are derived from `edges` on construction and kept sorted
/// by vertex id, so every traversal over the graph is deterministic.
#[derive(Debug, Clone)]
pub struct DataflowGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    meta_ops: Vec<MetaOp>,
    preds: Vec<Vec<VertexId>>,
    succs: Vec<Vec<VertexId>>,
}

impl PartialEq for DataflowGraph {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.edges == other.edges && self.meta_ops == other.meta_ops
    }
}

impl DataflowGraph {
    /// Builds a graph without checking invariants. Edges that point outside
    /// the vertex range are kept in `edges` but left out of the adjacency
    /// lists; `validate` reports them.
    pub fn from_parts(vertices: Vec<Vertex>, edges: Vec<Edge>, meta_ops: Vec<MetaOp>) -> Self {
        let n = vertices.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for e in &edges {
            if e.src < n && e.dst < n {
                preds[e.dst].push(e.src);
                succs[e.src].push(e.dst);
            }
        }
        for list in preds.iter_mut().chain(succs.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            vertices,
            edges,
            meta_ops,
            preds,
            succs,
        }
    }

    /// Builds a graph and rejects it if any invariant is broken.
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>, meta_ops: Vec<MetaOp>) -> Result<Self, GraphError> {
        let g = Self::from_parts(vertices, edges, meta_ops);
        let violations = g.validate();
        if violations.is_empty() {
            Ok(g)
        } else {
            Err(GraphError::Invalid(violations))
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn meta_ops(&self) -> &[MetaOp] {
        &self.meta_ops
    }

    pub fn preds(&self, v: VertexId) -> &[VertexId] {
        &self.preds[v]
    }

    pub fn succs(&self, v: VertexId) -> &[VertexId] {
        &self.succs[v]
    }

    pub fn is_input(&self, v: VertexId) -> bool {
        self.vertices[v].op_kind == OpKind::Input
    }

    pub fn entries(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.len()).filter(|&v| self.preds[v].is_empty())
    }

    pub fn exits(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.len()).filter(|&v| self.succs[v].is_empty())
    }

    pub fn total_flops(&self) -> u64 {
        self.vertices.iter().map(|v| v.flops).sum()
    }

    /// Returns every broken invariant. An empty list means the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.vertices.len();

        for (pos, v) in self.vertices.iter().enumerate() {
            if v.id != pos {
                out.push(Violation::NonDenseId { position: pos, id: v.id });
            }
            match (v.op_kind == OpKind::Input, v.flops == 0) {
                (true, false) => out.push(Violation::InputHasFlops { vertex: pos }),
                (false, true) => out.push(Violation::ComputeWithoutFlops { vertex: pos }),
                _ => {}
            }
        }

        let mut seen = HashSet::new();
        let mut reported_dup = HashSet::new();
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                out.push(Violation::DanglingEdge { src: e.src, dst: e.dst });
                continue;
            }
            if !seen.insert((e.src, e.dst)) && reported_dup.insert((e.src, e.dst)) {
                out.push(Violation::DuplicateEdge { src: e.src, dst: e.dst });
            }
        }

        for v in 0..n {
            if self.vertices[v].op_kind == OpKind::Input && !self.preds[v].is_empty() {
                out.push(Violation::InputHasPredecessor { vertex: v });
            }
            if !self.succs[v].is_empty() && self.vertices[v].output_bytes == 0 {
                out.push(Violation::ConsumedWithoutBytes { vertex: v });
            }
        }

        if let Err(GraphError::Cycle(_)) = self.topo_order() {
            out.push(Violation::Cycle {
                members: self.cycle_members(),
            });
        }
        if n > 0 {
            if self.entries().next().is_none() {
                out.push(Violation::NoEntry);
            }
            if self.exits().next().is_none() {
                out.push(Violation::NoExit);
            }
        } else {
            out.push(Violation::NoEntry);
            out.push(Violation::NoExit);
        }

        self.validate_meta_ops(&mut out);
        out
    }

    fn validate_meta_ops(&self, out: &mut Vec<Violation>) {
        let n = self.vertices.len();
        let mut owner: Vec<Option<usize>> = vec![None; n];
        for (pos, m) in self.meta_ops.iter().enumerate() {
            if m.reduce_ops.len() > m.shard_ops.len() {
                out.push(Violation::MetaOpReduceExceedsShard { meta_op: m.id });
            }
            for v in m.vertices() {
                if v >= n {
                    out.push(Violation::MetaOpUnknownVertex { meta_op: m.id, vertex: v });
                    continue;
                }
                if owner[v].is_some() {
                    out.push(Violation::MetaOpOverlap { vertex: v });
                } else {
                    owner[v] = Some(pos);
                }
            }
        }
        if self.meta_ops.is_empty() || out.iter().any(|v| matches!(v, Violation::Cycle { .. })) {
            return;
        }
        // A later meta-op may not reach an earlier one. Propagate the
        // minimum reachable owner position backwards from the sinks.
        let Ok(order) = self.topo_order() else { return };
        let mut min_reach: Vec<Option<usize>> = vec![None; n];
        for &v in order.iter().rev() {
            let mut best = owner[v];
            for &s in &self.succs[v] {
                best = match (best, min_reach[s]) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            min_reach[v] = best;
        }
        let mut reported = BTreeSet::new();
        for v in 0..n {
            let Some(pos) = owner[v] else { continue };
            for &s in &self.succs[v] {
                if let Some(r) = min_reach[s] {
                    if r < pos && reported.insert((r, pos)) {
                        out.push(Violation::MetaOpOrder {
                            earlier: self.meta_ops[r].id,
                            later: self.meta_ops[pos].id,
                        });
                    }
                }
            }
        }
    }

    /// Kahn's algorithm with a min-heap, so ties resolve to the smallest id.
    pub fn topo_order(&self) -> Result<Vec<VertexId>, GraphError> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        let n = self.vertices.len();
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<VertexId>> =
            (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = heap.pop() {
            order.push(v);
            for &s in &self.succs[v] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    heap.push(Reverse(s));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            let stuck = (0..n).find(|&v| indeg[v] > 0).unwrap_or(0);
            Err(GraphError::Cycle(stuck))
        }
    }

    fn cycle_members(&self) -> Vec<VertexId> {
        // Vertices left after repeatedly peeling sources and sinks all lie on
        // or between cycles.
        let n = self.vertices.len();
        let mut alive = vec![true; n];
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut outdeg: Vec<usize> = self.succs.iter().map(Vec::len).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for v in 0..n {
                if alive[v] && (indeg[v] == 0 || outdeg[v] == 0) {
                    alive[v] = false;
                    changed = true;
                    for &s in &self.succs[v] {
                        indeg[s] = indeg[s].saturating_sub(1);
                    }
                    for &p in &self.preds[v] {
                        outdeg[p] = outdeg[p].saturating_sub(1);
                    }
                }
            }
        }
        (0..n).filter(|&v| alive[v]).collect()
    }

    /// Vertex index → meta-op position, for vertices that belong to one.
    pub fn meta_op_owner(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.len()];
        for (pos, m) in self.meta_ops.iter().enumerate() {
            for v in m.vertices() {
                if v < owner.len() {
                    owner[v] = Some(pos);
                }
            }
        }
        owner
    }

    /// Returns a copy with vertex `v` renamed to `perm[v]`. Meta-ops keep
    /// their order with members renamed.
    pub fn permuted(&self, perm: &[VertexId]) -> DataflowGraph {
        assert_eq!(perm.len(), self.len(), "permutation length mismatch");
        let mut vertices = self.vertices.clone();
        for (old, v) in self.vertices.iter().enumerate() {
            let mut nv = v.clone();
            nv.id = perm[old];
            vertices[perm[old]] = nv;
        }
        let mut edges: Vec<Edge> = self.edges.iter().map(|e| Edge::new(perm[e.src], perm[e.dst])).collect();
        edges.sort();
        let meta_ops = self
            .meta_ops
            .iter()
            .map(|m| MetaOp {
                id: m.id,
                shard_ops: m.shard_ops.iter().map(|&v| perm[v]).collect(),
                reduce_ops: m.reduce_ops.iter().map(|&v| perm[v]).collect(),
            })
            .collect();
        DataflowGraph::from_parts(vertices, edges, meta_ops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(id: usize, kind: OpKind, flops: u64) -> Vertex {
        Vertex {
            id,
            op_kind: kind,
            flops,
            output_bytes: 8,
            label: String::new(),
        }
    }

    #[test]
    fn single_matmul_is_valid() {
        let g = DataflowGraph::from_parts(vec![v(0, OpKind::Matmul, 10)], vec![], vec![]);
        assert!(g.validate().is_empty());
    }

    #[test]
    fn two_cycle_is_reported() {
        let g = DataflowGraph::from_parts(
            vec![v(0, OpKind::Matmul, 1), v(1, OpKind::Matmul, 1)],
            vec![Edge::new(0, 1), Edge::new(1, 0)],
            vec![],
        );
        let viol = g.validate();
        assert!(viol.contains(&Violation::Cycle { members: vec![0, 1] }), "{viol:?}");
        assert!(matches!(g.topo_order(), Err(GraphError::Cycle(_))));
    }

    #[test]
    fn duplicate_edge_is_reported_once() {
        let g = DataflowGraph::from_parts(
            vec![v(0, OpKind::Input, 0), v(1, OpKind::Matmul, 1)],
            vec![Edge::new(0, 1), Edge::new(0, 1)],
            vec![],
        );
        assert_eq!(g.validate(), vec![Violation::DuplicateEdge { src: 0, dst: 1 }]);
    }

    #[test]
    fn flops_must_match_kind() {
        let g = DataflowGraph::from_parts(
            vec![v(0, OpKind::Input, 3), v(1, OpKind::Matmul, 0)],
            vec![Edge::new(0, 1)],
            vec![],
        );
        let viol = g.validate();
        assert!(viol.contains(&Violation::InputHasFlops { vertex: 0 }));
        assert!(viol.contains(&Violation::ComputeWithoutFlops { vertex: 1 }));
    }

    #[test]
    fn consumed_vertex_needs_bytes() {
        let mut a = v(0, OpKind::Input, 0);
        a.output_bytes = 0;
        let g = DataflowGraph::from_parts(vec![a, v(1, OpKind::Add, 1)], vec![Edge::new(0, 1)], vec![]);
        assert_eq!(g.validate(), vec![Violation::ConsumedWithoutBytes { vertex: 0 }]);
    }

    #[test]
    fn topo_order_chain_and_diamond() {
        let chain = DataflowGraph::from_parts(
            vec![v(0, OpKind::Input, 0), v(1, OpKind::Add, 1), v(2, OpKind::Add, 1)],
            vec![Edge::new(1, 2), Edge::new(0, 1)],
            vec![],
        );
        assert_eq!(chain.topo_order().unwrap(), vec![0, 1, 2]);

        let diamond = DataflowGraph::from_parts(
            (0..4).map(|i| v(i, if i == 0 { OpKind::Input } else { OpKind::Add }, (i > 0) as u64)).collect(),
            vec![Edge::new(0, 2), Edge::new(0, 1), Edge::new(2, 3), Edge::new(1, 3)],
            vec![],
        );
        assert_eq!(diamond.topo_order().unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn meta_op_order_violation() {
        // 0 -> 1 -> 2, with meta-op [2] listed before meta-op [1].
        let g = DataflowGraph::from_parts(
            vec![v(0, OpKind::Input, 0), v(1, OpKind::Add, 1), v(2, OpKind::Add, 1)],
            vec![Edge::new(0, 1), Edge::new(1, 2)],
            vec![
                MetaOp { id: 0, shard_ops: vec![2], reduce_ops: vec![] },
                MetaOp { id: 1, shard_ops: vec![1], reduce_ops: vec![] },
            ],
        );
        assert_eq!(g.validate(), vec![Violation::MetaOpOrder { earlier: 0, later: 1 }]);
    }

    #[test]
    fn meta_op_overlap_and_reduce_size() {
        let g = DataflowGraph::from_parts(
            vec![v(0, OpKind::Input, 0), v(1, OpKind::Add, 1), v(2, OpKind::Add, 1)],
            vec![Edge::new(0, 1), Edge::new(0, 2)],
            vec![MetaOp { id: 7, shard_ops: vec![1], reduce_ops: vec![1, 2] }],
        );
        let viol = g.validate();
        assert!(viol.contains(&Violation::MetaOpReduceExceedsShard { meta_op: 7 }));
        assert!(viol.contains(&Violation::MetaOpOverlap { vertex: 1 }));
    }
}
