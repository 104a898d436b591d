//! Small graphs and clusters shared by tests, benchmarks and the demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{DataflowGraph, Edge, MetaOp, OpKind, Vertex, VertexId};
use crate::sim::ClusterSpec;

fn vx(id: VertexId, op_kind: OpKind, flops: u64, output_bytes: u64, label: &str) -> Vertex {
    Vertex {
        id,
        op_kind,
        flops,
        output_bytes,
        label: label.to_string(),
    }
}

/// Input feeding a serial chain of three compute vertices.
pub fn chain4() -> DataflowGraph {
    DataflowGraph::new(
        vec![
            vx(0, OpKind::Input, 0, 8, "x"),
            vx(1, OpKind::Matmul, 20, 4, "a"),
            vx(2, OpKind::Elemwise, 10, 4, "b"),
            vx(3, OpKind::Matmul, 20, 4, "c"),
        ],
        vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(2, 3)],
        vec![
            MetaOp { id: 0, shard_ops: vec![1], reduce_ops: vec![] },
            MetaOp { id: 1, shard_ops: vec![2], reduce_ops: vec![] },
            MetaOp { id: 2, shard_ops: vec![3], reduce_ops: vec![] },
        ],
    )
    .expect("chain4 fixture is valid")
}

/// Input, two heavy branches of two vertices each, joined by an add.
///
/// On [`two_device_cluster`] the branches run in parallel for a makespan of
/// 38 ms against 64 ms on one device.
pub fn six_vertex() -> DataflowGraph {
    DataflowGraph::new(
        vec![
            vx(0, OpKind::Input, 0, 8, "x"),
            vx(1, OpKind::Matmul, 20, 2, "l1"),
            vx(2, OpKind::Matmul, 20, 2, "r1"),
            vx(3, OpKind::Elemwise, 10, 2, "l2"),
            vx(4, OpKind::Elemwise, 10, 2, "r2"),
            vx(5, OpKind::Add, 4, 2, "join"),
        ],
        vec![
            Edge::new(0, 1),
            Edge::new(0, 2),
            Edge::new(1, 3),
            Edge::new(2, 4),
            Edge::new(3, 5),
            Edge::new(4, 5),
        ],
        vec![
            MetaOp { id: 0, shard_ops: vec![1, 2], reduce_ops: vec![] },
            MetaOp { id: 1, shard_ops: vec![3, 4], reduce_ops: vec![] },
            MetaOp { id: 2, shard_ops: vec![5], reduce_ops: vec![] },
        ],
    )
    .expect("six-vertex fixture is valid")
}

/// Two unit-rate devices; moving 2 bytes costs 4 ms at the default
/// communication factor.
pub fn two_device_cluster() -> ClusterSpec {
    ClusterSpec::uniform(2, 1.0, 2.0)
}

/// Random DAG with one input followed by `compute` vertices in
/// topological id order.
///
/// Every compute vertex consumes at least one earlier vertex. Vertices of
/// equal depth are grouped into meta-ops of at most `devices` shard ops.
pub fn random_dag(compute: usize, devices: usize, seed: u64) -> DataflowGraph {
    assert!(devices >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = compute + 1;
    let mut vertices = vec![vx(0, OpKind::Input, 0, rng.random_range(1..=8), "in")];
    let mut edges = Vec::new();
    let mut depth = vec![0usize; n];
    for v in 1..n {
        let kind = [OpKind::Matmul, OpKind::Add, OpKind::Elemwise][rng.random_range(0..3)];
        vertices.push(vx(v, kind, rng.random_range(1..=20), rng.random_range(1..=8), ""));
        let mut preds: Vec<VertexId> = (0..v).filter(|_| rng.random_bool(0.35)).collect();
        if preds.is_empty() {
            preds.push(rng.random_range(0..v));
        }
        depth[v] = preds.iter().map(|&p| depth[p] + 1).max().unwrap_or(1);
        edges.extend(preds.into_iter().map(|p| Edge::new(p, v)));
    }
    let max_depth = depth.iter().copied().max().unwrap_or(0);
    let mut meta_ops = Vec::new();
    for d in 1..=max_depth {
        let level: Vec<VertexId> = (1..n).filter(|&v| depth[v] == d).collect();
        for chunk in level.chunks(devices) {
            meta_ops.push(MetaOp {
                id: meta_ops.len(),
                shard_ops: chunk.to_vec(),
                reduce_ops: vec![],
            });
        }
    }
    DataflowGraph::new(vertices, edges, meta_ops).expect("random DAG is valid")
}
