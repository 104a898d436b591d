use serde::{Deserialize, Serialize};

use crate::graph::{static_features, DataflowGraph, StaticGraphFeatures, VertexId, FEATURE_COUNT};
use crate::nn::Matrix;
use crate::sim::{ClusterSpec, EarliestStartModel, EstimateError};

/// Width of a node input row: static features plus the assigned and
/// candidate flags.
pub const NODE_INPUTS: usize = FEATURE_COUNT + 2;
/// Width of a message's edge input: communication cost and direction.
pub const EDGE_INPUTS: usize = 2;
/// Width of a device feature row.
pub const DEVICE_FEATURES: usize = 5;

/// Per-graph normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
    pub edge_mean: f64,
    pub edge_std: f64,
    /// Divisor for FLOP-valued device features.
    pub flop_scale: f64,
    /// Divisor for time-valued device features: the single-device serial
    /// time on device 0.
    pub time_scale: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let m = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    // Constant columns are only centered.
    let s = var.sqrt();
    (m, if s > 1e-12 { s } else { 1.0 })
}

/// Everything about one (graph, cluster) pair the policy needs and that
/// does not change during an episode.
#[derive(Debug, Clone)]
pub struct GraphContext<'a> {
    pub graph: &'a DataflowGraph,
    pub cluster: &'a ClusterSpec,
    pub features: StaticGraphFeatures,
    pub norm: NormStats,
    /// Standardized static features, `n x FEATURE_COUNT`.
    pub x_static: Matrix,
    /// Message sender and receiver per message; each edge yields one
    /// message in each direction.
    pub msg_src: Vec<VertexId>,
    pub msg_dst: Vec<VertexId>,
    /// `messages x EDGE_INPUTS`.
    pub msg_features: Matrix,
}

impl<'a> GraphContext<'a> {
    pub fn new(graph: &'a DataflowGraph, cluster: &'a ClusterSpec) -> Self {
        let features = static_features(graph, cluster.comm_factor);
        let n = graph.len();
        let mut mean = [0.0; FEATURE_COUNT];
        let mut std = [1.0; FEATURE_COUNT];
        for c in 0..FEATURE_COUNT {
            (mean[c], std[c]) = mean_std(features.rows.iter().map(move |r| r[c]));
        }
        let mut x_static = Matrix::zeros(n, FEATURE_COUNT);
        for v in 0..n {
            for c in 0..FEATURE_COUNT {
                x_static.set(v, c, (features.rows[v][c] - mean[c]) / std[c]);
            }
        }

        let comm = |src: VertexId| graph.vertex(src).output_bytes as f64 * cluster.comm_factor;
        let (edge_mean, edge_std) = mean_std(graph.edges().iter().map(|e| comm(e.src)));
        let mut msg_src = Vec::new();
        let mut msg_dst = Vec::new();
        let mut rows = Vec::new();
        for e in graph.edges() {
            let c = (comm(e.src) - edge_mean) / edge_std;
            msg_src.push(e.src);
            msg_dst.push(e.dst);
            rows.push([c, 1.0]);
            msg_src.push(e.dst);
            msg_dst.push(e.src);
            rows.push([c, -1.0]);
        }
        let msg_features = if rows.is_empty() { Matrix::zeros(0, EDGE_INPUTS) } else { Matrix::from_rows(&rows) };

        let total_flops = graph.total_flops() as f64;
        let time_scale = cluster.exec_ms(graph.total_flops(), 0);
        let norm = NormStats {
            mean,
            std,
            edge_mean,
            edge_std,
            flop_scale: if total_flops > 0.0 { total_flops } else { 1.0 },
            time_scale: if time_scale > 0.0 { time_scale } else { 1.0 },
        };
        Self { graph, cluster, features, norm, x_static, msg_src, msg_dst, msg_features }
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn devices(&self) -> usize {
        self.cluster.device_count()
    }

    /// Node input matrix for the given dynamic flags.
    pub fn node_inputs(&self, assigned: &[bool], candidate: &[bool]) -> Matrix {
        let n = self.len();
        let mut x = Matrix::zeros(n, NODE_INPUTS);
        for v in 0..n {
            x.row_mut(v)[..FEATURE_COUNT].copy_from_slice(self.x_static.row(v));
            x.set(v, FEATURE_COUNT, f64::from(u8::from(assigned[v])));
            x.set(v, FEATURE_COUNT + 1, f64::from(u8::from(candidate[v])));
        }
        x
    }

    /// Device features for `v` scaled by the per-graph constants.
    pub fn device_features(&self, model: &EarliestStartModel<'_>, v: VertexId) -> Result<Matrix, EstimateError> {
        let raw = dynamic_device_features(self.graph, model, v, self.devices())?;
        let mut m = Matrix::zeros(raw.len(), DEVICE_FEATURES);
        for (d, r) in raw.iter().enumerate() {
            let row = m.row_mut(d);
            row[0] = r[0] / self.norm.flop_scale;
            row[1] = r[1] / self.norm.flop_scale;
            for c in 2..DEVICE_FEATURES {
                row[c] = r[c] / self.norm.time_scale;
            }
        }
        Ok(m)
    }
}

/// Per device `d`, for placing `v` next:
/// `[flops assigned to d, flops of v's predecessors on d, earliest start of
/// those predecessors, latest finish of those predecessors, earliest start
/// of v on d]`. Times are zero when no predecessor sits on `d`.
pub fn dynamic_device_features(
    graph: &DataflowGraph,
    model: &EarliestStartModel<'_>,
    v: VertexId,
    devices: usize,
) -> Result<Vec<[f64; DEVICE_FEATURES]>, EstimateError> {
    let mut out = Vec::with_capacity(devices);
    for d in 0..devices {
        let mut pred_flops = 0.0;
        let mut min_start = f64::INFINITY;
        let mut max_end = 0.0f64;
        for &p in graph.preds(v) {
            let pd = model.device_of(p).ok_or(EstimateError::UnplacedPredecessor { vertex: v, pred: p })?;
            if pd == d && !graph.is_input(p) {
                pred_flops += graph.vertex(p).flops as f64;
                min_start = min_start.min(model.start_of(p));
                max_end = max_end.max(model.finish_of(p));
            }
        }
        out.push([
            model.assigned_flops(d) as f64,
            pred_flops,
            if min_start.is_finite() { min_start } else { 0.0 },
            max_end,
            model.earliest_start(v, d)?,
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, OpKind, Vertex};

    fn pair() -> DataflowGraph {
        DataflowGraph::from_parts(
            vec![
                Vertex { id: 0, op_kind: OpKind::Matmul, flops: 10, output_bytes: 5, label: String::new() },
                Vertex { id: 1, op_kind: OpKind::Add, flops: 3, output_bytes: 1, label: String::new() },
            ],
            vec![Edge::new(0, 1)],
            vec![],
        )
    }

    #[test]
    fn no_predecessors_gives_zero_times() {
        let g = pair();
        let c = ClusterSpec::uniform(2, 1.0, 10.0);
        let m = EarliestStartModel::new(&g, &c);
        let f = dynamic_device_features(&g, &m, 0, 2).unwrap();
        assert_eq!(f, vec![[0.0; 5], [0.0; 5]]);
    }

    #[test]
    fn remote_device_pays_transfer() {
        let g = pair();
        let c = ClusterSpec::uniform(2, 1.0, 10.0);
        let mut m = EarliestStartModel::new(&g, &c);
        assert_eq!(
            dynamic_device_features(&g, &m, 1, 2),
            Err(EstimateError::UnplacedPredecessor { vertex: 1, pred: 0 })
        );
        m.place(0, 0).unwrap();
        let f = dynamic_device_features(&g, &m, 1, 2).unwrap();
        assert_eq!(f[0], [10.0, 10.0, 0.0, 10.0, 10.0]);
        assert_eq!(f[1], [0.0, 0.0, 0.0, 0.0, 10.0 + 5.0 * 4.0 / 10.0]);
        m.place(1, 1).unwrap();
        assert_eq!(m.assigned_flops(1), 3);
    }

    #[test]
    fn static_columns_are_standardized() {
        let g = crate::fixtures::six_vertex();
        let c = crate::fixtures::two_device_cluster();
        let ctx = GraphContext::new(&g, &c);
        for col in 0..FEATURE_COUNT {
            let xs: Vec<f64> = (0..g.len()).map(|v| ctx.x_static.get(v, col)).collect();
            let m: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 1e-12);
            let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
            assert!((var - 1.0).abs() < 1e-9 || var == 0.0, "column {col}: {var}");
        }
        assert_eq!(ctx.msg_src.len(), 2 * g.edges().len());
    }
}
