//! Non-learned placement engines and the exhaustive oracle.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use crate::assignment::Assignment;
use crate::graph::{static_features, DataflowGraph, VertexId};
use crate::sim::{exec_time, makespan, mix, ClusterSpec, EarliestStartModel, SimError, Strategy};

/// Default limit on `devices^(non-input vertices)` for [`brute_force_optimal`].
pub const DEFAULT_BRUTE_FORCE_CAP: u128 = 1 << 20;

#[derive(Debug, Error)]
pub enum HeuristicError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("graph has no meta-ops")]
    NoMetaOps,
    #[error("meta-op {meta_op} has {size} ops in one group but only {devices} devices exist")]
    MetaOpTooLarge { meta_op: usize, size: usize, devices: usize },
    #[error("vertex {vertex} is not covered by any meta-op")]
    Uncovered { vertex: VertexId },
    #[error("search space {space} exceeds the cap {cap}")]
    CapExceeded { space: u128, cap: u128 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One list-scheduling pass: repeatedly take the ready vertex with the
/// largest t-level (ties broken by `rng`) and place it on the device where
/// it could start earliest.
fn list_schedule(graph: &DataflowGraph, cluster: &ClusterSpec, t_level: &[f64], rng: &mut ChaCha8Rng) -> Assignment {
    let n = graph.len();
    let mut model = EarliestStartModel::new(graph, cluster);
    let mut device = vec![0usize; n];
    let mut missing: Vec<usize> = (0..n).map(|v| graph.preds(v).len()).collect();
    let mut ready: Vec<VertexId> = Vec::new();
    for v in 0..n {
        if graph.is_input(v) {
            model.place(v, 0).expect("inputs have no predecessors");
            for &s in graph.succs(v) {
                missing[s] -= 1;
            }
        }
    }
    ready.extend((0..n).filter(|&v| !graph.is_input(v) && missing[v] == 0));
    while !ready.is_empty() {
        let best = ready.iter().map(|&v| t_level[v]).fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..ready.len()).filter(|&i| t_level[ready[i]] == best).collect();
        let i = *ties.choose(rng).expect("non-empty");
        let v = ready.swap_remove(i);
        let (d, _) = model.best_device(v).expect("predecessors are placed first");
        model.place(v, d).expect("predecessors are placed first");
        device[v] = d;
        for &s in graph.succs(v) {
            missing[s] -= 1;
            if missing[s] == 0 {
                ready.push(s);
            }
        }
    }
    Assignment::new(device, "critical_path")
}

/// Every critical-path trial with its simulated makespan, in trial order.
pub fn critical_path_trials(
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    trials: usize,
    seed: u64,
) -> Result<Vec<(Assignment, f64)>, HeuristicError> {
    if trials == 0 {
        return Err(HeuristicError::NoTrials);
    }
    cluster.validate().map_err(SimError::from)?;
    let f = static_features(graph, cluster.comm_factor);
    let t_level: Vec<f64> = (0..graph.len()).map(|v| f.t_level(v)).collect();
    (0..trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, trial as u64));
            let a = list_schedule(graph, cluster, &t_level, &mut rng);
            let m = makespan(graph, &a, cluster, Strategy::Fifo, 0)?;
            Ok((a, m))
        })
        .collect()
}

/// Best of `trials` randomized critical-path list schedules, judged by
/// simulated makespan under the FIFO strategy. The earliest best trial wins,
/// so raising `trials` never worsens the result.
pub fn critical_path_assign(
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    trials: usize,
    seed: u64,
) -> Result<Assignment, HeuristicError> {
    let runs = critical_path_trials(graph, cluster, trials, seed)?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.1 < runs[best].1 {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("trials >= 1").0)
}

/// Largest number of injective placements enumerated for one group of a
/// meta-op.
pub const ENUMOPT_PLACEMENT_CAP: u128 = 1 << 22;

/// Number of injective maps from `k` slots to `devices`.
pub fn placement_count(devices: usize, k: usize) -> u128 {
    if k > devices {
        return 0;
    }
    ((devices - k + 1)..=devices).fold(1u128, |acc, d| acc.saturating_mul(d as u128))
}

/// Calls `f` on every injective map from `k` ordered slots to `devices`,
/// in lexicographic order.
fn for_each_injective(devices: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(devices: usize, k: usize, cur: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for d in 0..devices {
            if !used[d] {
                used[d] = true;
                cur.push(d);
                rec(devices, k, cur, used, f);
                cur.pop();
                used[d] = false;
            }
        }
    }
    if k <= devices {
        rec(devices, k, &mut Vec::with_capacity(k), &mut vec![false; devices], f);
    }
}

/// All injective maps from `k` ordered slots to `devices`, in lexicographic
/// order.
pub fn injective_placements(devices: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for_each_injective(devices, k, &mut |p| out.push(p.to_vec()));
    out
}

/// Places one group of ops on distinct devices, minimizing the summed
/// transfer time of their inputs. The first minimum in lexicographic order
/// wins.
fn best_group_placement(graph: &DataflowGraph, cluster: &ClusterSpec, ops: &[VertexId], device: &[usize]) -> Vec<usize> {
    let devices = cluster.device_count();
    // cost[i][d]: input transfer time of ops[i] if placed on d.
    let cost: Vec<Vec<f64>> = ops
        .iter()
        .map(|&v| {
            (0..devices)
                .map(|d| {
                    graph
                        .preds(v)
                        .iter()
                        .filter(|&&p| !graph.is_input(p))
                        .map(|&p| cluster.transfer_ms(graph.vertex(p).output_bytes, device[p], d))
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_injective(devices, ops.len(), &mut |perm| {
        let c: f64 = perm.iter().enumerate().map(|(i, &d)| cost[i][d]).sum();
        if best.as_ref().is_none_or(|b| c < b.0) {
            best = Some((c, perm.to_vec()));
        }
    });
    best.map(|b| b.1).unwrap_or_default()
}

/// Greedy meta-op by meta-op placement. Shard ops of each meta-op are spread
/// over distinct devices, then its reduce ops, each group at the minimum
/// input-transfer cost given everything placed before. Inputs sit on
/// device 0 and cost nothing to read.
pub fn enumerative_optimizer(graph: &DataflowGraph, cluster: &ClusterSpec) -> Result<Assignment, HeuristicError> {
    cluster.validate().map_err(SimError::from)?;
    if graph.meta_ops().is_empty() {
        return Err(HeuristicError::NoMetaOps);
    }
    let owner = graph.meta_op_owner();
    if let Some(vertex) = (0..graph.len()).find(|&v| !graph.is_input(v) && owner[v].is_none()) {
        return Err(HeuristicError::Uncovered { vertex });
    }
    let devices = cluster.device_count();
    let mut device = vec![0usize; graph.len()];
    for m in graph.meta_ops() {
        for group in [&m.shard_ops, &m.reduce_ops] {
            if group.len() > devices {
                return Err(HeuristicError::MetaOpTooLarge {
                    meta_op: m.id,
                    size: group.len(),
                    devices,
                });
            }
            let space = placement_count(devices, group.len());
            if space > ENUMOPT_PLACEMENT_CAP {
                return Err(HeuristicError::CapExceeded { space, cap: ENUMOPT_PLACEMENT_CAP });
            }
            let placed = best_group_placement(graph, cluster, group, &device);
            for (&v, d) in group.iter().zip(placed) {
                device[v] = d;
            }
        }
    }
    Ok(Assignment::new(device, "enumopt"))
}

/// Independent uniform draw of a device per vertex.
pub fn random_assign(graph: &DataflowGraph, devices: usize, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Assignment::new((0..graph.len()).map(|_| rng.random_range(0..devices)).collect(), "random")
}

/// Everything on device 0.
pub fn single_device_assign(graph: &DataflowGraph) -> Assignment {
    Assignment::new(vec![0; graph.len()], "single")
}

/// Exhaustive search over assignments of the non-input vertices (inputs are
/// available everywhere and stay on device 0). Ties go to the
/// lexicographically smallest assignment.
pub fn brute_force_optimal(
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    strategy: Strategy,
    cap: u128,
) -> Result<(Assignment, f64), HeuristicError> {
    cluster.validate().map_err(SimError::from)?;
    let free: Vec<VertexId> = (0..graph.len()).filter(|&v| !graph.is_input(v)).collect();
    let devices = cluster.device_count();
    let space = (devices as u128).checked_pow(free.len() as u32).unwrap_or(u128::MAX);
    if space > cap {
        return Err(HeuristicError::CapExceeded { space, cap });
    }
    let decode = |mut code: u128| {
        let mut device = vec![0usize; graph.len()];
        // Most significant digit on the first free vertex keeps codes in
        // lexicographic order.
        for &v in free.iter().rev() {
            device[v] = (code % devices as u128) as usize;
            code /= devices as u128;
        }
        device
    };
    let eval = |code: u128| -> Result<(f64, u128), SimError> {
        let a = Assignment::new(decode(code), "oracle");
        Ok((exec_time(graph, &a, cluster, strategy, 0)?.makespan_ms, code))
    };
    let pick = |a: (f64, u128), b: (f64, u128)| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a };

    #[cfg(feature = "parallel")]
    let best = {
        use rayon::prelude::*;
        let space = space as u64;
        (0..space)
            .into_par_iter()
            .map(|c| eval(c as u128))
            .try_reduce(|| (f64::INFINITY, u128::MAX), |a, b| Ok(pick(a, b)))?
    };
    #[cfg(not(feature = "parallel"))]
    let best = {
        let mut best = (f64::INFINITY, u128::MAX);
        for c in 0..space {
            best = pick(best, eval(c)?);
        }
        best
    };
    Ok((Assignment::new(decode(best.1), "oracle"), best.0))
}
