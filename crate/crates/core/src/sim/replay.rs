//! Independent replay of a schedule against the scheduler's contract.
//!
//! The checker rebuilds readiness and slot occupancy from the event list
//! alone and reports every point where the schedule could not have come
//! from a work-conserving scheduler honoring the resource model.

use std::collections::{HashMap, HashSet};

use super::{ClusterSpec, EventType, Schedule, Task};
use crate::assignment::Assignment;
use crate::graph::{DataflowGraph, VertexId};

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleViolation {
    TimeWentBackwards { index: usize },
    EndWithoutBegin { task: Task },
    BegunTwice { task: Task },
    NeverEnded { task: Task },
    WrongDevice { task: Task },
    InputsNotReady { task: Task, time_ms: f64 },
    ResultAlreadyPresent { task: Task },
    SourceNotReady { task: Task },
    ExecSlotsExceeded { device: usize, time_ms: f64 },
    LinkSlotsExceeded { src: usize, dst: usize, time_ms: f64 },
    DurationMismatch { task: Task, expected: f64, observed: f64 },
    /// A task was startable with a free slot but the clock moved on.
    IdleWhileStartable { task: Task, time_ms: f64 },
    Unfinished { vertex: VertexId },
    MakespanMismatch { reported: f64, last_end: f64 },
}

/// Replays `schedule` and returns every violation found. `run_seed` must be
/// the seed the schedule was simulated with so jittered durations match.
pub fn check_schedule(
    graph: &DataflowGraph,
    a: &Assignment,
    cluster: &ClusterSpec,
    schedule: &Schedule,
    run_seed: u64,
) -> Vec<ScheduleViolation> {
    use ScheduleViolation as V;

    let n = graph.len();
    let devices = cluster.device_count();
    let mut out = Vec::new();
    let mut rdy: HashSet<(VertexId, usize)> = HashSet::new();
    for v in (0..n).filter(|&v| graph.is_input(v)) {
        for d in 0..devices {
            rdy.insert((v, d));
        }
    }
    let mut begun: HashMap<Task, f64> = HashMap::new();
    let mut ended: HashSet<Task> = HashSet::new();
    let mut exec_busy = vec![0usize; devices];
    let mut link_busy = vec![vec![0usize; devices]; devices];
    let mut last_end = 0.0f64;

    let events = &schedule.events;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].time_ms;
        if i > 0 && t < events[i - 1].time_ms {
            out.push(V::TimeWentBackwards { index: i });
        }
        let mut j = i;
        while j < events.len() && events[j].time_ms == t {
            let e = &events[j];
            let task = e.task;
            match e.kind {
                EventType::Beg => {
                    if begun.contains_key(&task) {
                        out.push(V::BegunTwice { task });
                    }
                    match task {
                        Task::Exec { vertex, device } => {
                            if device != a.device(vertex) {
                                out.push(V::WrongDevice { task });
                            }
                            if !graph.preds(vertex).iter().all(|&p| rdy.contains(&(p, device))) {
                                out.push(V::InputsNotReady { task, time_ms: t });
                            }
                            exec_busy[device] += 1;
                            if exec_busy[device] > cluster.exec_slots[device] {
                                out.push(V::ExecSlotsExceeded { device, time_ms: t });
                            }
                        }
                        Task::Transfer { vertex, src, dst } => {
                            if src != a.device(vertex) || src == dst {
                                out.push(V::WrongDevice { task });
                            }
                            if !rdy.contains(&(vertex, src)) {
                                out.push(V::SourceNotReady { task });
                            }
                            if rdy.contains(&(vertex, dst)) {
                                out.push(V::ResultAlreadyPresent { task });
                            }
                            link_busy[src][dst] += 1;
                            if link_busy[src][dst] > cluster.transfer_slots[src][dst] {
                                out.push(V::LinkSlotsExceeded { src, dst, time_ms: t });
                            }
                        }
                    }
                    begun.insert(task, t);
                }
                EventType::End => {
                    let Some(&b) = begun.get(&task) else {
                        out.push(V::EndWithoutBegin { task });
                        j += 1;
                        continue;
                    };
                    let expected = cluster.duration(graph, &task, run_seed);
                    let observed = t - b;
                    if (observed - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                        out.push(V::DurationMismatch { task, expected, observed });
                    }
                    match task {
                        Task::Exec { device, .. } => exec_busy[device] -= 1,
                        Task::Transfer { src, dst, .. } => link_busy[src][dst] -= 1,
                    }
                    // Readiness only ever grows.
                    rdy.insert((task.vertex(), task.target()));
                    ended.insert(task);
                    last_end = last_end.max(t);
                }
            }
            j += 1;
        }
        // Clock is about to advance past `t`: nothing startable may remain.
        let all_done = (0..n).all(|v| rdy.contains(&(v, a.device(v))));
        if !all_done {
            if let Some(task) = startable(graph, a, cluster, &rdy, &begun, &exec_busy, &link_busy) {
                out.push(V::IdleWhileStartable { task, time_ms: t });
            }
        }
        i = j;
    }
    if events.is_empty() {
        if let Some(task) = startable(graph, a, cluster, &rdy, &begun, &exec_busy, &link_busy) {
            out.push(V::IdleWhileStartable { task, time_ms: 0.0 });
        }
    }

    for task in begun.keys() {
        if !ended.contains(task) {
            out.push(V::NeverEnded { task: *task });
        }
    }
    for v in 0..n {
        if !rdy.contains(&(v, a.device(v))) {
            out.push(V::Unfinished { vertex: v });
        }
    }
    if schedule.makespan_ms != last_end {
        out.push(V::MakespanMismatch {
            reported: schedule.makespan_ms,
            last_end,
        });
    }
    out
}

fn startable(
    graph: &DataflowGraph,
    a: &Assignment,
    cluster: &ClusterSpec,
    rdy: &HashSet<(VertexId, usize)>,
    begun: &HashMap<Task, f64>,
    exec_busy: &[usize],
    link_busy: &[Vec<usize>],
) -> Option<Task> {
    for e in graph.edges() {
        let (src, dst) = (a.device(e.src), a.device(e.dst));
        let task = Task::Transfer { vertex: e.src, src, dst };
        if src != dst
            && rdy.contains(&(e.src, src))
            && !rdy.contains(&(e.src, dst))
            && !begun.contains_key(&task)
            && link_busy[src][dst] < cluster.transfer_slots[src][dst]
        {
            return Some(task);
        }
    }
    for v in 0..graph.len() {
        if graph.is_input(v) {
            continue;
        }
        let d = a.device(v);
        let task = Task::Exec { vertex: v, device: d };
        if !begun.contains_key(&task)
            && exec_busy[d] < cluster.exec_slots[d]
            && graph.preds(v).iter().all(|&p| rdy.contains(&(p, d)))
        {
            return Some(task);
        }
    }
    None
}
