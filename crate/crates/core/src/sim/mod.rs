//! Event-driven simulation of a work-conserving dynamic scheduler.
//!
//! The engine keeps a readiness matrix `rdy[v][d]` (the result of `v` is
//! materialized on device `d`), repeatedly enumerates every transfer and
//! execution whose inputs are in place, starts each one that a free resource
//! slot allows, and otherwise advances the clock to the next completion.

mod cluster;
mod estimate;
mod replay;
mod report;

pub use cluster::{ClusterError, ClusterSpec, Jitter};
pub(crate) use cluster::mix;
pub use estimate::{EarliestStartModel, EstimateError};
pub use replay::{check_schedule, ScheduleViolation};
pub use report::{gantt_svg, utilization_report, DeviceUsage, LinkUsage, UtilizationReport};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{Assignment, AssignmentError};
use crate::graph::{static_features, DataflowGraph, VertexId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Exec { vertex: VertexId, device: usize },
    Transfer { vertex: VertexId, src: usize, dst: usize },
}

impl Task {
    pub fn vertex(&self) -> VertexId {
        match *self {
            Task::Exec { vertex, .. } | Task::Transfer { vertex, .. } => vertex,
        }
    }

    /// Device on which the task's result becomes ready.
    pub fn target(&self) -> usize {
        match *self {
            Task::Exec { device, .. } => device,
            Task::Transfer { dst, .. } => dst,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Exec { vertex, device } => write!(f, "exec({vertex}, d{device})"),
            Task::Transfer { vertex, src, dst } => write!(f, "transfer({vertex}, d{src}->d{dst})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Beg,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub task: Task,
    pub time_ms: f64,
    #[serde(rename = "type")]
    pub kind: EventType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub makespan_ms: f64,
    pub events: Vec<Event>,
}

impl Schedule {
    /// `(task, begin, end)` for every completed task, in completion order.
    pub fn intervals(&self) -> Vec<(Task, f64, f64)> {
        let mut open = std::collections::HashMap::new();
        let mut out = Vec::new();
        for e in &self.events {
            match e.kind {
                EventType::Beg => {
                    open.insert(e.task, e.time_ms);
                }
                EventType::End => {
                    if let Some(b) = open.remove(&e.task) {
                        out.push((e.task, b, e.time_ms));
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

/// Policy the work-conserving scheduler uses to pick among startable tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// First startable task in enumeration order.
    #[default]
    Fifo,
    /// Largest t-level (longest remaining path to an exit) first.
    DepthFirst,
    /// Smallest b-level (shortest path back to an entry) first.
    BreadthFirst,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown scheduling strategy `{0}` (expected fifo, depth_first or breadth_first)")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(Strategy::Fifo),
            "depth_first" | "depth-first" => Ok(Strategy::DepthFirst),
            "breadth_first" | "breadth-first" => Ok(Strategy::BreadthFirst),
            other => Err(UnknownStrategy(other.to_string())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Fifo => "fifo",
            Strategy::DepthFirst => "depth_first",
            Strategy::BreadthFirst => "breadth_first",
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("deadlock at t={time_ms} ms: no pending events, unfinished vertices {frontier:?}")]
    Deadlock { time_ms: f64, frontier: Vec<VertexId> },
}

/// Mutable simulation state: readiness, which tasks have begun, and slot
/// occupancy.
#[derive(Debug, Clone)]
pub struct SimState {
    devices: usize,
    rdy: Vec<bool>,
    exec_begun: Vec<bool>,
    transfer_begun: Vec<bool>,
    exec_busy: Vec<usize>,
    link_busy: Vec<usize>,
}

impl SimState {
    /// Inputs are available on every device from time zero.
    pub fn new(graph: &DataflowGraph, devices: usize) -> Self {
        let n = graph.len();
        let mut rdy = vec![false; n * devices];
        for v in 0..n {
            if graph.is_input(v) {
                rdy[v * devices..(v + 1) * devices].fill(true);
            }
        }
        Self {
            devices,
            rdy,
            exec_begun: vec![false; n],
            transfer_begun: vec![false; n * devices],
            exec_busy: vec![0; devices],
            link_busy: vec![0; devices * devices],
        }
    }

    pub fn ready(&self, v: VertexId, d: usize) -> bool {
        self.rdy[v * self.devices + d]
    }

    pub fn set_ready(&mut self, v: VertexId, d: usize) {
        self.rdy[v * self.devices + d] = true;
    }

    pub fn has_begun(&self, task: &Task) -> bool {
        match *task {
            Task::Exec { vertex, .. } => self.exec_begun[vertex],
            Task::Transfer { vertex, dst, .. } => self.transfer_begun[vertex * self.devices + dst],
        }
    }

    fn slot_free(&self, task: &Task, cluster: &ClusterSpec) -> bool {
        match *task {
            Task::Exec { device, .. } => self.exec_busy[device] < cluster.exec_slots[device],
            Task::Transfer { src, dst, .. } => self.link_busy[src * self.devices + dst] < cluster.transfer_slots[src][dst],
        }
    }

    fn begin(&mut self, task: &Task) {
        match *task {
            Task::Exec { vertex, device } => {
                self.exec_begun[vertex] = true;
                self.exec_busy[device] += 1;
            }
            Task::Transfer { vertex, src, dst } => {
                self.transfer_begun[vertex * self.devices + dst] = true;
                self.link_busy[src * self.devices + dst] += 1;
            }
        }
    }

    fn finish(&mut self, task: &Task) {
        match *task {
            Task::Exec { vertex, device } => {
                self.exec_busy[device] -= 1;
                self.set_ready(vertex, device);
            }
            Task::Transfer { vertex, src, dst } => {
                self.link_busy[src * self.devices + dst] -= 1;
                self.set_ready(vertex, dst);
            }
        }
    }
}

/// Every transfer and execution that may start now.
///
/// A transfer of `v1` toward the device of a consumer `v2` is listed when the
/// result is on `v1`'s own device, missing on `v2`'s, and not yet in flight.
/// An execution of `v2` is listed when all its inputs sit on its device and
/// it has not begun. Transfers come first ordered by `(v1, dst)`, then
/// executions ordered by vertex.
pub fn enum_tasks(graph: &DataflowGraph, a: &Assignment, state: &SimState) -> Vec<Task> {
    let mut transfers = Vec::new();
    for e in graph.edges() {
        let (src, dst) = (a.device(e.src), a.device(e.dst));
        if !state.ready(e.src, dst) && state.ready(e.src, src) {
            let t = Task::Transfer { vertex: e.src, src, dst };
            if !state.has_begun(&t) {
                transfers.push(t);
            }
        }
    }
    transfers.sort_unstable();
    transfers.dedup();

    let execs = (0..graph.len()).filter_map(|v| {
        if graph.is_input(v) {
            return None;
        }
        let d = a.device(v);
        let t = Task::Exec { vertex: v, device: d };
        let inputs_ready = graph.preds(v).iter().all(|&p| state.ready(p, d));
        (inputs_ready && !state.has_begun(&t)).then_some(t)
    });
    transfers.extend(execs);
    transfers
}

/// Picks the index of the task to start next, or `None` when no listed task
/// has a free slot. `levels` holds `(t_level, b_level)` per vertex and is
/// only consulted by the depth- and breadth-first strategies.
pub fn choose_task(
    state: &SimState,
    cluster: &ClusterSpec,
    tasks: &[Task],
    strategy: Strategy,
    levels: &[(f64, f64)],
) -> Option<usize> {
    let mut free = tasks.iter().enumerate().filter(|(_, t)| state.slot_free(t, cluster));
    match strategy {
        Strategy::Fifo => free.next().map(|(i, _)| i),
        Strategy::DepthFirst => free
            .fold(None, |best: Option<(usize, f64)>, (i, t)| {
                let key = levels[t.vertex()].0;
                match best {
                    Some((_, k)) if k >= key => best,
                    _ => Some((i, key)),
                }
            })
            .map(|(i, _)| i),
        Strategy::BreadthFirst => free
            .fold(None, |best: Option<(usize, f64)>, (i, t)| {
                let key = levels[t.vertex()].1;
                match best {
                    Some((_, k)) if k <= key => best,
                    _ => Some((i, key)),
                }
            })
            .map(|(i, _)| i),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    end: f64,
    seq: u64,
    task: Task,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (end, seq).
        other
            .end
            .total_cmp(&self.end)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulates `a` on `cluster` and returns the full schedule.
///
/// All startable tasks are started at the current time before the clock
/// moves; when nothing can start, the clock jumps to the earliest pending
/// completion and every completion sharing that instant is processed before
/// tasks are enumerated again.
pub fn exec_time(
    graph: &DataflowGraph,
    a: &Assignment,
    cluster: &ClusterSpec,
    strategy: Strategy,
    seed: u64,
) -> Result<Schedule, SimError> {
    cluster.validate()?;
    let devices = cluster.device_count();
    a.check(graph, devices)?;

    let levels: Vec<(f64, f64)> = match strategy {
        Strategy::Fifo => Vec::new(),
        _ => {
            let f = static_features(graph, cluster.comm_factor);
            (0..graph.len()).map(|v| (f.t_level(v), f.b_level(v))).collect()
        }
    };

    let mut state = SimState::new(graph, devices);
    let mut remaining = (0..graph.len()).filter(|&v| !state.ready(v, a.device(v))).count();
    let mut events = Vec::new();
    let mut pending = BinaryHeap::new();
    let mut seq = 0u64;
    let mut t = 0.0f64;

    while remaining > 0 {
        let mut tasks = enum_tasks(graph, a, &state);
        while let Some(i) = choose_task(&state, cluster, &tasks, strategy, &levels) {
            let task = tasks.remove(i);
            state.begin(&task);
            events.push(Event { task, time_ms: t, kind: EventType::Beg });
            let end = t + cluster.duration(graph, &task, seed);
            pending.push(Pending { end, seq, task });
            seq += 1;
        }

        let Some(first) = pending.pop() else {
            let frontier = (0..graph.len()).filter(|&v| !state.ready(v, a.device(v))).collect();
            return Err(SimError::Deadlock { time_ms: t, frontier });
        };
        t = first.end;
        let mut done = vec![first];
        while pending.peek().is_some_and(|p| p.end == t) {
            done.push(pending.pop().expect("peeked"));
        }
        for p in done {
            let was_ready = state.ready(p.task.vertex(), a.device(p.task.vertex()));
            state.finish(&p.task);
            events.push(Event { task: p.task, time_ms: t, kind: EventType::End });
            if !was_ready && p.task.target() == a.device(p.task.vertex()) {
                remaining -= 1;
            }
        }
    }

    Ok(Schedule { makespan_ms: t, events })
}

/// Makespan only.
pub fn makespan(
    graph: &DataflowGraph,
    a: &Assignment,
    cluster: &ClusterSpec,
    strategy: Strategy,
    seed: u64,
) -> Result<f64, SimError> {
    exec_time(graph, a, cluster, strategy, seed).map(|s| s.makespan_ms)
}
