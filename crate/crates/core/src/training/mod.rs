//! Staged training of the dual policy: imitation of the critical-path
//! teacher, policy gradient against the simulator, and policy gradient
//! against an external executor.

mod executor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use executor::{Executor, ExecutorError, SimExecutor};

use crate::assignment::{Assignment, AssignmentRecord};
use crate::graph::DataflowGraph;
use crate::heuristics::single_device_assign;
use crate::nn::{Adam, LinearSchedule, Optimizer, Sgd};
use crate::policy::{assign_rollout, Control, GraphContext, Policy, PolicyError, PolicyMeta, RolloutOptions};
use crate::sim::{makespan, mix, ClusterSpec, SimError, Strategy};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("executor failed in episode {episode}: {source}")]
    Executor { episode: usize, source: ExecutorError },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("stage {later} cannot follow {earlier}; stages must appear in the order imitation, sim_rl, system_rl")]
    StageOrder { earlier: Stage, later: Stage },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Imitation,
    SimRl,
    SystemRl,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Imitation => "imitation",
            Stage::SimRl => "sim_rl",
            Stage::SystemRl => "system_rl",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "imitation" => Ok(Stage::Imitation),
            "sim_rl" => Ok(Stage::SimRl),
            "system_rl" => Ok(Stage::SystemRl),
            other => Err(format!("unknown stage {other:?} (expected imitation, sim_rl or system_rl)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Divisor applied to runtimes before they become rewards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardScale {
    /// The executor's runtime for the single-device assignment.
    #[default]
    SingleDevice,
    Fixed { ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub entropy_weight: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub reward_scale: RewardScale,
    /// Scheduler strategy of the simulator used for rewards and evaluation.
    pub strategy: Strategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            lr_start: 1e-4,
            lr_end: 1e-7,
            epsilon_start: 0.2,
            epsilon_end: 0.0,
            entropy_weight: 1e-2,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            reward_scale: RewardScale::SingleDevice,
            strategy: Strategy::Fifo,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.entropy_weight >= 0.0) {
            return bad("entropy weight must be non-negative");
        }
        if let RewardScale::Fixed { ms } = self.reward_scale {
            if !(ms > 0.0 && ms.is_finite()) {
                return bad("reward scale must be positive");
            }
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LinearSchedule {
        LinearSchedule::new(self.lr_start, self.lr_end, self.episodes.saturating_sub(1))
    }

    pub fn epsilon_schedule(&self) -> LinearSchedule {
        LinearSchedule::new(self.epsilon_start, self.epsilon_end, self.episodes.saturating_sub(1))
    }

    fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Sgd => Box::new(Sgd::new(self.lr_schedule())),
            OptimizerKind::Adam => Box::new(Adam::new(self.lr_schedule())),
        }
    }
}

/// Running mean of every reward seen so far; zero before the first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTracker {
    sum: f64,
    count: usize,
}

impl RewardTracker {
    pub fn baseline(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn push(&mut self, reward: f64) {
        self.sum += reward;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub index: usize,
    pub makespan_ms: f64,
    pub advantage: f64,
    pub epsilon: f64,
    pub lr: f64,
    /// Imitation loss; absent for policy-gradient stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// Clean-simulator makespan of the episode's assignment, recorded when
    /// `makespan_ms` comes from another executor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_makespan_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub curve: Vec<CurvePoint>,
    /// Best assignment by the stage's own runtime signal. For imitation,
    /// the trained student's greedy rollout.
    pub best: AssignmentRecord,
    /// Clean-simulator makespan of `best`.
    pub best_sim_makespan_ms: f64,
    pub encoder_calls: usize,
    /// Gradient norm of each update, in order.
    pub update_norms: Vec<f64>,
}

/// Greedy (epsilon 0) rollout of `policy` and its clean-simulator makespan.
pub fn evaluate_greedy(policy: &Policy, graph: &DataflowGraph, cluster: &ClusterSpec, strategy: Strategy) -> Result<(Assignment, f64), TrainError> {
    let ctx = GraphContext::new(graph, cluster);
    let r = assign_rollout(policy, &ctx, RolloutOptions::new(Control::Greedy { epsilon: 0.0 }, 0))?;
    let m = makespan(graph, &r.assignment, &clean(cluster), strategy, 0)?;
    Ok((r.assignment, m))
}

fn clean(cluster: &ClusterSpec) -> ClusterSpec {
    cluster.clone().with_jitter(crate::sim::Jitter::None)
}

/// Teacher-forced imitation of the critical-path rule: every episode
/// follows the teacher and takes one ascent step on the summed
/// log-probabilities of its choices.
pub fn imitation_stage(policy: &mut Policy, graph: &DataflowGraph, cluster: &ClusterSpec, config: &TrainConfig) -> Result<StageReport, TrainError> {
    config.validate()?;
    let ctx = GraphContext::new(graph, cluster);
    let mut opt = config.optimizer();
    let mut curve = Vec::with_capacity(config.episodes);
    let mut encoder_calls = 0;
    let mut update_norms = Vec::with_capacity(config.episodes);
    for ep in 0..config.episodes {
        let r = assign_rollout(policy, &ctx, RolloutOptions::new(Control::Teacher, mix(config.seed, ep as u64)))?;
        encoder_calls += r.encoder_calls;
        policy.params.zero_grad();
        r.tape.backward_into(r.log_prob, &mut policy.params).map_err(PolicyError::from)?;
        update_norms.push(policy.params.grad_norm());
        let lr = opt.learning_rate();
        opt.step(&mut policy.params);
        policy.params.zero_grad();
        let m = makespan(graph, &r.assignment, &clean(cluster), config.strategy, 0)?;
        curve.push(CurvePoint {
            index: ep,
            makespan_ms: m,
            advantage: 0.0,
            epsilon: 0.0,
            lr,
            loss: Some(-r.tape.value(r.log_prob).item()),
            sim_makespan_ms: None,
        });
    }
    let (a, m) = evaluate_greedy(policy, graph, cluster, config.strategy)?;
    Ok(StageReport {
        stage: Stage::Imitation,
        curve,
        best: AssignmentRecord::new(&a, Some(m)),
        best_sim_makespan_ms: m,
        encoder_calls,
        update_norms,
    })
}

fn reward_scale(graph: &DataflowGraph, executor: &dyn Executor, config: &TrainConfig) -> Result<f64, TrainError> {
    match config.reward_scale {
        RewardScale::Fixed { ms } => Ok(ms),
        RewardScale::SingleDevice => {
            let ms = executor
                .run(graph, &single_device_assign(graph), u64::MAX)
                .map_err(|source| TrainError::Executor { episode: 0, source })?;
            Ok(if ms > 0.0 { ms } else { 1.0 })
        }
    }
}

/// Policy-gradient loop shared by the simulator and executor stages.
///
/// Each episode samples an assignment, observes its runtime `T`, and
/// ascends `(R - b) * sum(log pi) + entropy_weight * sum(H)` with
/// `R = -T / scale` and `b` the mean of all earlier rewards.
pub fn policy_gradient_stage(
    stage: Stage,
    policy: &mut Policy,
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    executor: &dyn Executor,
    config: &TrainConfig,
) -> Result<StageReport, TrainError> {
    config.validate()?;
    let ctx = GraphContext::new(graph, cluster);
    let scale = reward_scale(graph, executor, config)?;
    let eps_schedule = config.epsilon_schedule();
    let mut opt = config.optimizer();
    let mut tracker = RewardTracker::default();
    let mut curve = Vec::with_capacity(config.episodes);
    let mut update_norms = Vec::with_capacity(config.episodes);
    let mut best: Option<(Assignment, f64)> = None;
    let mut encoder_calls = 0;

    for ep in 0..config.episodes {
        let epsilon = eps_schedule.value(ep);
        let r = assign_rollout(policy, &ctx, RolloutOptions::new(Control::Sample { epsilon }, mix(config.seed, ep as u64)))?;
        encoder_calls += r.encoder_calls;
        let runtime = executor
            .run(graph, &r.assignment, ep as u64)
            .map_err(|source| TrainError::Executor { episode: ep, source })?;
        let reward = -runtime / scale;
        let advantage = reward - tracker.baseline();

        let mut tape = r.tape;
        let pg = tape.scalar_mul(r.log_prob, advantage);
        let ent = tape.scalar_mul(r.entropy, config.entropy_weight);
        let objective = tape.add(pg, ent).map_err(PolicyError::from)?;
        policy.params.zero_grad();
        tape.backward_into(objective, &mut policy.params).map_err(PolicyError::from)?;
        update_norms.push(policy.params.grad_norm());
        let lr = opt.learning_rate();
        opt.step(&mut policy.params);
        policy.params.zero_grad();
        tracker.push(reward);

        let sim_makespan_ms = match stage {
            Stage::SystemRl => Some(makespan(graph, &r.assignment, &clean(cluster), config.strategy, 0)?),
            _ => None,
        };
        if best.as_ref().is_none_or(|b| runtime < b.1) {
            best = Some((r.assignment, runtime));
        }
        curve.push(CurvePoint { index: ep, makespan_ms: runtime, advantage, epsilon, lr, loss: None, sim_makespan_ms });
    }

    let (a, runtime) = best.expect("episodes >= 1");
    let sim = makespan(graph, &a, &clean(cluster), config.strategy, 0)?;
    Ok(StageReport {
        stage,
        curve,
        best: AssignmentRecord::new(&a.with_engine("doppler"), Some(runtime)),
        best_sim_makespan_ms: sim,
        encoder_calls,
        update_norms,
    })
}

/// Policy gradient with rewards from the clean simulator.
pub fn sim_rl_stage(policy: &mut Policy, graph: &DataflowGraph, cluster: &ClusterSpec, config: &TrainConfig) -> Result<StageReport, TrainError> {
    let exec = SimExecutor::new(clean(cluster), config.strategy);
    policy_gradient_stage(Stage::SimRl, policy, graph, cluster, &exec, config)
}

/// Policy gradient with rewards from `executor`; `cluster` is the nominal
/// cost model used for the policy's device features.
pub fn system_rl_stage(
    policy: &mut Policy,
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    executor: &dyn Executor,
    config: &TrainConfig,
) -> Result<StageReport, TrainError> {
    policy_gradient_stage(Stage::SystemRl, policy, graph, cluster, executor, config)
}

/// Continues training a loaded policy on a (possibly new) graph. Feature
/// normalization is recomputed for `graph`.
pub fn fine_tune(
    policy: &mut Policy,
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    executor: Option<&dyn Executor>,
    config: &TrainConfig,
) -> Result<StageReport, TrainError> {
    match executor {
        Some(e) => system_rl_stage(policy, graph, cluster, e, config),
        None => sim_rl_stage(policy, graph, cluster, config),
    }
}

/// One pipeline stage and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: Stage,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
    /// Lowest clean-simulator makespan among the stage bests.
    pub best: AssignmentRecord,
    pub best_sim_makespan_ms: f64,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the stages in order on one policy. `executor` serves the
/// `system_rl` stage.
pub fn run_pipeline(
    policy: &mut Policy,
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    executor: &dyn Executor,
    stages: &[StageSpec],
) -> Result<PipelineReport, TrainError> {
    if stages.is_empty() {
        return Err(TrainError::Config("pipeline has no stages".into()));
    }
    for w in stages.windows(2) {
        if w[1].stage <= w[0].stage {
            return Err(TrainError::StageOrder { earlier: w[0].stage, later: w[1].stage });
        }
    }
    let mut reports = Vec::with_capacity(stages.len());
    for s in stages {
        let r = match s.stage {
            Stage::Imitation => imitation_stage(policy, graph, cluster, &s.config)?,
            Stage::SimRl => sim_rl_stage(policy, graph, cluster, &s.config)?,
            Stage::SystemRl => system_rl_stage(policy, graph, cluster, executor, &s.config)?,
        };
        reports.push(r);
    }
    let best = reports
        .iter()
        .min_by(|a, b| a.best_sim_makespan_ms.total_cmp(&b.best_sim_makespan_ms))
        .expect("non-empty");
    Ok(PipelineReport {
        best: AssignmentRecord { makespan_ms: Some(best.best_sim_makespan_ms), ..best.best.clone() },
        best_sim_makespan_ms: best.best_sim_makespan_ms,
        stages: reports,
    })
}

/// Metadata to store with a policy after `report`.
pub fn meta_after(prev: &PolicyMeta, report: &PipelineReport, graph: &DataflowGraph, cluster: &ClusterSpec, specs: &[StageSpec]) -> PolicyMeta {
    let mut meta = prev.clone();
    for (r, s) in report.stages.iter().zip(specs) {
        meta.episodes_trained += r.curve.len();
        meta.stages.push(r.stage.to_string());
        if r.stage != Stage::Imitation {
            meta.epsilon = Some(s.config.epsilon_schedule());
        }
    }
    meta.normalization = Some(GraphContext::new(graph, cluster).norm);
    meta
}

#[cfg(test)]
mod tests;
