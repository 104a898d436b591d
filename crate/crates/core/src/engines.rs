//! Named placement engines and the engine comparison report.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::Assignment;
use crate::graph::DataflowGraph;
use crate::heuristics::{
    critical_path_assign, enumerative_optimizer, random_assign, single_device_assign, HeuristicError,
};
use crate::policy::Policy;
use crate::sim::{makespan, ClusterSpec, Jitter, SimError, Strategy};
use crate::stats;
use crate::training::{evaluate_greedy, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    CriticalPath,
    Enumopt,
    Random,
    Single,
    Doppler,
}

impl Engine {
    pub const ALL: [Engine; 5] = [Engine::Single, Engine::Random, Engine::CriticalPath, Engine::Enumopt, Engine::Doppler];
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown engine `{0}` (expected critical_path, enumopt, random, single or doppler)")]
pub struct UnknownEngine(pub String);

impl FromStr for Engine {
    type Err = UnknownEngine;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "critical_path" => Ok(Engine::CriticalPath),
            "enumopt" => Ok(Engine::Enumopt),
            "random" => Ok(Engine::Random),
            "single" => Ok(Engine::Single),
            "doppler" => Ok(Engine::Doppler),
            other => Err(UnknownEngine(other.to_string())),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::CriticalPath => "critical_path",
            Engine::Enumopt => "enumopt",
            Engine::Random => "random",
            Engine::Single => "single",
            Engine::Doppler => "doppler",
        })
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("the doppler engine needs a trained policy checkpoint")]
    MissingPolicy,
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Settings shared by every engine.
#[derive(Debug, Clone, Copy)]
pub struct EngineOptions<'a> {
    /// Critical-path restarts.
    pub trials: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub policy: Option<&'a Policy>,
}

impl Default for EngineOptions<'_> {
    fn default() -> Self {
        Self { trials: 50, seed: 0, strategy: Strategy::Fifo, policy: None }
    }
}

/// Runs `engine`. Engines that consult the cost model see `cluster` without
/// jitter.
pub fn run_engine(
    engine: Engine,
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    opts: &EngineOptions<'_>,
) -> Result<Assignment, EngineError> {
    let clean = cluster.clone().with_jitter(Jitter::None);
    Ok(match engine {
        Engine::CriticalPath => critical_path_assign(graph, &clean, opts.trials, opts.seed)?,
        Engine::Enumopt => enumerative_optimizer(graph, &clean)?,
        Engine::Random => random_assign(graph, clean.device_count(), opts.seed),
        Engine::Single => single_device_assign(graph),
        Engine::Doppler => {
            let policy = opts.policy.ok_or(EngineError::MissingPolicy)?;
            evaluate_greedy(policy, graph, &clean, opts.strategy)?.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineRow {
    pub engine: Engine,
    pub assignment: Vec<usize>,
    /// Makespan under the clean simulator.
    pub clean_ms: f64,
    /// One makespan per jittered run.
    pub runs_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub trials: usize,
    pub jitter_sigma: f64,
    pub rows: Vec<EngineRow>,
    /// Correlation between the clean and jittered series, paired per run;
    /// `None` when either series is constant.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl Comparison {
    /// Fixed-width table of engines with mean and standard deviation.
    pub fn table(&self) -> String {
        let mut s = format!("{:<14} {:>12} {:>22}\n", "engine", "simulated", "jittered mean ± std");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<14} {:>12.3} {:>13.3} ± {:<6.3}\n",
                r.engine.to_string(),
                r.clean_ms,
                r.mean_ms,
                r.std_ms
            ));
        }
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!("pearson {}  spearman {}\n", fmt(self.pearson), fmt(self.spearman)));
        s
    }
}

/// Runs every engine once, then times its assignment on the clean
/// simulator and on `trials` runs of a lognormally jittered copy of
/// `cluster` (run seeds `0..trials`, noise seed `seed`).
pub fn compare_engines(
    graph: &DataflowGraph,
    cluster: &ClusterSpec,
    engines: &[Engine],
    trials: usize,
    jitter_sigma: f64,
    opts: &EngineOptions<'_>,
) -> Result<Comparison, EngineError> {
    let clean = cluster.clone().with_jitter(Jitter::None);
    let noisy = cluster.clone().with_jitter(Jitter::Lognormal { sigma: jitter_sigma, seed: opts.seed });
    let mut rows = Vec::with_capacity(engines.len());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &engine in engines {
        let a = run_engine(engine, graph, cluster, opts)?;
        let clean_ms = makespan(graph, &a, &clean, opts.strategy, 0)?;
        let runs_ms = run_series(graph, &a, &noisy, opts.strategy, trials)?;
        xs.extend(std::iter::repeat_n(clean_ms, runs_ms.len()));
        ys.extend_from_slice(&runs_ms);
        rows.push(EngineRow {
            engine,
            assignment: a.devices().to_vec(),
            clean_ms,
            mean_ms: stats::mean(&runs_ms),
            std_ms: if runs_ms.len() > 1 { stats::std_dev(&runs_ms) } else { 0.0 },
            runs_ms,
        });
    }
    Ok(Comparison {
        trials,
        jitter_sigma,
        rows,
        pearson: stats::pearson(&xs, &ys),
        spearman: stats::spearman(&xs, &ys),
    })
}

#[cfg(feature = "parallel")]
fn run_series(graph: &DataflowGraph, a: &Assignment, c: &ClusterSpec, s: Strategy, trials: usize) -> Result<Vec<f64>, SimError> {
    use rayon::prelude::*;
    (0..trials as u64).into_par_iter().map(|t| makespan(graph, a, c, s, t)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_series(graph: &DataflowGraph, a: &Assignment, c: &ClusterSpec, s: Strategy, trials: usize) -> Result<Vec<f64>, SimError> {
    (0..trials as u64).map(|t| makespan(graph, a, c, s, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{six_vertex, two_device_cluster};

    #[test]
    fn names_round_trip() {
        for e in Engine::ALL {
            assert_eq!(e.to_string().parse::<Engine>().unwrap(), e);
        }
        assert!("magic".parse::<Engine>().is_err());
    }

    #[test]
    fn doppler_needs_policy() {
        let g = six_vertex();
        let r = run_engine(Engine::Doppler, &g, &two_device_cluster(), &EngineOptions::default());
        assert!(matches!(r, Err(EngineError::MissingPolicy)));
    }

    #[test]
    fn zero_sigma_series_correlate_perfectly() {
        let g = six_vertex();
        let engines = [Engine::Single, Engine::CriticalPath, Engine::Random];
        let c = compare_engines(&g, &two_device_cluster(), &engines, 4, 0.0, &EngineOptions::default()).unwrap();
        for r in &c.rows {
            assert!(r.runs_ms.iter().all(|&m| m == r.clean_ms));
            assert_eq!(r.std_ms, 0.0);
        }
        assert!((c.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert!((c.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.rows[0].clean_ms, 64.0);
    }
}
