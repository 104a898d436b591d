//! WebAssembly bindings for the placement demo page.
//!
//! Every export takes plain numbers and strings and returns a JSON string,
//! so the page needs no bundler or generated TypeScript types.

use dfplace::engines::{compare_engines, run_engine, Engine, EngineOptions};
use dfplace::fixtures::{chain4, six_vertex, two_device_cluster};
use dfplace::graph::{build_chainmm, build_ffnn, DataflowGraph};
use dfplace::policy::{Policy, PolicyConfig};
use dfplace::sim::{exec_time, gantt_svg, utilization_report, ClusterSpec, Jitter};
use dfplace::training::{sim_rl_stage, OptimizerKind, TrainConfig};
use dfplace::Strategy;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Preset names understood by every export.
pub const PRESETS: [&str; 4] = ["six_vertex", "chain4", "chainmm", "ffnn"];

/// Graph and cluster for a preset. Fixtures bring their own cluster; the
/// sharded builders run on a uniform cluster of `devices` devices.
pub fn preset(name: &str, devices: usize) -> Result<(DataflowGraph, ClusterSpec), String> {
    let devices = devices.max(1);
    let uniform = ClusterSpec::uniform(devices, 1e7, 1e6);
    match name {
        "six_vertex" => Ok((six_vertex(), two_device_cluster())),
        "chain4" => Ok((chain4(), two_device_cluster())),
        "chainmm" => build_chainmm(512, 2, devices).map(|g| (g, uniform)).map_err(|e| e.to_string()),
        "ffnn" => build_ffnn(1024, 64, 2048, 64, 2, devices).map(|g| (g, uniform)).map_err(|e| e.to_string()),
        other => Err(format!("unknown preset `{other}`")),
    }
}

#[derive(Serialize)]
struct SimulateOut {
    engine: String,
    vertices: usize,
    devices: usize,
    assignment: Vec<usize>,
    makespan_ms: f64,
    busy_fraction: Vec<f64>,
    svg: String,
}

#[derive(Serialize)]
struct TrainOut {
    episodes: Vec<f64>,
    best_ms: f64,
    best_assignment: Vec<usize>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// Place `preset` with `engine`, simulate it and render the Gantt chart.
pub fn simulate_json(preset_name: &str, devices: usize, engine: &str, strategy: &str, sigma: f64, seed: u64) -> Result<String, String> {
    let (graph, cluster) = preset(preset_name, devices)?;
    let engine: Engine = engine.parse().map_err(|e: dfplace::engines::UnknownEngine| e.to_string())?;
    let strategy: Strategy = strategy.parse().map_err(|e: dfplace::sim::UnknownStrategy| e.to_string())?;
    let opts = EngineOptions { trials: 20, seed, strategy, policy: None };
    let a = run_engine(engine, &graph, &cluster, &opts).map_err(|e| e.to_string())?;
    let cluster = if sigma > 0.0 { cluster.with_jitter(Jitter::Lognormal { sigma, seed }) } else { cluster };
    let schedule = exec_time(&graph, &a, &cluster, strategy, seed).map_err(|e| e.to_string())?;
    let report = utilization_report(&schedule, &cluster);
    to_json(&SimulateOut {
        engine: engine.to_string(),
        vertices: graph.len(),
        devices: cluster.device_count(),
        assignment: a.devices().to_vec(),
        makespan_ms: schedule.makespan_ms,
        busy_fraction: report.devices.iter().map(|d| d.busy_fraction).collect(),
        svg: gantt_svg(&graph, &schedule, &cluster),
    })
}

/// Every heuristic engine on `preset`, clean and under jitter.
pub fn compare_json(preset_name: &str, devices: usize, trials: usize, sigma: f64, seed: u64) -> Result<String, String> {
    let (graph, cluster) = preset(preset_name, devices)?;
    let engines: Vec<Engine> = Engine::ALL.into_iter().filter(|e| *e != Engine::Doppler).collect();
    let opts = EngineOptions { trials: 20, seed, ..EngineOptions::default() };
    let cmp = compare_engines(&graph, &cluster, &engines, trials.max(1), sigma, &opts).map_err(|e| e.to_string())?;
    to_json(&cmp)
}

/// A short simulator-only training run of a fresh policy.
pub fn train_json(preset_name: &str, devices: usize, episodes: usize, seed: u64) -> Result<String, String> {
    let (graph, cluster) = preset(preset_name, devices)?;
    let mut policy = Policy::new(PolicyConfig { hidden: 16, ..PolicyConfig::default() }, seed);
    let config = TrainConfig {
        episodes: episodes.max(1),
        lr_start: 1e-2,
        lr_end: 1e-3,
        seed,
        optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let report = sim_rl_stage(&mut policy, &graph, &cluster, &config).map_err(|e| e.to_string())?;
    to_json(&TrainOut {
        episodes: report.curve.iter().map(|p| p.makespan_ms).collect(),
        best_ms: report.best_sim_makespan_ms,
        best_assignment: report.best.assignment.clone(),
    })
}

#[wasm_bindgen]
pub fn presets() -> String {
    serde_json::to_string(&PRESETS).unwrap_or_default()
}

#[wasm_bindgen]
pub fn simulate(preset: &str, devices: usize, engine: &str, strategy: &str, sigma: f64, seed: u32) -> Result<String, JsError> {
    simulate_json(preset, devices, engine, strategy, sigma, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(preset: &str, devices: usize, trials: usize, sigma: f64, seed: u32) -> Result<String, JsError> {
    compare_json(preset, devices, trials, sigma, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn train(preset: &str, devices: usize, episodes: usize, seed: u32) -> Result<String, JsError> {
    train_json(preset, devices, episodes, seed as u64).map_err(|e| JsError::new(&e))
}
