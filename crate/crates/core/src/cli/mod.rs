//! Command-line driver.
//!
//! Settings resolve in this order, later sources winning: built-in
//! defaults, the `--config` JSON document, a `--cluster` file, then
//! individual flags. Every command writes its artifacts under `--out`
//! together with `manifest.json`, and every JSON or SVG artifact cites the
//! manifest's config hash.

mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::assignment::AssignmentRecord;
use crate::engines::{compare_engines, run_engine, Engine, EngineError, EngineOptions};
use crate::fixtures;
use crate::graph::{build_chainmm, build_ffnn, explode_matmul_chain, static_features, DataflowGraph};
use crate::policy::{MpMode, Policy, PolicyConfig, PolicyMeta};
use crate::sim::{exec_time, gantt_svg, utilization_report, ClusterSpec, Jitter, SimError, Strategy};
use crate::training::{meta_after, run_pipeline, OptimizerKind, SimExecutor, Stage, StageSpec, TrainConfig, TrainError};

use manifest::{Inputs, Run};
pub use manifest::{FileRef, RunManifest};

/// Exit status for invalid input: bad flags, files, graphs, or settings.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for failures after the inputs were accepted.
pub const EXIT_RUNTIME: i32 = 3;

pub const DEFAULT_DEVICES: usize = 4;
/// FLOPs per millisecond.
pub const DEFAULT_RATE: f64 = 1.0e7;
/// Bytes per millisecond.
pub const DEFAULT_BANDWIDTH: f64 = 1.0e6;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn invalid(m: impl ToString) -> CliError {
    CliError::Validation(m.to_string())
}

fn runtime(m: impl ToString) -> CliError {
    CliError::Runtime(m.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dfplace", version, about = "Device placement for sharded dataflow graphs")]
struct Cli {
    /// JSON settings document; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for independent simulations.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a dataflow graph and write it as JSON.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Dump per-vertex static features.
    Features(FeaturesArgs),
    /// Simulate one assignment: schedule, Gantt chart, utilization.
    Simulate(SimulateArgs),
    /// Produce an assignment with a named engine.
    Assign(AssignArgs),
    /// Train the placement policy through one or more stages.
    Train(TrainArgs),
    /// Compare engines on the clean and the jittered simulator.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ShardArgs {
    /// Blocks per matrix dimension.
    #[arg(long, default_value_t = 2)]
    shard: usize,
    /// Target device count; bounds the shards per meta-op.
    #[arg(long, default_value_t = DEFAULT_DEVICES)]
    devices: usize,
}

#[derive(Debug, Subcommand)]
enum GenKind {
    /// (A x B) + (C x (D x E)) over n x n matrices.
    Chainmm {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[command(flatten)]
        shard: ShardArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Softmax(ReLU(X W1 + b1) W2 + b2).
    Ffnn {
        #[arg(long, default_value_t = 1 << 15)]
        batch: usize,
        #[arg(long, default_value_t = 1 << 5)]
        d_in: usize,
        #[arg(long, default_value_t = 1 << 16)]
        d_hidden: usize,
        #[arg(long, default_value_t = 1 << 5)]
        d_out: usize,
        #[command(flatten)]
        shard: ShardArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Left-to-right product of matrices given as ROWSxCOLS.
    Chain {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<String>,
        #[command(flatten)]
        shard: ShardArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Random DAG with one input vertex.
    Random {
        /// Compute vertices.
        #[arg(long, default_value_t = 6)]
        vertices: usize,
        #[arg(long, default_value_t = 2)]
        devices: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Built-in test fixture: chain4 or six_vertex.
    Fixture {
        name: String,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Cluster JSON file.
    #[arg(long, value_name = "FILE")]
    cluster: Option<PathBuf>,
    /// Replace the cluster with a uniform one of this many devices.
    #[arg(long)]
    devices: Option<usize>,
    /// Uniform compute rate in FLOPs per millisecond.
    #[arg(long)]
    rate: Option<f64>,
    /// Uniform link bandwidth in bytes per millisecond.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    comm_factor: Option<f64>,
    /// Lognormal duration noise applied by the simulator.
    #[arg(long)]
    jitter_sigma: Option<f64>,
    #[arg(long)]
    jitter_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,
    #[arg(long)]
    comm_factor: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,
    /// Assignment JSON as written by `assign`.
    #[arg(long, value_name = "FILE")]
    assignment: PathBuf,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Run seed for jittered durations.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct AssignArgs {
    #[arg(long)]
    engine: Engine,
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,
    #[command(flatten)]
    cluster: ClusterArgs,
    /// Critical-path restarts.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Policy checkpoint for the doppler engine.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Comma-separated stages in pipeline order.
    #[arg(long, value_delimiter = ',', required = true)]
    stages: Vec<Stage>,
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    epsilon_start: Option<f64>,
    #[arg(long)]
    epsilon_end: Option<f64>,
    #[arg(long)]
    entropy_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    mp_mode: Option<MpMode>,
    #[arg(long)]
    shared_encoder: bool,
    /// Noise of the stand-in system executor used by system_rl.
    #[arg(long)]
    executor_sigma: Option<f64>,
    /// Resume from this checkpoint instead of a fresh policy.
    #[arg(long, value_name = "FILE")]
    checkpoint_in: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long, value_name = "FILE")]
    graph: PathBuf,
    #[command(flatten)]
    cluster: ClusterArgs,
    /// Engines to compare; defaults to every engine, doppler only with a
    /// checkpoint.
    #[arg(long, value_delimiter = ',')]
    engines: Option<Vec<Engine>>,
    /// Jittered runs per engine.
    #[arg(long)]
    trials: Option<usize>,
    /// Critical-path restarts.
    #[arg(long)]
    cp_trials: Option<usize>,
    #[arg(long)]
    executor_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
    }
}

/// Settings document accepted by `--config`. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub cluster: Option<ClusterSpec>,
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    /// Training settings shared by every stage.
    pub train: Option<TrainConfig>,
    /// Per-stage training settings; replace `train` for that stage.
    pub stages: BTreeMap<Stage, TrainConfig>,
    pub policy: Option<PolicyConfig>,
    pub engines: Option<Vec<Engine>>,
    pub trials: Option<usize>,
    pub cp_trials: Option<usize>,
    pub executor_sigma: Option<f64>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let file = match &cli.config {
        Some(p) => {
            let text = inputs.read(p)?;
            serde_json::from_str::<ConfigFile>(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    if cli.jobs == Some(0) {
        return Err(invalid("--jobs must be at least 1"));
    }
    with_jobs(cli.jobs, || dispatch(cli.command, &file, inputs))
}

#[cfg(feature = "parallel")]
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(runtime)?
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T>(_jobs: Option<usize>, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    f()
}

fn dispatch(command: Command, file: &ConfigFile, inputs: Inputs) -> CliResult<()> {
    match command {
        Command::Gen { kind } => cmd_gen(kind, inputs),
        Command::Features(a) => cmd_features(a, file, inputs),
        Command::Simulate(a) => cmd_simulate(a, file, inputs),
        Command::Assign(a) => cmd_assign(a, file, inputs),
        Command::Train(a) => cmd_train(a, file, inputs),
        Command::Compare(a) => cmd_compare(a, file, inputs),
    }
}

fn load_graph(inputs: &mut Inputs, path: &Path) -> CliResult<DataflowGraph> {
    let text = inputs.read(path)?;
    DataflowGraph::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn resolve_cluster(inputs: &mut Inputs, file: &ConfigFile, args: &ClusterArgs) -> CliResult<ClusterSpec> {
    let mut c = match (&args.cluster, &file.cluster) {
        (Some(p), _) => {
            let text = inputs.read(p)?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        (None, Some(c)) => c.clone(),
        (None, None) => ClusterSpec::uniform(DEFAULT_DEVICES, DEFAULT_RATE, DEFAULT_BANDWIDTH),
    };
    if args.devices.is_some() || args.rate.is_some() || args.bandwidth.is_some() {
        let devices = args.devices.unwrap_or(c.device_count());
        let rate = args.rate.or(c.rates.first().copied()).unwrap_or(DEFAULT_RATE);
        let off_diagonal = c.bandwidth.first().and_then(|row| row.get(1)).copied();
        let bandwidth = args.bandwidth.or(off_diagonal).unwrap_or(DEFAULT_BANDWIDTH);
        c = ClusterSpec::uniform(devices, rate, bandwidth)
            .with_comm_factor(c.comm_factor)
            .with_jitter(c.jitter);
    }
    if let Some(f) = args.comm_factor {
        c.comm_factor = f;
    }
    let old_seed = match c.jitter {
        Jitter::Lognormal { seed, .. } => seed,
        Jitter::None => 0,
    };
    match (args.jitter_sigma, args.jitter_seed, c.jitter) {
        (Some(sigma), seed, _) => {
            c.jitter = Jitter::Lognormal { sigma, seed: seed.unwrap_or(old_seed) };
        }
        (None, Some(seed), Jitter::Lognormal { sigma, .. }) => c.jitter = Jitter::Lognormal { sigma, seed },
        (None, Some(_), Jitter::None) => return Err(invalid("--jitter-seed needs --jitter-sigma")),
        (None, None, _) => {}
    }
    c.validate().map_err(invalid)?;
    Ok(c)
}

fn counts(g: &DataflowGraph) -> String {
    format!("vertices {} edges {} meta_ops {}", g.len(), g.edges().len(), g.meta_ops().len())
}

fn parse_dims(dims: &[String]) -> CliResult<Vec<(usize, usize)>> {
    dims.iter()
        .map(|d| {
            let (r, c) = d.split_once('x').ok_or_else(|| invalid(format!("bad matrix shape {d:?}, expected ROWSxCOLS")))?;
            let p = |s: &str| s.trim().parse::<usize>().map_err(|_| invalid(format!("bad matrix shape {d:?}")));
            Ok((p(r)?, p(c)?))
        })
        .collect()
}

fn cmd_gen(kind: GenKind, inputs: Inputs) -> CliResult<()> {
    let (graph, config, out) = match kind {
        GenKind::Chainmm { n, shard, out } => (
            build_chainmm(n, shard.shard, shard.devices),
            json!({"kind": "chainmm", "n": n, "shard": shard.shard, "devices": shard.devices}),
            out.out,
        ),
        GenKind::Ffnn { batch, d_in, d_hidden, d_out, shard, out } => (
            build_ffnn(batch, d_in, d_hidden, d_out, shard.shard, shard.devices),
            json!({"kind": "ffnn", "batch": batch, "d_in": d_in, "d_hidden": d_hidden, "d_out": d_out,
                   "shard": shard.shard, "devices": shard.devices}),
            out.out,
        ),
        GenKind::Chain { dims, shard, out } => {
            let parsed = parse_dims(&dims)?;
            (
                explode_matmul_chain(&parsed, shard.shard, shard.devices),
                json!({"kind": "chain", "dims": dims, "shard": shard.shard, "devices": shard.devices}),
                out.out,
            )
        }
        GenKind::Random { vertices, devices, seed, out } => {
            if vertices == 0 || devices == 0 {
                return Err(invalid("random graphs need at least one vertex and one device"));
            }
            (
                Ok(fixtures::random_dag(vertices, devices, seed)),
                json!({"kind": "random", "vertices": vertices, "devices": devices, "seed": seed}),
                out.out,
            )
        }
        GenKind::Fixture { name, out } => {
            let g = match name.as_str() {
                "chain4" => fixtures::chain4(),
                "six_vertex" => fixtures::six_vertex(),
                other => return Err(invalid(format!("unknown fixture {other:?} (expected chain4 or six_vertex)"))),
            };
            (Ok(g), json!({"kind": "fixture", "name": name}), out.out)
        }
    };
    let graph = graph.map_err(invalid)?;
    let mut seeds = BTreeMap::new();
    if let Some(s) = config.get("seed").and_then(|s| s.as_u64()) {
        seeds.insert("graph".to_string(), s);
    }
    let mut run = Run::new(&out, "gen", config, seeds, inputs)?;
    run.write_text("graph.json", &graph.to_json())?;
    run.finish()?;
    println!("{}", counts(&graph));
    Ok(())
}

fn cmd_features(a: FeaturesArgs, file: &ConfigFile, mut inputs: Inputs) -> CliResult<()> {
    let graph = load_graph(&mut inputs, &a.graph)?;
    let comm_factor = a
        .comm_factor
        .or(file.cluster.as_ref().map(|c| c.comm_factor))
        .unwrap_or(crate::graph::DEFAULT_COMM_FACTOR);
    if !(comm_factor > 0.0) {
        return Err(invalid("communication factor must be positive"));
    }
    let config = json!({"graph": a.graph, "comm_factor": comm_factor});
    let mut run = Run::new(&a.out.out, "features", config, BTreeMap::new(), inputs)?;
    run.write_json("features.json", &static_features(&graph, comm_factor))?;
    run.finish()?;
    println!("{} vertices", graph.len());
    Ok(())
}

fn load_assignment(inputs: &mut Inputs, path: &Path) -> CliResult<AssignmentRecord> {
    let text = inputs.read(path)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn cmd_simulate(a: SimulateArgs, file: &ConfigFile, mut inputs: Inputs) -> CliResult<()> {
    let graph = load_graph(&mut inputs, &a.graph)?;
    let record = load_assignment(&mut inputs, &a.assignment)?;
    let cluster = resolve_cluster(&mut inputs, file, &a.cluster)?;
    let assignment = record.to_assignment();
    assignment.check(&graph, cluster.device_count()).map_err(invalid)?;
    let strategy = a.strategy.or(file.strategy).unwrap_or_default();
    let seed = a.seed.or(file.seed).unwrap_or(0);

    let config = json!({"graph": a.graph, "assignment": a.assignment, "cluster": cluster,
                        "strategy": strategy, "seed": seed});
    let seeds = BTreeMap::from([("run".to_string(), seed)]);
    let mut run = Run::new(&a.out.out, "simulate", config, seeds, inputs)?;
    let schedule = exec_time(&graph, &assignment, &cluster, strategy, seed).map_err(sim_error)?;
    run.write_json("schedule.json", &schedule)?;
    run.write_json("utilization.json", &utilization_report(&schedule, &cluster))?;
    run.write_text("gantt.svg", &gantt_svg(&graph, &schedule, &cluster))?;
    run.finish()?;
    println!("makespan_ms {}", schedule.makespan_ms);
    Ok(())
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Cluster(_) | SimError::Assignment(_) => invalid(e),
        SimError::Deadlock { .. } => runtime(e),
    }
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::MissingPolicy => invalid(e),
        EngineError::Heuristic(crate::heuristics::HeuristicError::Sim(s)) => sim_error(s),
        EngineError::Heuristic(_) => invalid(e),
        EngineError::Sim(s) => sim_error(s),
        EngineError::Train(_) => runtime(e),
    }
}

fn load_policy(inputs: &mut Inputs, path: &Path) -> CliResult<(Policy, PolicyMeta)> {
    inputs.read(path)?;
    inputs.read(&crate::policy::sidecar_path(path))?;
    Policy::load(path).map_err(invalid)
}

fn cmd_assign(a: AssignArgs, file: &ConfigFile, mut inputs: Inputs) -> CliResult<()> {
    let graph = load_graph(&mut inputs, &a.graph)?;
    let cluster = resolve_cluster(&mut inputs, file, &a.cluster)?;
    let policy = match (&a.checkpoint, a.engine) {
        (Some(p), Engine::Doppler) => Some(load_policy(&mut inputs, p)?.0),
        (None, Engine::Doppler) => return Err(invalid("the doppler engine needs --checkpoint")),
        _ => None,
    };
    let opts = EngineOptions {
        trials: a.trials.or(file.cp_trials).unwrap_or(50),
        seed: a.seed.or(file.seed).unwrap_or(0),
        strategy: a.strategy.or(file.strategy).unwrap_or_default(),
        policy: policy.as_ref(),
    };
    if opts.trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    let config = json!({"engine": a.engine, "graph": a.graph, "cluster": cluster, "trials": opts.trials,
                        "seed": opts.seed, "strategy": opts.strategy, "checkpoint": a.checkpoint});
    let seeds = BTreeMap::from([("engine".to_string(), opts.seed)]);
    let mut run = Run::new(&a.out.out, "assign", config, seeds, inputs)?;
    let assignment = run_engine(a.engine, &graph, &cluster, &opts).map_err(engine_error)?;
    let clean = cluster.clone().with_jitter(Jitter::None);
    let m = crate::sim::makespan(&graph, &assignment, &clean, opts.strategy, 0).map_err(sim_error)?;
    run.write_json("assignment.json", &AssignmentRecord::new(&assignment, Some(m)))?;
    run.finish()?;
    println!("engine {} makespan_ms {m}", a.engine);
    Ok(())
}

#[derive(Serialize)]
struct CurveFile<'a> {
    stage: Stage,
    /// Episodes the policy had been trained for before this stage.
    start_episode: usize,
    points: &'a [crate::training::CurvePoint],
}

fn cmd_train(a: TrainArgs, file: &ConfigFile, mut inputs: Inputs) -> CliResult<()> {
    let graph = load_graph(&mut inputs, &a.graph)?;
    let cluster = resolve_cluster(&mut inputs, file, &a.cluster)?;
    let resumed = match &a.checkpoint_in {
        Some(p) => Some(load_policy(&mut inputs, p)?),
        None => None,
    };

    let specs: Vec<StageSpec> = a
        .stages
        .iter()
        .map(|&stage| {
            let mut c = file
                .stages
                .get(&stage)
                .or(file.train.as_ref())
                .cloned()
                .unwrap_or_default();
            if file.train.is_none() && !file.stages.contains_key(&stage) {
                c.seed = file.seed.unwrap_or(c.seed);
                c.strategy = file.strategy.unwrap_or(c.strategy);
            }
            c.episodes = a.episodes.unwrap_or(c.episodes);
            c.lr_start = a.lr_start.unwrap_or(c.lr_start);
            c.lr_end = a.lr_end.unwrap_or(c.lr_end);
            c.epsilon_start = a.epsilon_start.unwrap_or(c.epsilon_start);
            c.epsilon_end = a.epsilon_end.unwrap_or(c.epsilon_end);
            c.entropy_weight = a.entropy_weight.unwrap_or(c.entropy_weight);
            c.seed = a.seed.unwrap_or(c.seed);
            c.optimizer = a.optimizer.unwrap_or(c.optimizer);
            c.strategy = a.strategy.unwrap_or(c.strategy);
            c.validate().map_err(invalid)?;
            Ok(StageSpec { stage, config: c })
        })
        .collect::<CliResult<_>>()?;
    for w in specs.windows(2) {
        if w[1].stage <= w[0].stage {
            return Err(invalid(TrainError::StageOrder { earlier: w[0].stage, later: w[1].stage }));
        }
    }

    let (mut policy, prev_meta) = match resumed {
        Some((mut p, meta)) => {
            if let Some(mode) = a.mp_mode {
                p.config.mp_mode = mode;
            }
            (p, meta)
        }
        None => {
            let mut pc = file.policy.clone().unwrap_or_default();
            pc.hidden = a.hidden.unwrap_or(pc.hidden);
            pc.layers = a.layers.unwrap_or(pc.layers);
            pc.mp_mode = a.mp_mode.unwrap_or(pc.mp_mode);
            pc.shared_encoder |= a.shared_encoder;
            if pc.hidden == 0 {
                return Err(invalid("--hidden must be at least 1"));
            }
            (Policy::new(pc, specs[0].config.seed), PolicyMeta::default())
        }
    };

    let sigma = a.executor_sigma.or(file.executor_sigma).unwrap_or(0.1);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("executor sigma must be finite and non-negative"));
    }
    let system_seed = specs.last().map_or(0, |s| s.config.seed);
    let system = SimExecutor::new(
        cluster.clone().with_jitter(Jitter::Lognormal { sigma, seed: system_seed }),
        specs.last().map_or(Strategy::Fifo, |s| s.config.strategy),
    );

    let config = json!({"graph": a.graph, "cluster": cluster, "stages": specs, "policy": policy.config,
                        "executor_sigma": sigma, "checkpoint_in": a.checkpoint_in});
    let mut seeds: BTreeMap<String, u64> =
        specs.iter().map(|s| (format!("train.{}", s.stage), s.config.seed)).collect();
    seeds.insert("system_executor".into(), system_seed);
    let mut run = Run::new(&a.out.out, "train", config, seeds, inputs)?;

    let report = run_pipeline(&mut policy, &graph, &cluster, &system, &specs).map_err(|e| match e {
        TrainError::Config(_) | TrainError::StageOrder { .. } => invalid(e),
        other => runtime(other),
    })?;
    let mut start = prev_meta.episodes_trained;
    for r in &report.stages {
        run.write_json(
            &format!("curve_{}.json", r.stage),
            &CurveFile { stage: r.stage, start_episode: start, points: &r.curve },
        )?;
        start += r.curve.len();
    }
    run.write_json("report.json", &report)?;
    run.write_json("best_assignment.json", &report.best)?;
    let meta = meta_after(&prev_meta, &report, &graph, &cluster, &specs);
    let ckpt = run.path("policy.json");
    policy.save(&ckpt, &meta).map_err(runtime)?;
    run.adopt("policy.json")?;
    run.adopt("policy.sidecar.json")?;
    run.finish()?;
    for r in &report.stages {
        println!("stage {} episodes {} best_sim_makespan_ms {}", r.stage, r.curve.len(), r.best_sim_makespan_ms);
    }
    println!("best_sim_makespan_ms {}", report.best_sim_makespan_ms);
    Ok(())
}

fn cmd_compare(a: CompareArgs, file: &ConfigFile, mut inputs: Inputs) -> CliResult<()> {
    let graph = load_graph(&mut inputs, &a.graph)?;
    let cluster = resolve_cluster(&mut inputs, file, &a.cluster)?;
    let policy = match &a.checkpoint {
        Some(p) => Some(load_policy(&mut inputs, p)?.0),
        None => None,
    };
    let engines = a.engines.clone().or(file.engines.clone()).unwrap_or_else(|| {
        Engine::ALL
            .into_iter()
            .filter(|&e| e != Engine::Doppler || policy.is_some())
            .collect()
    });
    if engines.contains(&Engine::Doppler) && policy.is_none() {
        return Err(invalid("the doppler engine needs --checkpoint"));
    }
    let trials = a.trials.or(file.trials).unwrap_or(10);
    let sigma = a.executor_sigma.or(file.executor_sigma).unwrap_or(0.1);
    if trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("executor sigma must be finite and non-negative"));
    }
    let opts = EngineOptions {
        trials: a.cp_trials.or(file.cp_trials).unwrap_or(50),
        seed: a.seed.or(file.seed).unwrap_or(0),
        strategy: a.strategy.or(file.strategy).unwrap_or_default(),
        policy: policy.as_ref(),
    };
    if opts.trials == 0 {
        return Err(invalid("--cp-trials must be at least 1"));
    }
    let config = json!({"graph": a.graph, "cluster": cluster, "engines": engines, "trials": trials,
                        "cp_trials": opts.trials, "executor_sigma": sigma, "seed": opts.seed,
                        "strategy": opts.strategy, "checkpoint": a.checkpoint});
    let seeds = BTreeMap::from([("engine".to_string(), opts.seed), ("jitter".to_string(), opts.seed)]);
    let mut run = Run::new(&a.out.out, "compare", config, seeds, inputs)?;
    let cmp = compare_engines(&graph, &cluster, &engines, trials, sigma, &opts).map_err(engine_error)?;
    run.write_json("comparison.json", &cmp)?;
    run.finish()?;
    print!("{}", cmp.table());
    Ok(())
}

/// Reads a manifest written by a previous command.
pub fn read_manifest(dir: &Path) -> std::io::Result<RunManifest> {
    let text = fs::read_to_string(dir.join(manifest::MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_accepts_partial_sections() {
        let c: ConfigFile = serde_json::from_str(
            r#"{"train": {"episodes": 7}, "stages": {"sim_rl": {"lr_start": 0.5}}, "policy": {"hidden": 8}}"#,
        )
        .unwrap();
        assert_eq!(c.train.unwrap().episodes, 7);
        assert_eq!(c.stages[&Stage::SimRl].lr_start, 0.5);
        assert_eq!(c.policy.unwrap().hidden, 8);
        assert!(serde_json::from_str::<ConfigFile>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims(&["2x3".into(), "3x4".into()]).unwrap(), vec![(2, 3), (3, 4)]);
        assert!(parse_dims(&["2by3".into()]).is_err());
    }

    #[test]
    fn flags_override_cluster_file_values() {
        let file = ConfigFile { cluster: Some(ClusterSpec::uniform(3, 5.0, 7.0)), ..Default::default() };
        let args = ClusterArgs {
            cluster: None,
            devices: Some(2),
            rate: None,
            bandwidth: None,
            comm_factor: Some(1.0),
            jitter_sigma: Some(0.2),
            jitter_seed: None,
        };
        let c = resolve_cluster(&mut Inputs::default(), &file, &args).unwrap();
        assert_eq!(c.device_count(), 2);
        assert_eq!((c.rates[0], c.bandwidth[0][1], c.comm_factor), (5.0, 7.0, 1.0));
        assert_eq!(c.jitter, Jitter::Lognormal { sigma: 0.2, seed: 0 });
    }
}
