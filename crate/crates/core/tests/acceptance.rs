//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dfplace::engines::{run_engine, Engine, EngineOptions};
use dfplace::fixtures::{chain4, random_dag, six_vertex, two_device_cluster};
use dfplace::graph::{build_chainmm, build_ffnn, explode_matmul_chain, DataflowGraph};
use dfplace::heuristics::{brute_force_optimal, enumerative_optimizer, random_assign, DEFAULT_BRUTE_FORCE_CAP};
use dfplace::nn::check::{check_op, CHECKED_OPS};
use dfplace::policy::{assign_rollout, Control, GraphContext, MpMode, Policy, PolicyConfig, RolloutOptions};
use dfplace::sim::{check_schedule, exec_time, makespan, ClusterSpec, Jitter};
use dfplace::stats::{pearson, spearman};
use dfplace::training::{
    imitation_stage, run_pipeline, sim_rl_stage, OptimizerKind, SimExecutor, Stage, StageSpec, TrainConfig,
};
use dfplace::{Assignment, Strategy};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn policy_config() -> PolicyConfig {
    PolicyConfig { hidden: 32, ..PolicyConfig::default() }
}

/// Fixture-scale training settings. Rewards are normalized by the
/// single-device runtime, so the step size is set for order-one rewards.
fn rl_config(episodes: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        episodes,
        lr_start: 1e-2,
        lr_end: 1e-3,
        seed,
        optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    }
}

fn imitation_config(episodes: usize, seed: u64) -> TrainConfig {
    TrainConfig { episodes, lr_start: 1e-2, lr_end: 1e-2, seed, ..TrainConfig::default() }
}

fn jittered_executor(cluster: &ClusterSpec, seed: u64) -> SimExecutor {
    SimExecutor::new(cluster.clone().with_jitter(Jitter::Lognormal { sigma: 0.1, seed }), Strategy::Fifo)
}

fn c1_replay() -> Outcome {
    let start = Instant::now();
    let cluster = two_device_cluster();
    let strategies = [Strategy::Fifo, Strategy::DepthFirst, Strategy::BreadthFirst];
    let (mut dags, mut schedules, mut violations) = (0, 0, 0);
    for seed in 0..40u64 {
        let compute = 2 + (seed as usize % 6);
        let g = random_dag(compute, 2, seed);
        dags += 1;
        for k in 0..5u64 {
            let a = random_assign(&g, 2, seed * 31 + k);
            for (i, &s) in strategies.iter().enumerate() {
                let run_seed = k + i as u64;
                let c = if k % 2 == 0 {
                    cluster.clone()
                } else {
                    cluster.clone().with_jitter(Jitter::Lognormal { sigma: 0.3, seed })
                };
                let sched = exec_time(&g, &a, &c, s, run_seed).expect("simulates");
                violations += check_schedule(&g, &a, &c, &sched, run_seed).len();
                schedules += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        dags >= 20 && violations == 0 && elapsed < Duration::from_secs(10),
        format!("{dags} DAGs (<= 8 vertices), {schedules} schedules, {violations} violations, {elapsed:.2?}"),
    )
}

fn c2_oracle() -> Outcome {
    let start = Instant::now();
    let cluster = two_device_cluster();
    let (mut instances, mut below_oracle, mut strict_wins) = (0, 0, 0);
    for seed in 0..60u64 {
        let g = random_dag(3 + seed as usize % 5, 2, 1000 + seed);
        let (_, oracle) = brute_force_optimal(&g, &cluster, Strategy::Fifo, DEFAULT_BRUTE_FORCE_CAP).expect("within cap");
        instances += 1;
        let mut per_engine = Vec::new();
        for e in [Engine::CriticalPath, Engine::Enumopt, Engine::Random, Engine::Single] {
            let opts = EngineOptions { seed, ..EngineOptions::default() };
            let a = run_engine(e, &g, &cluster, &opts).expect("engine runs");
            per_engine.push((e, makespan(&g, &a, &cluster, Strategy::Fifo, 0).unwrap()));
        }
        let mut policy = Policy::new(PolicyConfig { hidden: 16, ..PolicyConfig::default() }, seed);
        let report = sim_rl_stage(&mut policy, &g, &cluster, &rl_config(60, seed)).expect("trains");
        per_engine.push((Engine::Doppler, report.best_sim_makespan_ms));

        below_oracle += per_engine.iter().filter(|(_, m)| *m < oracle).count();
        let cp = per_engine[0].1;
        if per_engine.iter().any(|&(e, m)| matches!(e, Engine::Enumopt | Engine::Doppler) && m < cp) {
            strict_wins += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        instances >= 50 && below_oracle == 0 && strict_wins >= 1 && elapsed < Duration::from_secs(120),
        format!(
            "{instances} instances, {below_oracle} engine results below the oracle, {strict_wins} strict wins over critical_path, {elapsed:.2?}"
        ),
    )
}

fn c3_enumopt() -> Outcome {
    let mut graphs: Vec<(String, DataflowGraph, usize)> = Vec::new();
    for (grid, devices) in [(1, 1), (1, 4), (2, 4), (2, 8), (3, 9)] {
        graphs.push((format!("chainmm g{grid} d{devices}"), build_chainmm(64, grid, devices).unwrap(), devices));
        graphs.push((
            format!("ffnn g{grid} d{devices}"),
            build_ffnn(32, 16, 64, 16, grid, devices).unwrap(),
            devices,
        ));
        graphs.push((
            format!("chain g{grid} d{devices}"),
            explode_matmul_chain(&[(12, 9), (9, 15), (15, 6), (6, 12)], grid, devices).unwrap(),
            devices,
        ));
    }
    let (mut checked, mut ok) = (0, 0);
    for (_, g, devices) in &graphs {
        let cluster = ClusterSpec::uniform(*devices, 1.0e3, 1.0e2);
        let a = enumerative_optimizer(g, &cluster).expect("enumopt runs");
        for m in g.meta_ops() {
            checked += 1;
            let mut seen: Vec<usize> = m.shard_ops.iter().map(|&v| a.device(v)).collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() == m.shard_ops.len() {
                ok += 1;
            }
        }
    }
    outcome(checked > 0 && ok == checked, format!("{} graphs, {ok}/{checked} meta-ops on distinct devices", graphs.len()))
}

fn c4_gradients() -> Outcome {
    let mut worst = ("", 0.0f64);
    let mut failed = Vec::new();
    for &op in CHECKED_OPS {
        let r = check_op(op, 100, 7, 1e-4);
        if r.max_rel_err > worst.1 {
            worst = (op, r.max_rel_err);
        }
        if !(r.max_rel_err < 1e-3) || r.trials != 100 {
            failed.push(op);
        }
    }
    outcome(
        failed.is_empty(),
        format!("{} ops x 100 trials, worst {} at {:.2e}, failing {:?}", CHECKED_OPS.len(), worst.0, worst.1, failed),
    )
}

fn c5_imitation() -> Outcome {
    let g = chain4();
    let cluster = two_device_cluster();
    let episodes = 500;
    let mut policy = Policy::new(policy_config(), 0);
    imitation_stage(&mut policy, &g, &cluster, &imitation_config(episodes, 0)).expect("trains");
    let ctx = GraphContext::new(&g, &cluster);
    let (mut agree, mut total) = (0, 0);
    for r in 0..100u64 {
        let opts = RolloutOptions { track_teacher: true, ..RolloutOptions::new(Control::Teacher, r) };
        let (a, t) = assign_rollout(&policy, &ctx, opts).expect("rollout").trace.teacher_agreement();
        agree += a;
        total += t;
    }
    let rate = agree as f64 / total as f64;
    outcome(
        rate >= 0.95 && episodes <= 2000,
        format!("{episodes} episodes, argmax agreement {:.1}% over 100 rollouts", rate * 100.0),
    )
}

fn random_mean(g: &DataflowGraph, cluster: &ClusterSpec) -> f64 {
    let ms: Vec<f64> = (0..100)
        .map(|s| makespan(g, &random_assign(g, cluster.device_count(), s), cluster, Strategy::Fifo, 0).unwrap())
        .collect();
    ms.iter().sum::<f64>() / ms.len() as f64
}

fn c6_rl() -> Outcome {
    let start = Instant::now();
    let g = six_vertex();
    let cluster = two_device_cluster();
    let mut policy = Policy::new(policy_config(), 0);
    let report = sim_rl_stage(&mut policy, &g, &cluster, &rl_config(500, 0)).expect("trains");
    let best = report.best_sim_makespan_ms;
    let random = random_mean(&g, &cluster);
    let (_, oracle) = brute_force_optimal(&g, &cluster, Strategy::Fifo, DEFAULT_BRUTE_FORCE_CAP).unwrap();
    let elapsed = start.elapsed();
    outcome(
        best <= random && best <= 1.10 * oracle && elapsed < Duration::from_secs(300),
        format!("best {best} ms, random mean {random:.2} ms, oracle {oracle} ms, {elapsed:.2?}"),
    )
}

fn pipeline_best(stages: &[(Stage, usize)], seed: u64) -> f64 {
    let g = six_vertex();
    let cluster = two_device_cluster();
    let specs: Vec<StageSpec> = stages
        .iter()
        .map(|&(stage, episodes)| StageSpec {
            stage,
            config: if stage == Stage::Imitation { imitation_config(episodes, seed) } else { rl_config(episodes, seed) },
        })
        .collect();
    let mut policy = Policy::new(policy_config(), seed);
    run_pipeline(&mut policy, &g, &cluster, &jittered_executor(&cluster, seed), &specs)
        .expect("pipeline runs")
        .best_sim_makespan_ms
}

fn c7_ablation() -> Outcome {
    let budget = 300;
    let all = pipeline_best(&[(Stage::Imitation, 100), (Stage::SimRl, 100), (Stage::SystemRl, 100)], 0);
    let sim_sys = pipeline_best(&[(Stage::SimRl, 150), (Stage::SystemRl, 150)], 0);
    let sys = pipeline_best(&[(Stage::SystemRl, budget)], 0);
    outcome(
        all <= 1.10 * sys && all <= 1.10 * sim_sys && sim_sys <= 1.10 * sys,
        format!("budget {budget}: all three {all} ms, sim+system {sim_sys} ms, system only {sys} ms"),
    )
}

fn c8_mp_modes() -> Outcome {
    let g = six_vertex();
    let cluster = two_device_cluster();
    let episodes = 300;
    let run = |mode| {
        let mut p = Policy::new(PolicyConfig { mp_mode: mode, ..policy_config() }, 0);
        sim_rl_stage(&mut p, &g, &cluster, &rl_config(episodes, 0)).expect("trains")
    };
    let ep = run(MpMode::PerEpisode);
    let st = run(MpMode::PerStep);
    let encoders = 2;
    let counts_exact = ep.encoder_calls == encoders * episodes && st.encoder_calls == encoders * episodes * g.len();
    outcome(
        ep.best_sim_makespan_ms <= 1.05 * st.best_sim_makespan_ms && counts_exact,
        format!(
            "per_episode {} ms with {} encoder calls, per_step {} ms with {} calls ({}x)",
            ep.best_sim_makespan_ms,
            ep.encoder_calls,
            st.best_sim_makespan_ms,
            st.encoder_calls,
            st.encoder_calls / ep.encoder_calls.max(1)
        ),
    )
}

fn c9_seeds() -> Outcome {
    let g = six_vertex();
    let cluster = two_device_cluster();
    let bests: Vec<f64> = [11u64, 22, 33]
        .iter()
        .map(|&seed| {
            let mut p = Policy::new(policy_config(), seed);
            sim_rl_stage(&mut p, &g, &cluster, &rl_config(500, seed)).expect("trains").best_sim_makespan_ms
        })
        .collect();
    let max = bests.iter().copied().fold(f64::MIN, f64::max);
    let min = bests.iter().copied().fold(f64::MAX, f64::min);
    outcome(max / min <= 1.10, format!("best makespans {bests:?}, max/min {:.4}", max / min))
}

fn c10_correlation() -> Outcome {
    let close = |a: Option<f64>, b: f64| a.is_some_and(|x| (x - b).abs() <= 1e-12);
    let x = [1.0, 2.0, 3.0, 4.0];
    let closed = close(pearson(&x, &[2.0, 4.0, 6.0, 8.0]), 1.0)
        && close(spearman(&x, &[2.0, 4.0, 6.0, 8.0]), 1.0)
        && close(pearson(&x, &[8.0, 6.0, 4.0, 2.0]), -1.0)
        && close(spearman(&x, &[8.0, 6.0, 4.0, 2.0]), -1.0)
        && close(pearson(&x, &[1.0, -1.0, -1.0, 1.0]), 0.0)
        && close(spearman(&x, &[1.0, -1.0, -1.0, 1.0]), 0.0);

    let g = six_vertex();
    let cluster = two_device_cluster();
    let jittered = cluster.clone().with_jitter(Jitter::Lognormal { sigma: 0.1, seed: 5 });
    let (mut clean, mut noisy) = (Vec::new(), Vec::new());
    for s in 0..30u64 {
        let a: Assignment = random_assign(&g, 2, 500 + s);
        clean.push(makespan(&g, &a, &cluster, Strategy::Fifo, 0).unwrap());
        noisy.push(makespan(&g, &a, &jittered, Strategy::Fifo, s).unwrap());
    }
    let r = pearson(&clean, &noisy).unwrap_or(f64::NAN);
    let rho = spearman(&clean, &noisy).unwrap_or(f64::NAN);
    outcome(closed && r > 0.5, format!("closed forms {}, 30 assignments: pearson {r:.4}, spearman {rho:.4}", if closed { "exact" } else { "WRONG" }))
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dfplace"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let (graph, asg) = (format!("{}/graph.json", d("gen")), format!("{}/assignment.json", d("assign")));
    let cluster = ["--devices", "2", "--rate", "1", "--bandwidth", "2"];
    let with = |base: &[&str], extra: &[&str]| -> Vec<String> {
        base.iter().chain(extra.iter()).map(|s| s.to_string()).collect()
    };
    let commands: Vec<(String, Vec<String>)> = vec![
        ("gen".into(), with(&["gen", "random", "--vertices", "6", "--devices", "2", "--seed", "3", "--out"], &[&d("gen")])),
        ("features".into(), with(&["features", "--graph", &graph, "--out"], &[&d("features")])),
        (
            "assign".into(),
            with(&["assign", "--engine", "critical_path", "--trials", "5", "--graph", &graph, "--out", &d("assign")], &cluster),
        ),
        (
            "simulate".into(),
            with(
                &["simulate", "--graph", &graph, "--assignment", &asg, "--jitter-sigma", "0.2", "--jitter-seed", "4", "--seed", "9", "--out", &d("simulate")],
                &cluster,
            ),
        ),
        (
            "train".into(),
            with(
                &["train", "--stages", "imitation,sim_rl,system_rl", "--episodes", "20", "--hidden", "8", "--lr-start", "0.01", "--graph", &graph, "--out", &d("train")],
                &cluster,
            ),
        ),
        (
            "compare".into(),
            with(&["compare", "--graph", &graph, "--trials", "5", "--cp-trials", "5", "--jobs", "3", "--out", &d("compare")], &cluster),
        ),
    ];
    let mut identical = 0;
    let mut failures = Vec::new();
    for (name, args) in &commands {
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = Path::new(argv[argv.iter().position(|&a| a == "--out").unwrap() + 1]).to_path_buf();
        if !cli(&argv) {
            failures.push(format!("{name} failed"));
            continue;
        }
        let first = snapshot(&out);
        // Re-run with the recorded settings: same flags, same output directory.
        let mut rerun = argv.clone();
        if name == "compare" {
            let j = rerun.iter().position(|&a| a == "--jobs").unwrap();
            rerun[j + 1] = "1";
        }
        if !cli(&rerun) {
            failures.push(format!("{name} re-run failed"));
            continue;
        }
        if snapshot(&out) == first {
            identical += 1;
        } else {
            failures.push(format!("{name} differs"));
        }
    }
    outcome(
        failures.is_empty(),
        format!("{identical}/{} commands bit-identical on re-run {failures:?}", commands.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 simulator replay invariants", c1_replay),
        ("2 oracle dominance", c2_oracle),
        ("3 enumopt distinct devices", c3_enumopt),
        ("4 gradient checks", c4_gradients),
        ("5 imitation convergence", c5_imitation),
        ("6 sim RL improvement", c6_rl),
        ("7 stage ablation ordering", c7_ablation),
        ("8 message-passing modes", c8_mp_modes),
        ("9 seed stability", c9_seeds),
        ("10 correlation machinery", c10_correlation),
        ("11 CLI determinism", c11_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {name}: {} [{:.2?}]", if o.pass { "PASS" } else { "FAIL" }, o.detail, start.elapsed());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
