use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_dfplace");
const CLUSTER: [&str; 6] = ["--devices", "2", "--rate", "1", "--bandwidth", "2"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn fixture(dir: &TempDir) -> String {
    ok(&["gen", "fixture", "six_vertex", "--out", &p(dir, "g")]);
    p(dir, "g/graph.json")
}

fn with<'a>(args: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(extra).copied().collect()
}

fn counts(path: &str) -> (usize, usize) {
    let g = json(path);
    (g["vertices"].as_array().unwrap().len(), g["edges"].as_array().unwrap().len())
}

#[test]
fn unsharded_chainmm_has_five_inputs_and_four_products() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["gen", "chainmm", "--n", "64", "--shard", "1", "--out", &p(&dir, "g")]);
    assert!(out.contains("vertices 9"), "{out}");
    assert_eq!(counts(&p(&dir, "g/graph.json")).0, 9);
}

#[test]
fn ffnn_counts_follow_the_block_layout() {
    let dir = TempDir::new().unwrap();
    ok(&["gen", "ffnn", "--batch", "8", "--d-in", "4", "--d-hidden", "16", "--d-out", "4", "--out", &p(&dir, "a")]);
    assert_eq!(counts(&p(&dir, "a/graph.json")), (76, 104));
    ok(&["gen", "ffnn", "--batch", "8", "--d-in", "4", "--d-hidden", "16", "--d-out", "4", "--shard", "1", "--out", &p(&dir, "b")]);
    assert_eq!(counts(&p(&dir, "b/graph.json")), (15, 16));
}

#[test]
fn gen_outputs_cite_the_manifest() {
    let dir = TempDir::new().unwrap();
    let graph = fixture(&dir);
    let g = json(&graph);
    let m = json(p(&dir, "g/manifest.json"));
    assert_eq!(g["manifest"]["file"], "manifest.json");
    assert_eq!(g["manifest"]["config_hash"], m["config_hash"]);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"].as_str().unwrap().ends_with("graph.json")));
}

#[test]
fn simulate_reports_the_serial_makespan() {
    let dir = TempDir::new().unwrap();
    let graph = fixture(&dir);
    ok(&with(&["assign", "--engine", "single", "--graph", &graph, "--out", &p(&dir, "a")], &CLUSTER));
    let asg = p(&dir, "a/assignment.json");
    assert!(json(&asg)["assignment"].as_array().unwrap().iter().all(|d| d == 0));
    let out = ok(&with(&["simulate", "--graph", &graph, "--assignment", &asg, "--out", &p(&dir, "s")], &CLUSTER));
    assert_eq!(out.trim(), "makespan_ms 64");
    for f in ["schedule.json", "utilization.json", "gantt.svg", "manifest.json"] {
        assert!(dir.path().join("s").join(f).exists(), "{f} missing");
    }
    assert!(std::fs::read_to_string(p(&dir, "s/gantt.svg")).unwrap().contains("manifest.json"));
}

#[test]
fn jitter_seed_changes_the_simulated_makespan() {
    let dir = TempDir::new().unwrap();
    let graph = fixture(&dir);
    ok(&with(&["assign", "--engine", "single", "--graph", &graph, "--out", &p(&dir, "a")], &CLUSTER));
    let asg = p(&dir, "a/assignment.json");
    let sim = |seed: &str, out: &str| {
        ok(&with(
            &["simulate", "--graph", &graph, "--assignment", &asg, "--jitter-sigma", "0.2", "--seed", seed, "--out", out],
            &CLUSTER,
        ))
    };
    let a = sim("1", &p(&dir, "s1"));
    let again = sim("1", &p(&dir, "s1b"));
    let b = sim("2", &p(&dir, "s2"));
    assert_eq!(a, again);
    assert_ne!(a, b);
}

#[test]
fn enumopt_places_meta_op_shards_on_distinct_devices() {
    let dir = TempDir::new().unwrap();
    ok(&["gen", "chainmm", "--n", "64", "--shard", "2", "--devices", "4", "--out", &p(&dir, "g")]);
    let graph = p(&dir, "g/graph.json");
    ok(&["assign", "--engine", "enumopt", "--graph", &graph, "--devices", "4", "--out", &p(&dir, "a")]);
    let g = json(&graph);
    let a: Vec<u64> = json(p(&dir, "a/assignment.json"))["assignment"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d.as_u64().unwrap())
        .collect();
    for m in g["meta_ops"].as_array().unwrap() {
        let mut devices: Vec<u64> = m["shard_ops"].as_array().unwrap().iter().map(|v| a[v.as_u64().unwrap() as usize]).collect();
        let n = devices.len();
        devices.sort();
        devices.dedup();
        assert_eq!(devices.len(), n);
    }
}

#[test]
fn more_critical_path_trials_never_hurt() {
    let dir = TempDir::new().unwrap();
    ok(&["gen", "random", "--vertices", "10", "--devices", "3", "--seed", "5", "--out", &p(&dir, "g")]);
    let graph = p(&dir, "g/graph.json");
    let makespan = |trials: &str, out: &str| {
        ok(&["assign", "--engine", "critical_path", "--trials", trials, "--graph", &graph, "--devices", "3", "--out", out]);
        json(PathBuf::from(out).join("assignment.json"))["makespan_ms"].as_f64().unwrap()
    };
    assert!(makespan("50", &p(&dir, "a50")) <= makespan("1", &p(&dir, "a1")));
}

#[test]
fn training_writes_curves_and_resumes() {
    let dir = TempDir::new().unwrap();
    let graph = fixture(&dir);
    let train = |stages: &str, out: &str, extra: &[&str]| {
        let base = ["train", "--stages", stages, "--episodes", "50", "--hidden", "8", "--graph", &graph, "--out", out];
        ok(&with(&with(&base, &CLUSTER), extra));
    };
    train("sim_rl", &p(&dir, "t1"), &[]);
    let curve = json(p(&dir, "t1/curve_sim_rl.json"));
    assert_eq!(curve["points"].as_array().unwrap().len(), 50);
    assert_eq!(curve["start_episode"], 0);

    let ckpt = p(&dir, "t1/policy.json");
    train("sim_rl", &p(&dir, "t2"), &["--checkpoint-in", &ckpt]);
    assert_eq!(json(p(&dir, "t2/curve_sim_rl.json"))["start_episode"], 50);

    train("imitation,sim_rl,system_rl", &p(&dir, "t3"), &[]);
    for stage in ["imitation", "sim_rl", "system_rl"] {
        let c = json(dir.path().join("t3").join(format!("curve_{stage}.json")));
        assert_eq!(c["stage"], stage);
    }
}

#[test]
fn noiseless_compare_ranks_perfectly_and_trained_doppler_competes() {
    let dir = TempDir::new().unwrap();
    let graph = fixture(&dir);
    ok(&with(
        &["train", "--stages", "sim_rl", "--episodes", "300", "--hidden", "16", "--optimizer", "adam", "--lr-start", "0.01", "--lr-end", "0.001", "--graph", &graph, "--out", &p(&dir, "t")],
        &CLUSTER,
    ));
    let ckpt = p(&dir, "t/policy.json");
    ok(&with(
        &["compare", "--graph", &graph, "--executor-sigma", "0", "--trials", "3", "--checkpoint", &ckpt, "--out", &p(&dir, "c")],
        &CLUSTER,
    ));
    let c = json(p(&dir, "c/comparison.json"));
    assert!((c["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((c["spearman"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let mean = |e: &str| {
        c["rows"].as_array().unwrap().iter().find(|r| r["engine"] == e).unwrap()["mean_ms"].as_f64().unwrap()
    };
    assert!(mean("doppler") <= mean("critical_path"), "doppler {} vs critical_path {}", mean("doppler"), mean("critical_path"));
}

#[test]
fn exit_codes_separate_validation_from_runtime_errors() {
    let dir = TempDir::new().unwrap();
    let graph = fixture(&dir);
    assert_eq!(code(&["simulate", "--bogus"]), 2);
    assert_eq!(code(&["features", "--graph", &p(&dir, "missing.json"), "--out", &p(&dir, "f")]), 2);
    assert_eq!(code(&["assign", "--engine", "doppler", "--graph", &graph, "--out", &p(&dir, "a")]), 2);

    let bad = p(&dir, "bad.json");
    std::fs::write(&bad, r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(code(&["--config", &bad, "assign", "--engine", "single", "--graph", &graph, "--out", &p(&dir, "b")]), 2);

    let file = p(&dir, "plain");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(code(&["assign", "--engine", "single", "--graph", &graph, "--out", &file]), 3);
}

#[test]
fn help_lists_the_flags() {
    let top = ok(&["--help"]);
    for word in ["gen", "features", "simulate", "assign", "train", "compare", "--config", "--jobs"] {
        assert!(top.contains(word), "{word} missing from help");
    }
    let train = ok(&["train", "--help"]);
    for flag in ["--stages", "--episodes", "--lr-start", "--mp-mode", "--checkpoint-in", "--executor-sigma"] {
        assert!(train.contains(flag), "{flag} missing from train help");
    }
}
