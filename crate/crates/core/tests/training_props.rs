use dfplace::fixtures::{six_vertex, two_device_cluster};
use dfplace::graph::{build_ffnn, explode_matmul_chain, DataflowGraph, OpKind, Vertex};
use dfplace::nn::Matrix;
use dfplace::policy::{assign_rollout, Control, GraphContext, Policy, PolicyConfig, RolloutOptions};
use dfplace::sim::{ClusterSpec, Jitter};
use dfplace::training::{
    evaluate_greedy, fine_tune, imitation_stage, sim_rl_stage, system_rl_stage, CurvePoint, OptimizerKind,
    RewardTracker, SimExecutor, TrainConfig,
};
use dfplace::Strategy;
use proptest::prelude::*;

fn small(seed: u64) -> Policy {
    Policy::new(PolicyConfig { hidden: 16, ..PolicyConfig::default() }, seed)
}

fn rl(episodes: usize, seed: u64) -> TrainConfig {
    TrainConfig { episodes, lr_start: 1e-2, lr_end: 1e-3, seed, optimizer: OptimizerKind::Adam, ..TrainConfig::default() }
}

fn flat_grads(p: &Policy) -> Vec<f64> {
    p.params.ids().flat_map(|id| p.params.grad(id).data().to_vec()).collect()
}

#[test]
fn reinforce_estimator_is_unbiased_on_a_bandit() {
    // One vertex, two devices: the placement head is a two-armed bandit.
    let g = DataflowGraph::from_parts(
        vec![Vertex { id: 0, op_kind: OpKind::Matmul, flops: 10, output_bytes: 4, label: String::new() }],
        vec![],
        vec![],
    );
    let cluster = two_device_cluster();
    let ctx = GraphContext::new(&g, &cluster);
    let mut policy = small(3);
    let reward = [1.0, -2.0];
    let epsilon = 0.3;
    let samples = 100_000usize;

    let mut per_arm: [Option<(f64, Vec<f64>)>; 2] = [None, None];
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    for i in 0..samples {
        let r = assign_rollout(&policy, &ctx, RolloutOptions::new(Control::Sample { epsilon }, i as u64)).unwrap();
        let arm = r.trace.steps[0].device;
        let mut tape = r.tape;
        let obj = tape.scalar_mul(r.log_prob, reward[arm]);
        policy.params.zero_grad();
        tape.backward_into(obj, &mut policy.params).unwrap();
        let g_i = flat_grads(&policy);
        if per_arm[arm].is_none() {
            let pi = r.trace.steps[0].device_log_prob.exp();
            per_arm[arm] = Some((pi, g_i.iter().map(|x| x / reward[arm]).collect()));
        }
        if sum.is_empty() {
            sum = vec![0.0; g_i.len()];
            sum_sq = vec![0.0; g_i.len()];
        }
        for (k, x) in g_i.iter().enumerate() {
            sum[k] += x;
            sum_sq[k] += x * x;
        }
    }
    policy.params.zero_grad();
    let [Some((p0, g0)), Some((p1, g1))] = per_arm else { panic!("both arms must be sampled") };
    assert!((p0 + p1 - 1.0).abs() < 1e-12, "arm probabilities {p0} + {p1}");

    let n = samples as f64;
    let mut worst_z = 0.0f64;
    for k in 0..sum.len() {
        let exact = p0 * reward[0] * g0[k] + p1 * reward[1] * g1[k];
        let mean = sum[k] / n;
        let var = (sum_sq[k] / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        if se > 1e-12 {
            worst_z = worst_z.max((mean - exact).abs() / se);
        } else {
            assert!((mean - exact).abs() < 1e-9);
        }
    }
    assert!(worst_z <= 3.0, "largest deviation {worst_z} standard errors");
}

/// Mean KL divergence from uniform of the greedy rollout's SEL and PLC
/// distributions.
fn kl_to_uniform(policy: &Policy, g: &DataflowGraph, cluster: &ClusterSpec) -> f64 {
    let ctx = GraphContext::new(g, cluster);
    let r = assign_rollout(policy, &ctx, RolloutOptions::new(Control::Greedy { epsilon: 0.0 }, 0)).unwrap();
    let d = cluster.device_count() as f64;
    let total: f64 = r
        .trace
        .steps
        .iter()
        .map(|s| ((s.candidates.len() as f64).ln() - s.sel_entropy) + (d.ln() - s.plc_entropy))
        .sum();
    total / r.trace.steps.len() as f64
}

#[test]
fn entropy_weight_pulls_distributions_toward_uniform() {
    let g = six_vertex();
    let cluster = two_device_cluster();
    let kls: Vec<f64> = [0.0, 0.1, 1.0]
        .iter()
        .map(|&w| {
            let mut p = small(0);
            sim_rl_stage(&mut p, &g, &cluster, &TrainConfig { entropy_weight: w, ..rl(300, 0) }).unwrap();
            kl_to_uniform(&p, &g, &cluster)
        })
        .collect();
    assert!(kls[0] > kls[1] && kls[1] > kls[2], "KL to uniform {kls:?}");
}

/// Episodes until the running best reaches within 5% of the run's final
/// best, judged by the clean makespan of each episode's assignment.
fn episodes_to_converge(curve: &[CurvePoint]) -> usize {
    let clean = |c: &CurvePoint| c.sim_makespan_ms.expect("system stage records clean makespans");
    let best = curve.iter().map(clean).fold(f64::INFINITY, f64::min);
    let mut run = f64::INFINITY;
    for (i, c) in curve.iter().enumerate() {
        run = run.min(clean(c));
        if run <= 1.05 * best {
            return i + 1;
        }
    }
    curve.len()
}

#[test]
fn warm_start_converges_faster_than_cold_start() {
    let g = six_vertex();
    let cluster = two_device_cluster();
    let system = SimExecutor::new(cluster.clone().with_jitter(Jitter::Lognormal { sigma: 0.1, seed: 9 }), Strategy::Fifo);

    // Totals over several seeds; a single run is dominated by exploration noise.
    let (mut warm_total, mut cold_total) = (0, 0);
    for seed in 0..5u64 {
        let mut cold = small(seed);
        let cold_report = system_rl_stage(&mut cold, &g, &cluster, &system, &rl(300, seed)).unwrap();

        let mut warm = small(seed);
        let imitation = TrainConfig { episodes: 500, lr_start: 1e-2, lr_end: 1e-2, seed, ..TrainConfig::default() };
        imitation_stage(&mut warm, &g, &cluster, &imitation).unwrap();
        sim_rl_stage(&mut warm, &g, &cluster, &rl(300, seed)).unwrap();
        let warm_report = system_rl_stage(&mut warm, &g, &cluster, &system, &rl(300, seed)).unwrap();

        warm_total += episodes_to_converge(&warm_report.curve);
        cold_total += episodes_to_converge(&cold_report.curve);
    }
    assert!(4 * warm_total <= cold_total, "warm start needed {warm_total} episodes in total, cold start {cold_total}");
}

#[test]
fn fine_tuning_transfers_from_chain_to_ffnn() {
    let cluster = ClusterSpec::uniform(4, 50.0, 20.0);
    let source = explode_matmul_chain(&[(8, 8), (8, 8), (8, 8), (8, 8)], 2, 4).unwrap();
    let target = build_ffnn(8, 4, 16, 4, 2, 4).unwrap();

    let mut policy = small(4);
    sim_rl_stage(&mut policy, &source, &cluster, &rl(300, 4)).unwrap();
    let (zero_shot_assignment, zero_shot) = evaluate_greedy(&policy, &target, &cluster, Strategy::Fifo).unwrap();
    assert!(zero_shot_assignment.check(&target, 4).is_ok());

    let report = fine_tune(&mut policy, &target, &cluster, None, &rl(200, 5)).unwrap();
    assert!(
        report.best_sim_makespan_ms < zero_shot,
        "fine-tuned {} vs zero-shot {zero_shot}",
        report.best_sim_makespan_ms
    );
}

#[test]
fn fine_tuning_on_the_same_graph_continues_training() {
    let g = six_vertex();
    let cluster = two_device_cluster();
    let mut a = small(2);
    let first = sim_rl_stage(&mut a, &g, &cluster, &rl(20, 2)).unwrap();
    let second = fine_tune(&mut a, &g, &cluster, None, &rl(20, 3)).unwrap();
    assert_eq!(first.curve.len() + second.curve.len(), 40);
    assert!(second.curve.iter().all(|c| c.makespan_ms.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn baseline_is_the_mean_of_all_rewards(rewards in prop::collection::vec(-100.0f64..0.0, 1..50)) {
        let mut t = RewardTracker::default();
        prop_assert_eq!(t.baseline(), 0.0);
        for (k, &r) in rewards.iter().enumerate() {
            t.push(r);
            let mean = rewards[..=k].iter().sum::<f64>() / (k + 1) as f64;
            prop_assert!((t.baseline() - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let mut tape = dfplace::nn::Tape::new();
        let x = tape.constant(Matrix::row_vector(values));
        let p = tape.softmax_row(x);
        prop_assert!((tape.value(p).sum() - 1.0).abs() <= 1e-12);
    }
}
