use super::*;
use crate::fixtures;
use crate::graph::{OpKind, Vertex};
use crate::policy::PolicyConfig;

fn small_policy(seed: u64) -> Policy {
    Policy::new(PolicyConfig { hidden: 8, layers: 1, ..PolicyConfig::default() }, seed)
}

fn cfg(episodes: usize) -> TrainConfig {
    TrainConfig { episodes, lr_start: 0.01, lr_end: 0.01, ..TrainConfig::default() }
}

struct Constant(f64);

impl Executor for Constant {
    fn name(&self) -> String {
        "constant".into()
    }
    fn run(&self, _: &DataflowGraph, _: &Assignment, _: u64) -> Result<f64, ExecutorError> {
        Ok(self.0)
    }
}

struct FailsAt(u64);

impl Executor for FailsAt {
    fn name(&self) -> String {
        "failing".into()
    }
    fn run(&self, _: &DataflowGraph, _: &Assignment, run: u64) -> Result<f64, ExecutorError> {
        if run == self.0 {
            Err(ExecutorError("device lost".into()))
        } else {
            Ok(10.0)
        }
    }
}

#[test]
fn tracker_is_the_running_mean() {
    let mut t = RewardTracker::default();
    assert_eq!(t.baseline(), 0.0);
    let xs = [-3.0, -1.5, -4.25, -2.0];
    for (k, x) in xs.iter().enumerate() {
        t.push(*x);
        let mean = xs[..=k].iter().sum::<f64>() / (k + 1) as f64;
        assert_eq!(t.baseline(), mean);
    }
}

#[test]
fn first_advantage_is_the_reward() {
    let g = fixtures::six_vertex();
    let c = fixtures::two_device_cluster();
    let mut p = small_policy(0);
    let config = TrainConfig { reward_scale: RewardScale::Fixed { ms: 1.0 }, ..cfg(3) };
    let r = sim_rl_stage(&mut p, &g, &c, &config).unwrap();
    assert_eq!(r.curve[0].advantage, -r.curve[0].makespan_ms);
    assert_eq!(r.curve.len(), 3);
}

#[test]
fn constant_executor_stops_updates() {
    let g = fixtures::six_vertex();
    let c = fixtures::two_device_cluster();
    let mut p = small_policy(1);
    let config = TrainConfig { entropy_weight: 0.0, ..cfg(10) };
    let r = system_rl_stage(&mut p, &g, &c, &Constant(7.0), &config).unwrap();
    assert!(r.curve[0].advantage != 0.0);
    for (pt, norm) in r.curve.iter().zip(&r.update_norms).skip(1) {
        assert_eq!(pt.advantage, 0.0);
        assert_eq!(*norm, 0.0);
    }
}

#[test]
fn executor_failure_names_the_episode() {
    let g = fixtures::six_vertex();
    let c = fixtures::two_device_cluster();
    let mut p = small_policy(2);
    let config = TrainConfig { reward_scale: RewardScale::Fixed { ms: 1.0 }, ..cfg(10) };
    let err = system_rl_stage(&mut p, &g, &c, &FailsAt(3), &config).unwrap_err();
    assert!(matches!(err, TrainError::Executor { episode: 3, .. }), "{err}");
    assert!(err.to_string().contains("episode 3"));
}

#[test]
fn zero_learning_rate_imitation_keeps_params() {
    let g = fixtures::chain4();
    let c = fixtures::two_device_cluster();
    let mut p = small_policy(3);
    let before = p.params.clone();
    let config = TrainConfig { lr_start: 0.0, lr_end: 0.0, ..cfg(5) };
    let r = imitation_stage(&mut p, &g, &c, &config).unwrap();
    assert_eq!(p.params, before);
    assert!(r.curve.iter().all(|pt| pt.loss.unwrap().is_finite()));
}

#[test]
fn single_vertex_imitation_loss_is_placement_only() {
    let g = DataflowGraph::from_parts(
        vec![Vertex { id: 0, op_kind: OpKind::Matmul, flops: 5, output_bytes: 4, label: String::new() }],
        vec![],
        vec![],
    );
    let c = ClusterSpec::uniform(3, 1.0, 1.0);
    let mut p = small_policy(4);
    let ctx = GraphContext::new(&g, &c);
    let r = assign_rollout(&p, &ctx, RolloutOptions::new(Control::Teacher, 0)).unwrap();
    let step = &r.trace.steps[0];
    assert_eq!(step.vertex_log_prob, 0.0);
    let config = TrainConfig { lr_start: 0.0, lr_end: 0.0, ..cfg(1) };
    let rep = imitation_stage(&mut p, &g, &c, &config).unwrap();
    assert_eq!(rep.curve[0].loss, Some(-step.device_log_prob));
}

#[test]
fn sim_only_pipeline_equals_the_stage() {
    let g = fixtures::six_vertex();
    let c = fixtures::two_device_cluster();
    let config = cfg(20);
    let mut a = small_policy(5);
    let mut b = small_policy(5);
    let direct = sim_rl_stage(&mut a, &g, &c, &config).unwrap();
    let exec = SimExecutor::new(c.clone(), Strategy::Fifo);
    let piped = run_pipeline(&mut b, &g, &c, &exec, &[StageSpec { stage: Stage::SimRl, config }]).unwrap();
    assert_eq!(piped.stages, vec![direct]);
    assert_eq!(a, b);
}

#[test]
fn pipeline_rejects_bad_orders() {
    let g = fixtures::six_vertex();
    let c = fixtures::two_device_cluster();
    let exec = SimExecutor::new(c.clone(), Strategy::Fifo);
    let spec = |stage| StageSpec { stage, config: cfg(1) };
    let mut p = small_policy(6);
    let err = run_pipeline(&mut p, &g, &c, &exec, &[spec(Stage::SimRl), spec(Stage::Imitation)]).unwrap_err();
    assert!(matches!(err, TrainError::StageOrder { earlier: Stage::SimRl, later: Stage::Imitation }));
    assert!(run_pipeline(&mut p, &g, &c, &exec, &[spec(Stage::SimRl), spec(Stage::SimRl)]).is_err());
    assert!(run_pipeline(&mut p, &g, &c, &exec, &[]).is_err());
    let three = run_pipeline(&mut p, &g, &c, &exec, &[spec(Stage::Imitation), spec(Stage::SimRl), spec(Stage::SystemRl)]).unwrap();
    assert_eq!(three.stages.len(), 3);
}

#[test]
fn config_validation() {
    assert!(TrainConfig { episodes: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { epsilon_start: 1.5, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { entropy_weight: -1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
    let s = TrainConfig::default().lr_schedule();
    assert_eq!((s.value(0), s.value(499)), (1e-4, 1e-7));
}
