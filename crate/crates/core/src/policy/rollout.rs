use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Encoded, GraphContext, MpMode, Policy, PolicyError};
use crate::assignment::Assignment;
use crate::graph::VertexId;
use crate::nn::{NnError, Tape, Var};
use crate::sim::EarliestStartModel;

/// How actions are chosen during a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    /// With probability `epsilon` a uniform choice, otherwise a draw from
    /// the policy distribution.
    Sample { epsilon: f64 },
    /// With probability `epsilon` a uniform choice, otherwise the most
    /// likely action (ties to the lowest index).
    Greedy { epsilon: f64 },
    /// Follow the critical-path teacher.
    Teacher,
}

impl Control {
    fn epsilon(&self) -> f64 {
        match self {
            Control::Sample { epsilon } | Control::Greedy { epsilon } => *epsilon,
            Control::Teacher => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub control: Control,
    pub seed: u64,
    /// Overrides the policy's configured mode.
    pub mp_mode: Option<MpMode>,
    /// Record the teacher's choice at every visited state.
    pub track_teacher: bool,
}

impl RolloutOptions {
    pub fn new(control: Control, seed: u64) -> Self {
        Self { control, seed, mp_mode: None, track_teacher: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub candidates: Vec<VertexId>,
    pub vertex: VertexId,
    pub vertex_log_prob: f64,
    pub device: usize,
    pub device_log_prob: f64,
    pub sel_entropy: f64,
    pub plc_entropy: f64,
    /// Most likely candidate and, for the chosen vertex, most likely device.
    pub argmax_vertex: VertexId,
    pub argmax_device: usize,
    /// Teacher's vertex, and its device for the chosen vertex.
    pub teacher_vertex: Option<VertexId>,
    pub teacher_device: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    pub makespan_ms: Option<f64>,
}

impl EpisodeTrace {
    /// Steps whose most likely vertex and device both match the teacher,
    /// out of the steps where the teacher was tracked.
    pub fn teacher_agreement(&self) -> (usize, usize) {
        let tracked = self.steps.iter().filter(|s| s.teacher_vertex.is_some());
        let mut agree = 0;
        let mut total = 0;
        for s in tracked {
            total += 1;
            if Some(s.argmax_vertex) == s.teacher_vertex && Some(s.argmax_device) == s.teacher_device {
                agree += 1;
            }
        }
        (agree, total)
    }
}

/// One complete episode. The tape holds the differentiable log-probability
/// and entropy sums for the trainer.
#[derive(Debug)]
pub struct Rollout {
    pub assignment: Assignment,
    pub trace: EpisodeTrace,
    pub tape: Tape,
    /// Sum over steps of the log-probabilities of both chosen actions.
    pub log_prob: Var,
    /// Sum over steps of the entropies of both distributions.
    pub entropy: Var,
    pub encoder_calls: usize,
}

/// Log-probability of action `i` under the mixture of a uniform choice
/// (weight `epsilon`) and `softmax(logits)`; `logits` is `1 x k`.
pub fn mixture_log_prob(tape: &mut Tape, logits: Var, i: usize, epsilon: f64) -> Result<Var, NnError> {
    let k = tape.value(logits).cols();
    if epsilon == 0.0 {
        let lp = tape.log_softmax_row(logits);
        return tape.select(lp, 0, i);
    }
    let p = tape.softmax_row(logits);
    let pi = tape.select(p, 0, i)?;
    let mixed = tape.scalar_mul(pi, 1.0 - epsilon);
    let mixed = tape.add_scalar(mixed, epsilon / k as f64);
    Ok(tape.log(mixed))
}

fn entropy(tape: &mut Tape, logits: Var) -> Result<Var, NnError> {
    let p = tape.softmax_row(logits);
    let lp = tape.log_softmax_row(logits);
    let plp = tape.mul(p, lp)?;
    let s = tape.sum(plp);
    Ok(tape.scalar_mul(s, -1.0))
}

fn choose(tape: &Tape, logits: Var, control: Control, rng: &mut ChaCha8Rng) -> usize {
    let row = tape.value(logits);
    let k = row.cols();
    let eps = control.epsilon();
    if eps > 0.0 && rng.random::<f64>() < eps {
        return rng.random_range(0..k);
    }
    match control {
        Control::Greedy { .. } | Control::Teacher => row.argmax_row(0),
        Control::Sample { .. } => {
            let m = row.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = row.data().iter().map(|x| (x - m).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    return i;
                }
                u -= wi;
            }
            k - 1
        }
    }
}

/// Critical-path teacher: the candidate with the largest t-level (lowest id
/// on ties) and the device where it could start earliest (lowest id on
/// ties).
pub fn teacher_action(ctx: &GraphContext<'_>, model: &EarliestStartModel<'_>, cands: &[VertexId]) -> Result<(VertexId, usize), PolicyError> {
    let mut best: Option<VertexId> = None;
    for &v in cands {
        if best.is_none_or(|b| ctx.features.t_level(v) > ctx.features.t_level(b)) {
            best = Some(v);
        }
    }
    let v = best.ok_or(PolicyError::EmptyCandidates)?;
    Ok((v, model.best_device(v)?.0))
}

/// Builds an assignment one vertex at a time. Each step SEL picks a vertex
/// whose predecessors are all placed and PLC picks its device.
pub fn assign_rollout(policy: &Policy, ctx: &GraphContext<'_>, opts: RolloutOptions) -> Result<Rollout, PolicyError> {
    let graph = ctx.graph;
    let n = graph.len();
    let mp_mode = opts.mp_mode.unwrap_or(policy.config.mp_mode);
    let eps = opts.control.epsilon();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tape = Tape::new();
    let mut model = EarliestStartModel::new(graph, ctx.cluster);

    let mut missing: Vec<usize> = (0..n).map(|v| graph.preds(v).len()).collect();
    let mut assigned = vec![false; n];
    let mut is_cand = vec![false; n];
    let mut cands: Vec<VertexId> = (0..n).filter(|&v| missing[v] == 0).collect();
    for &v in &cands {
        is_cand[v] = true;
    }
    let mut device = vec![0usize; n];
    let mut placed: Vec<(VertexId, usize)> = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    let mut lp_terms = Vec::with_capacity(2 * n);
    let mut ent_terms = Vec::with_capacity(2 * n);
    let mut encoder_calls = 0;
    let mut enc: Option<Encoded> = None;

    for _ in 0..n {
        if enc.is_none() || mp_mode == MpMode::PerStep {
            let x = ctx.node_inputs(&assigned, &is_cand);
            let (e, calls) = policy.encode(&mut tape, ctx, &x)?;
            enc = Some(e);
            encoder_calls += calls;
        }
        let e = enc.expect("encoded above");
        if cands.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }

        let teacher = match (opts.control, opts.track_teacher) {
            (Control::Teacher, _) | (_, true) => Some(teacher_action(ctx, &model, &cands)?),
            _ => None,
        };

        let sel = policy.sel_logits(&mut tape, ctx, &e, &cands)?;
        let argmax_i = tape.value(sel).argmax_row(0);
        let i = match (opts.control, teacher) {
            (Control::Teacher, Some((tv, _))) => cands
                .iter()
                .position(|&c| c == tv)
                .ok_or(PolicyError::TeacherOutsideCandidates { vertex: tv })?,
            _ => choose(&tape, sel, opts.control, &mut rng),
        };
        let v = cands[i];
        let lp_sel = mixture_log_prob(&mut tape, sel, i, eps)?;
        let h_sel = entropy(&mut tape, sel)?;

        let xd = ctx.device_features(&model, v)?;
        let plc = policy.plc_logits(&mut tape, ctx, &e, v, &placed, &xd)?;
        let argmax_d = tape.value(plc).argmax_row(0);
        let teacher_device = match teacher {
            Some((tv, td)) if tv == v => Some(td),
            Some(_) => Some(model.best_device(v)?.0),
            None => None,
        };
        let d = match opts.control {
            Control::Teacher => teacher_device.expect("teacher tracked"),
            _ => choose(&tape, plc, opts.control, &mut rng),
        };
        let lp_plc = mixture_log_prob(&mut tape, plc, d, eps)?;
        let h_plc = entropy(&mut tape, plc)?;

        steps.push(StepRecord {
            candidates: cands.clone(),
            vertex: v,
            vertex_log_prob: tape.value(lp_sel).item(),
            device: d,
            device_log_prob: tape.value(lp_plc).item(),
            sel_entropy: tape.value(h_sel).item(),
            plc_entropy: tape.value(h_plc).item(),
            argmax_vertex: cands[argmax_i],
            argmax_device: argmax_d,
            teacher_vertex: teacher.map(|t| t.0),
            teacher_device,
        });
        lp_terms.extend([lp_sel, lp_plc]);
        ent_terms.extend([h_sel, h_plc]);

        model.place(v, d)?;
        device[v] = d;
        assigned[v] = true;
        is_cand[v] = false;
        // Inputs are available on every device, so their nominal device
        // carries no information.
        if !graph.is_input(v) {
            placed.push((v, d));
        }
        cands.remove(i);
        for &s in graph.succs(v) {
            missing[s] -= 1;
            if missing[s] == 0 {
                is_cand[s] = true;
                let pos = cands.partition_point(|&c| c < s);
                cands.insert(pos, s);
            }
        }
    }

    let log_prob = sum_scalars(&mut tape, &lp_terms)?;
    let entropy = sum_scalars(&mut tape, &ent_terms)?;
    Ok(Rollout {
        assignment: Assignment::new(device, "doppler"),
        trace: EpisodeTrace { steps, makespan_ms: None },
        tape,
        log_prob,
        entropy,
        encoder_calls,
    })
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var, NnError> {
    if terms.is_empty() {
        return Ok(tape.constant(crate::nn::Matrix::scalar(0.0)));
    }
    let col = tape.concat_rows(terms)?;
    Ok(tape.sum(col))
}
