//! Central finite-difference verification of every tape op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Matrix, NnError, Tape, Var};

/// Every differentiable op exposed by [`Tape`].
pub const CHECKED_OPS: &[&str] = &[
    "matmul",
    "add",
    "add_broadcast",
    "add_scalar",
    "mul",
    "scalar_mul",
    "concat",
    "concat_rows",
    "row_gather",
    "segment_sum",
    "leaky_relu",
    "softmax_row",
    "log_softmax_row",
    "log",
    "sum",
    "transpose",
    "select",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub op: &'static str,
    pub trials: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_err: f64,
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values bounded away from zero so leaky-relu kinks are not straddled.
fn rand_signed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = rand_matrix(rng, rows, cols, 0.05, 2.0);
    for x in m.data_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    m
}

struct Case {
    inputs: Vec<Matrix>,
    build: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, NnError>>,
}

fn case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let r = rng.random_range(1..=4);
    let c = rng.random_range(1..=4);
    let k = rng.random_range(1..=4);
    let s = rng.random_range(-2.0..2.0);
    match op {
        "matmul" => Case {
            inputs: vec![rand_signed(rng, r, k), rand_signed(rng, k, c)],
            build: Box::new(|t, x| t.matmul(x[0], x[1])),
        },
        "add" => Case {
            inputs: vec![rand_signed(rng, r, c), rand_signed(rng, r, c)],
            build: Box::new(|t, x| t.add(x[0], x[1])),
        },
        "add_broadcast" => Case {
            inputs: vec![rand_signed(rng, r, c), rand_signed(rng, 1, c)],
            build: Box::new(|t, x| t.add(x[0], x[1])),
        },
        "add_scalar" => Case {
            inputs: vec![rand_signed(rng, r, c)],
            build: Box::new(move |t, x| Ok(t.add_scalar(x[0], s))),
        },
        "mul" => Case {
            inputs: vec![rand_signed(rng, r, c), rand_signed(rng, r, c)],
            build: Box::new(|t, x| t.mul(x[0], x[1])),
        },
        "scalar_mul" => Case {
            inputs: vec![rand_signed(rng, r, c)],
            build: Box::new(move |t, x| Ok(t.scalar_mul(x[0], s))),
        },
        "concat" => Case {
            inputs: vec![rand_signed(rng, r, c), rand_signed(rng, r, k)],
            build: Box::new(|t, x| t.concat(x)),
        },
        "concat_rows" => Case {
            inputs: vec![rand_signed(rng, r, c), rand_signed(rng, k, c)],
            build: Box::new(|t, x| t.concat_rows(x)),
        },
        "row_gather" => {
            let idx: Vec<usize> = (0..k + 1).map(|_| rng.random_range(0..r)).collect();
            Case {
                inputs: vec![rand_signed(rng, r, c)],
                build: Box::new(move |t, x| t.row_gather(x[0], &idx)),
            }
        }
        "segment_sum" => {
            let seg: Vec<usize> = (0..r).map(|_| rng.random_range(0..k)).collect();
            Case {
                inputs: vec![rand_signed(rng, r, c)],
                build: Box::new(move |t, x| t.segment_sum(x[0], &seg, k)),
            }
        }
        "leaky_relu" => Case {
            inputs: vec![rand_signed(rng, r, c)],
            build: Box::new(|t, x| Ok(t.leaky_relu(x[0], 0.01))),
        },
        "softmax_row" => Case {
            inputs: vec![rand_signed(rng, r, c)],
            build: Box::new(|t, x| Ok(t.softmax_row(x[0]))),
        },
        "log_softmax_row" => Case {
            inputs: vec![rand_signed(rng, r, c)],
            build: Box::new(|t, x| Ok(t.log_softmax_row(x[0]))),
        },
        "log" => Case {
            inputs: vec![rand_matrix(rng, r, c, 0.2, 3.0)],
            build: Box::new(|t, x| Ok(t.log(x[0]))),
        },
        "sum" => Case {
            inputs: vec![rand_signed(rng, r, c)],
            build: Box::new(|t, x| Ok(t.sum(x[0]))),
        },
        "transpose" => Case {
            inputs: vec![rand_signed(rng, r, c)],
            build: Box::new(|t, x| Ok(t.transpose(x[0]))),
        },
        "select" => {
            let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
            Case {
                inputs: vec![rand_signed(rng, r, c)],
                build: Box::new(move |t, x| t.select(x[0], i, j)),
            }
        }
        other => panic!("no gradient check for op {other}"),
    }
}

/// Scalar loss `sum(weights * op(inputs))` and its tape.
fn evaluate(case: &Case, inputs: &[Matrix], weights: &mut Option<Matrix>, rng: &mut ChaCha8Rng) -> (Tape, Vec<Var>, Var) {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| t.constant(m.clone())).collect();
    let out = (case.build)(&mut t, &vars).expect("check cases are well-shaped");
    let s = t.value(out).shape();
    let w = weights.get_or_insert_with(|| rand_signed(rng, s.0, s.1)).clone();
    let w = t.constant(w);
    let prod = t.mul(out, w).expect("weights match output");
    let loss = t.sum(prod);
    (t, vars, loss)
}

/// Compares analytic gradients of `op` with central differences over
/// `trials` random cases.
pub fn check_op(op: &'static str, trials: usize, seed: u64, step: f64) -> GradCheck {
    let mut max_rel_err = 0.0f64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let case = case(op, &mut rng);
        let mut weights = None;
        let (t, vars, loss) = evaluate(&case, &case.inputs, &mut weights, &mut rng);
        let grads = t.backward(loss).expect("scalar loss");
        for (i, &v) in vars.iter().enumerate() {
            let analytic = grads.get(v).cloned().unwrap_or_else(|| {
                let s = case.inputs[i].shape();
                Matrix::zeros(s.0, s.1)
            });
            for j in 0..case.inputs[i].data().len() {
                let mut f = |delta: f64| {
                    let mut inputs = case.inputs.clone();
                    inputs[i].data_mut()[j] += delta;
                    let (t, _, l) = evaluate(&case, &inputs, &mut weights, &mut rng);
                    t.value(l).item()
                };
                let numeric = (f(step) - f(-step)) / (2.0 * step);
                let a = analytic.data()[j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                max_rel_err = max_rel_err.max(err);
            }
        }
    }
    GradCheck { op, trials, max_rel_err }
}
