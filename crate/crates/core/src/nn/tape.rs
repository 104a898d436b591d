use super::params::{ParamId, ParamStore};
use super::{Matrix, NnError, Shape};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    /// `b` is either the same shape as `a` or a single row broadcast down `a`.
    Add(Var, Var),
    AddScalar(Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowGather(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    LeakyRelu(Var, f64),
    SoftmaxRow(Var),
    LogSoftmaxRow(Var),
    Log(Var),
    Sum(Var),
    Transpose(Var),
    Select(Var, usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a computation for reverse-mode differentiation. Nodes are
/// appended in evaluation order, so reverse insertion order is a valid
/// backward order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every recorded node.
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that is not a parameter (its gradient is still available
    /// through [`Grads`]).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// A leaf holding the current value of a stored parameter; backward
    /// passes accumulate into that parameter's gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf { param: Some(id) })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(NnError::Shape { op: "matmul", left: sa, right: sb });
        }
        let v = self.value(a).matmul(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Elementwise sum; a 1xc `b` is broadcast over every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mut v = self.value(a).clone();
        if sa == sb {
            v.add_assign(self.value(b));
        } else if sb.0 == 1 && sb.1 == sa.1 {
            let bias = self.value(b).data().to_vec();
            for r in 0..sa.0 {
                for (x, y) in v.row_mut(r).iter_mut().zip(&bias) {
                    *x += y;
                }
            }
        } else {
            return Err(NnError::Shape { op: "add", left: sa, right: sb });
        }
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NnError::Shape { op: "mul", left: sa, right: sb });
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        Ok(self.push(Matrix::new(sa.0, sa.1, data), Op::Mul(a, b)))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::ScalarMul(a, c))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(NnError::Shape { op: "concat", left: self.shape(parts[0]), right: self.shape(p) });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(NnError::Shape { op: "concat_rows", left: self.shape(parts[0]), right: self.shape(p) });
            }
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        Ok(self.push(Matrix::new(rows, cols, data), Op::ConcatRows(parts.to_vec())))
    }

    /// Rows of `a` at `idx`, in order; indices may repeat.
    pub fn row_gather(&mut self, a: Var, idx: &[usize]) -> Result<Var, NnError> {
        let s = self.shape(a);
        let mut out = Matrix::zeros(idx.len(), s.1);
        for (i, &r) in idx.iter().enumerate() {
            if r >= s.0 {
                return Err(NnError::Index { op: "row_gather", index: r, len: s.0 });
            }
            out.row_mut(i).copy_from_slice(self.value(a).row(r));
        }
        Ok(self.push(out, Op::RowGather(a, idx.to_vec())))
    }

    /// Output row `s` is the sum of the rows `i` of `a` with `seg[i] == s`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], segments: usize) -> Result<Var, NnError> {
        let s = self.shape(a);
        if seg.len() != s.0 {
            return Err(NnError::Shape { op: "segment_sum", left: s, right: Shape(seg.len(), 1) });
        }
        let mut out = Matrix::zeros(segments, s.1);
        for (i, &g) in seg.iter().enumerate() {
            if g >= segments {
                return Err(NnError::Index { op: "segment_sum", index: g, len: segments });
            }
            for (o, x) in out.row_mut(g).iter_mut().zip(self.value(a).row(i)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, seg.to_vec())))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn softmax_row(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            out.row_mut(r).copy_from_slice(&softmax(m.row(r)));
        }
        self.push(out, Op::SoftmaxRow(a))
    }

    pub fn log_softmax_row(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            out.row_mut(r).copy_from_slice(&log_softmax(m.row(r)));
        }
        self.push(out, Op::LogSoftmaxRow(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// Sum of all entries as a 1x1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Entry `(r, c)` as a 1x1 matrix.
    pub fn select(&mut self, a: Var, r: usize, c: usize) -> Result<Var, NnError> {
        let s = self.shape(a);
        if r >= s.0 || c >= s.1 {
            return Err(NnError::Index { op: "select", index: r * s.1 + c, len: s.0 * s.1 });
        }
        let v = Matrix::scalar(self.value(a).get(r, c));
        Ok(self.push(v, Op::Select(a, r, c)))
    }

    /// Gradients of the 1x1 `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads, NnError> {
        let s = self.shape(loss);
        if s != Shape(1, 1) {
            return Err(NnError::NonScalarLoss(s));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(x) => x.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { .. } => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul(&self.value(*b).transpose()));
                    acc(&mut grads, *b, self.value(*a).transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    if self.shape(*a) == self.shape(*b) {
                        acc(&mut grads, *b, g.clone());
                    } else {
                        let mut col = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, x) in col.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                        acc(&mut grads, *b, col);
                    }
                    acc(&mut grads, *a, g.clone());
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Mul(a, b) => {
                    let ga = Matrix::new(g.rows(), g.cols(), g.data().iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect());
                    let gb = Matrix::new(g.rows(), g.cols(), g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::ScalarMul(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let cols = self.shape(p).1;
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        acc(&mut grads, p, gp);
                        c0 += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let s = self.shape(p);
                        let gp = Matrix::new(s.0, s.1, g.data()[r0 * s.1..(r0 + s.0) * s.1].to_vec());
                        acc(&mut grads, p, gp);
                        r0 += s.0;
                    }
                }
                Op::RowGather(a, idx) => {
                    let s = self.shape(*a);
                    let mut ga = Matrix::zeros(s.0, s.1);
                    for (i, &r) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSum(a, seg) => {
                    let s = self.shape(*a);
                    let mut ga = Matrix::zeros(s.0, s.1);
                    for (i, &sg) in seg.iter().enumerate() {
                        ga.row_mut(i).copy_from_slice(g.row(sg));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let data = g.data().iter().zip(x.data()).map(|(gi, &xi)| if xi > 0.0 { *gi } else { slope * gi }).collect();
                    acc(&mut grads, *a, Matrix::new(g.rows(), g.cols(), data));
                }
                Op::SoftmaxRow(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRow(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for ((o, gi), yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = gi - yi.exp() * total;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    let data = g.data().iter().zip(x.data()).map(|(gi, xi)| gi / xi).collect();
                    acc(&mut grads, *a, Matrix::new(g.rows(), g.cols(), data));
                }
                Op::Sum(a) => {
                    let s = self.shape(*a);
                    acc(&mut grads, *a, Matrix::filled(s.0, s.1, g.item()));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Select(a, r, c) => {
                    let s = self.shape(*a);
                    let mut ga = Matrix::zeros(s.0, s.1);
                    ga.set(*r, *c, g.item());
                    acc(&mut grads, *a, ga);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Runs [`Tape::backward`] and adds every parameter leaf's gradient to
    /// `store`. Repeated calls accumulate.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Grads, NnError> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, &grads.grads[i]) {
                store.accumulate(*id, g);
            }
        }
        Ok(grads)
    }
}
