//! Builders that explode dense tensor programs into block-sharded dataflow
//! graphs.
//!
//! Every matrix is cut into a `grid × grid` array of blocks. A multiply
//! `C = A × B` becomes one partial product per `(i, j, k)` block triple plus,
//! when `grid > 1`, one addition per output block `(i, j)` that sums the
//! `grid` partials over `k`. Multiplies are the meta-op's shard ops and the
//! partial-sum additions its reduce ops. When a multiply has more partial
//! products than there are target devices, its products are split into
//! several meta-ops by `k` slab, and the additions ride on the last one.

use thiserror::Error;

use super::{DataflowGraph, Edge, MetaOp, OpKind, Vertex, VertexId};

/// Element size used for tensor byte counts (single precision).
pub const DTYPE_BYTES: u64 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("shard grid must be at least 1")]
    ZeroGrid,
    #[error("device count must be at least 1")]
    ZeroDevices,
    #[error("grid {grid} needs at least {needed} devices to keep each meta-op's shards on distinct devices, got {devices}")]
    TooFewDevices { grid: usize, needed: usize, devices: usize },
    #[error("dimension {dim} is smaller than the shard grid {grid}")]
    DimTooSmall { dim: usize, grid: usize },
    #[error("matrices {left} and {right} are not conformable: {left_cols} columns vs {right_rows} rows")]
    NonConformable {
        left: usize,
        right: usize,
        left_cols: usize,
        right_rows: usize,
    },
    #[error("a chain needs at least two matrices, got {0}")]
    ChainTooShort(usize),
}

/// Block extents of one dimension split `grid` ways; the remainder goes to
/// the leading blocks so the extents always sum to `dim`.
fn extents(dim: usize, grid: usize) -> Vec<u64> {
    (0..grid)
        .map(|i| (dim / grid + usize::from(i < dim % grid)) as u64)
        .collect()
}

#[derive(Debug, Clone)]
struct BlockMatrix {
    rows: Vec<u64>,
    cols: Vec<u64>,
    /// Row-major `rows.len() × cols.len()` grid of producing vertices.
    blocks: Vec<VertexId>,
}

impl BlockMatrix {
    fn at(&self, i: usize, j: usize) -> VertexId {
        self.blocks[i * self.cols.len() + j]
    }
}

/// A blocked vector broadcast along the columns of a matrix.
#[derive(Debug, Clone)]
struct BlockVector {
    blocks: Vec<VertexId>,
}

struct Sharder {
    grid: usize,
    devices: usize,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    meta_ops: Vec<MetaOp>,
}

impl Sharder {
    fn new(grid: usize, devices: usize) -> Result<Self, BuildError> {
        if grid == 0 {
            return Err(BuildError::ZeroGrid);
        }
        if devices == 0 {
            return Err(BuildError::ZeroDevices);
        }
        if devices < grid * grid {
            return Err(BuildError::TooFewDevices {
                grid,
                needed: grid * grid,
                devices,
            });
        }
        Ok(Self {
            grid,
            devices,
            vertices: Vec::new(),
            edges: Vec::new(),
            meta_ops: Vec::new(),
        })
    }

    fn check_dim(&self, dim: usize) -> Result<(), BuildError> {
        if dim < self.grid {
            Err(BuildError::DimTooSmall { dim, grid: self.grid })
        } else {
            Ok(())
        }
    }

    fn vertex(&mut self, op_kind: OpKind, flops: u64, elements: u64, label: String, inputs: &[VertexId]) -> VertexId {
        let id = self.vertices.len();
        self.vertices.push(Vertex {
            id,
            op_kind,
            flops,
            output_bytes: elements * DTYPE_BYTES,
            label,
        });
        for &src in inputs {
            self.edges.push(Edge::new(src, id));
        }
        id
    }

    fn meta_op(&mut self, shard_ops: Vec<VertexId>, reduce_ops: Vec<VertexId>) {
        let id = self.meta_ops.len();
        self.meta_ops.push(MetaOp { id, shard_ops, reduce_ops });
    }

    fn input_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<BlockMatrix, BuildError> {
        self.check_dim(rows)?;
        self.check_dim(cols)?;
        let (r, c) = (extents(rows, self.grid), extents(cols, self.grid));
        let mut blocks = Vec::with_capacity(self.grid * self.grid);
        for (i, &ri) in r.iter().enumerate() {
            for (j, &cj) in c.iter().enumerate() {
                blocks.push(self.vertex(OpKind::Input, 0, ri * cj, format!("{name}[{i},{j}]"), &[]));
            }
        }
        Ok(BlockMatrix { rows: r, cols: c, blocks })
    }

    fn input_vector(&mut self, name: &str, len: usize) -> Result<BlockVector, BuildError> {
        self.check_dim(len)?;
        let blocks = extents(len, self.grid)
            .into_iter()
            .enumerate()
            .map(|(j, e)| self.vertex(OpKind::Input, 0, e, format!("{name}[{j}]"), &[]))
            .collect();
        Ok(BlockVector { blocks })
    }

    fn matmul(&mut self, name: &str, a: &BlockMatrix, b: &BlockMatrix) -> BlockMatrix {
        let g = self.grid;
        // partial[(k * g + i) * g + j], ordered so consecutive runs share k.
        let mut partial = Vec::with_capacity(g * g * g);
        for k in 0..g {
            for i in 0..g {
                for j in 0..g {
                    let (m, kk, n) = (a.rows[i], a.cols[k], b.cols[j]);
                    let flops = 2 * m * kk * n;
                    let id = self.vertex(
                        OpKind::Matmul,
                        flops,
                        m * n,
                        format!("{name}.mmul[{i},{j},{k}]"),
                        &[a.at(i, k), b.at(k, j)],
                    );
                    partial.push(id);
                }
            }
        }
        let mut out = Vec::with_capacity(g * g);
        let mut adds = Vec::new();
        for i in 0..g {
            for j in 0..g {
                if g == 1 {
                    out.push(partial[0]);
                    continue;
                }
                let inputs: Vec<VertexId> = (0..g).map(|k| partial[(k * g + i) * g + j]).collect();
                let elems = a.rows[i] * b.cols[j];
                let id = self.vertex(
                    OpKind::Add,
                    (g as u64 - 1) * elems,
                    elems,
                    format!("{name}.madd[{i},{j}]"),
                    &inputs,
                );
                adds.push(id);
                out.push(id);
            }
        }
        // Group whole k-slabs so each meta-op fits the device count.
        let slab = g * g;
        let slabs_per_op = (self.devices / slab).max(1);
        let chunk = slab * slabs_per_op;
        let mut chunks: Vec<Vec<VertexId>> = partial.chunks(chunk).map(<[VertexId]>::to_vec).collect();
        let last = chunks.pop().expect("at least one partial product");
        for c in chunks {
            self.meta_op(c, Vec::new());
        }
        self.meta_op(last, adds);
        BlockMatrix {
            rows: a.rows.clone(),
            cols: b.cols.clone(),
            blocks: out,
        }
    }

    /// Blockwise binary op between two same-shape matrices.
    fn zip(&mut self, name: &str, kind: OpKind, a: &BlockMatrix, b: &BlockMatrix) -> BlockMatrix {
        self.blockwise(name, kind, a, |_, i, j| vec![a.at(i, j), b.at(i, j)])
    }

    /// Blockwise op where block `(i, j)` of `a` is combined with block `j`
    /// of a broadcast vector.
    fn bcast_cols(&mut self, name: &str, a: &BlockMatrix, v: &BlockVector) -> BlockMatrix {
        self.blockwise(name, OpKind::Elemwise, a, |_, i, j| vec![a.at(i, j), v.blocks[j]])
    }

    /// Blockwise op where block `(i, j)` of `a` is combined with row-block
    /// `i` of a per-row statistic.
    fn bcast_rows(&mut self, name: &str, a: &BlockMatrix, rowstat: &[VertexId]) -> BlockMatrix {
        self.blockwise(name, OpKind::Elemwise, a, |_, i, j| vec![a.at(i, j), rowstat[i]])
    }

    fn unary(&mut self, name: &str, a: &BlockMatrix) -> BlockMatrix {
        self.blockwise(name, OpKind::Elemwise, a, |_, i, j| vec![a.at(i, j)])
    }

    fn blockwise(
        &mut self,
        name: &str,
        kind: OpKind,
        shape: &BlockMatrix,
        inputs: impl Fn(&Self, usize, usize) -> Vec<VertexId>,
    ) -> BlockMatrix {
        let mut out = Vec::with_capacity(shape.blocks.len());
        for (i, &ri) in shape.rows.iter().enumerate() {
            for (j, &cj) in shape.cols.iter().enumerate() {
                let ins = inputs(self, i, j);
                let elems = ri * cj;
                out.push(self.vertex(kind, elems, elems, format!("{name}[{i},{j}]"), &ins));
            }
        }
        self.meta_op(out.clone(), Vec::new());
        BlockMatrix {
            rows: shape.rows.clone(),
            cols: shape.cols.clone(),
            blocks: out,
        }
    }

    /// Row-wise reduction over all columns: one partial reduction per block
    /// (shard ops) and, when the columns are split, one combine per row
    /// block (reduce ops). Returns the per-row-block result vertices.
    fn row_reduce(&mut self, name: &str, a: &BlockMatrix) -> Vec<VertexId> {
        let g = self.grid;
        let mut partial = Vec::with_capacity(g * g);
        for (i, &ri) in a.rows.iter().enumerate() {
            for (j, &cj) in a.cols.iter().enumerate() {
                partial.push(self.vertex(
                    OpKind::Reduction,
                    ri * cj,
                    ri,
                    format!("{name}[{i},{j}]"),
                    &[a.at(i, j)],
                ));
            }
        }
        let mut combined = Vec::with_capacity(g);
        let mut reduce = Vec::new();
        for (i, &ri) in a.rows.iter().enumerate() {
            if g == 1 {
                combined.push(partial[i]);
                continue;
            }
            let ins: Vec<VertexId> = (0..g).map(|j| partial[i * g + j]).collect();
            let id = self.vertex(OpKind::Reduction, g as u64 * ri, ri, format!("{name}.combine[{i}]"), &ins);
            reduce.push(id);
            combined.push(id);
        }
        self.meta_op(partial, reduce);
        combined
    }

    fn finish(self) -> DataflowGraph {
        let g = DataflowGraph::from_parts(self.vertices, self.edges, self.meta_ops);
        debug_assert!(g.validate().is_empty(), "{:?}", g.validate());
        g
    }
}

/// Explodes a left-to-right chain of matrix products `M0 × M1 × …` into a
/// sharded dataflow graph. `matrix_dims` lists `(rows, cols)` per matrix.
pub fn explode_matmul_chain(
    matrix_dims: &[(usize, usize)],
    shard_grid: usize,
    devices: usize,
) -> Result<DataflowGraph, BuildError> {
    if matrix_dims.len() < 2 {
        return Err(BuildError::ChainTooShort(matrix_dims.len()));
    }
    for (idx, w) in matrix_dims.windows(2).enumerate() {
        if w[0].1 != w[1].0 {
            return Err(BuildError::NonConformable {
                left: idx,
                right: idx + 1,
                left_cols: w[0].1,
                right_rows: w[1].0,
            });
        }
    }
    let mut s = Sharder::new(shard_grid, devices)?;
    let inputs = matrix_dims
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| s.input_matrix(&format!("M{i}"), r, c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = inputs[0].clone();
    for (step, next) in inputs[1..].iter().enumerate() {
        acc = s.matmul(&format!("mm{step}"), &acc, next);
    }
    Ok(s.finish())
}

/// `(A × B) + (C × (D × E))` with five `n × n` inputs, sharded over a
/// `shard_grid × shard_grid` block grid targeting `devices` devices.
pub fn build_chainmm(n: usize, shard_grid: usize, devices: usize) -> Result<DataflowGraph, BuildError> {
    let mut s = Sharder::new(shard_grid, devices)?;
    let a = s.input_matrix("A", n, n)?;
    let b = s.input_matrix("B", n, n)?;
    let c = s.input_matrix("C", n, n)?;
    let d = s.input_matrix("D", n, n)?;
    let e = s.input_matrix("E", n, n)?;
    let de = s.matmul("DxE", &d, &e);
    let cde = s.matmul("Cx(DxE)", &c, &de);
    let ab = s.matmul("AxB", &a, &b);
    s.zip("sum", OpKind::Add, &ab, &cde);
    Ok(s.finish())
}

/// `Softmax(ReLU(X·W1 + b1)·W2 + b2)` with the softmax taken over the output
/// dimension as max-subtract, exp, sum, and divide stages.
pub fn build_ffnn(
    batch: usize,
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
    shard_grid: usize,
    devices: usize,
) -> Result<DataflowGraph, BuildError> {
    let mut s = Sharder::new(shard_grid, devices)?;
    let x = s.input_matrix("X", batch, d_in)?;
    let w1 = s.input_matrix("W1", d_in, d_hidden)?;
    let b1 = s.input_vector("b1", d_hidden)?;
    let w2 = s.input_matrix("W2", d_hidden, d_out)?;
    let b2 = s.input_vector("b2", d_out)?;

    let xw1 = s.matmul("XW1", &x, &w1);
    let z1 = s.bcast_cols("add_b1", &xw1, &b1);
    let h = s.unary("relu", &z1);
    let hw2 = s.matmul("HW2", &h, &w2);
    let z2 = s.bcast_cols("add_b2", &hw2, &b2);

    let rowmax = s.row_reduce("max", &z2);
    let shifted = s.bcast_rows("sub_max", &z2, &rowmax);
    let ex = s.unary("exp", &shifted);
    let rowsum = s.row_reduce("sum", &ex);
    s.bcast_rows("div_sum", &ex, &rowsum);
    Ok(s.finish())
}
