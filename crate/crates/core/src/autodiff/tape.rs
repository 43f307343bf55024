//! The reverse-mode tape. Operations record their inputs and enough saved
//! state to run the local backward rule; `backward` walks the node list in
//! reverse construction order (a topological order by construction) and
//! accumulates dense gradients. Tapes are rebuilt per step and never shared
//! across threads.

use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use super::tensor::Tensor;
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: ({lr}x{lc}) vs ({rr}x{rc})")]
    ShapeMismatch {
        op: &'static str,
        lr: usize,
        lc: usize,
        rr: usize,
        rc: usize,
    },
    #[error("invalid argument in {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: &'static str },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    Neg,
    Relu,
    Abs,
    Exp,
    Ln,
    Sqrt,
    Recip,
    Sigmoid,
    Softplus,
    SmoothL1,
}

#[derive(Debug, Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy)]
enum BcastKind {
    Add,
    Mul,
}

enum Op<S> {
    Leaf,
    Unary(Var, UnaryKind),
    Bin(Var, Var, BinKind),
    AddScalar(Var, S),
    Scale(Var, S),
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    MeanCols(Var),
    /// `[r,c] (op) [r,1]`, broadcasting the column over each row.
    BcastCol(Var, Var, BcastKind),
    /// `[r,c] (op) [1,c]`, broadcasting the row over each column.
    BcastRow(Var, Var, BcastKind),
    GatherRows(Var, Vec<usize>),
    SelectElems(Var, Vec<(usize, usize)>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    /// Elementwise product with a fixed mask (dropout).
    MulMask(Var, Tensor<S>),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    /// Gradient of the loss w.r.t. `v`; zeros if the loss does not depend
    /// on it.
    pub fn wrt(&self, v: Var, rows: usize, cols: usize) -> Tensor<S> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }
}

pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (leaf) node. Parameters and constants are both
    /// leaves; only the caller distinguishes them.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_f64(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        self.leaf(Tensor::from_f64(rows, cols, data))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(S::from_f64(v)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AdError> {
        let (lr, lc) = self.value(a).shape();
        let (rr, rc) = self.value(b).shape();
        if (lr, lc) != (rr, rc) {
            return Err(AdError::ShapeMismatch { op, lr, lc, rr, rc });
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinKind, op: &'static str) -> Result<Var, AdError> {
        self.same_shape(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<S> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
                BinKind::Div => x / y,
                BinKind::Max => x.maxv(y),
                BinKind::Min => x.minv(y),
            })
            .collect();
        let t = Tensor::from_vec(av.rows(), av.cols(), data);
        Ok(self.push(t, Op::Bin(a, b, kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, BinKind::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, BinKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, BinKind::Mul, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, BinKind::Div, "div")
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, BinKind::Max, "maximum")
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, BinKind::Min, "minimum")
    }

    fn unary(&mut self, a: Var, kind: UnaryKind) -> Var {
        let one = S::ONE;
        let half = S::from_f64(0.5);
        let value = self.value(a).map(|x| match kind {
            UnaryKind::Neg => -x,
            UnaryKind::Relu => x.maxv(S::ZERO),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Recip => one / x,
            UnaryKind::Sigmoid => stable_sigmoid(x),
            UnaryKind::Softplus => stable_softplus(x),
            UnaryKind::SmoothL1 => {
                if x.abs() < one {
                    half * x * x
                } else {
                    x.abs() - half
                }
            }
        });
        self.push(value, Op::Unary(a, kind))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Neg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Relu)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Abs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Recip)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Softplus)
    }

    /// Elementwise `0.5x²` for `|x| < 1`, `|x| − 0.5` otherwise (β = 1).
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::SmoothL1)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = S::from_f64(c);
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a, c))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = S::from_f64(c);
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (lr, lc) = self.value(a).shape();
        let (rr, rc) = self.value(b).shape();
        if lc != rr {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lr,
                lc,
                rr,
                rc,
            });
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Row-wise softmax with max-subtraction; rows sum to 1.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut data = Vec::with_capacity(r * c);
        for row in 0..r {
            let slice = av.row(row);
            let mut m = slice[0];
            for &x in slice {
                m = m.maxv(x);
            }
            let mut sum = 0.0f64;
            let exps: Vec<S> = slice
                .iter()
                .map(|&x| {
                    let e = (x - m).exp();
                    sum += e.to_f64();
                    e
                })
                .collect();
            let inv = S::from_f64(1.0 / sum);
            data.extend(exps.into_iter().map(|e| e * inv));
        }
        let value = Tensor::from_vec(r, c, data);
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise log-softmax; the max subtraction is treated as constant,
    /// which leaves the analytic gradient unchanged.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut data = Vec::with_capacity(r * c);
        for row in 0..r {
            let slice = av.row(row);
            let mut m = slice[0];
            for &x in slice {
                m = m.maxv(x);
            }
            let mut sum = 0.0f64;
            for &x in slice {
                sum += (x - m).exp().to_f64();
            }
            let log_z = S::from_f64(libm::log(sum)) + m;
            data.extend(slice.iter().map(|&x| x - log_z));
        }
        let value = Tensor::from_vec(r, c, data);
        self.push(value, Op::LogSoftmaxRows(a))
    }

    /// Sum of all entries, 64-bit accumulated; result is 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        let value = Tensor::scalar(S::from_f64(s));
        self.push(value, Op::Sum(a))
    }

    /// Mean of all entries, 64-bit accumulated; result is 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.value(a).sum_f64() / n;
        let value = Tensor::scalar(S::from_f64(s));
        self.push(value, Op::Mean(a))
    }

    /// Row sums: `[r,c] → [r,1]`, 64-bit accumulated.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, _c) = av.shape();
        let data: Vec<S> = (0..r)
            .map(|row| {
                let mut acc = 0.0f64;
                for &x in av.row(row) {
                    acc += x.to_f64();
                }
                S::from_f64(acc)
            })
            .collect();
        let value = Tensor::from_vec(r, 1, data);
        self.push(value, Op::SumCols(a))
    }

    /// Row means: `[r,c] → [r,1]`, 64-bit accumulated.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let data: Vec<S> = (0..r)
            .map(|row| {
                let mut acc = 0.0f64;
                for &x in av.row(row) {
                    acc += x.to_f64();
                }
                S::from_f64(acc / c as f64)
            })
            .collect();
        let value = Tensor::from_vec(r, 1, data);
        self.push(value, Op::MeanCols(a))
    }

    fn bcast_col(&mut self, a: Var, b: Var, kind: BcastKind, op: &'static str) -> Result<Var, AdError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if br != ar || bc != 1 {
            return Err(AdError::ShapeMismatch {
                op,
                lr: ar,
                lc: ac,
                rr: br,
                rc: bc,
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut data = Vec::with_capacity(ar * ac);
        for r in 0..ar {
            let s = bv.data()[r];
            for &x in av.row(r) {
                data.push(match kind {
                    BcastKind::Add => x + s,
                    BcastKind::Mul => x * s,
                });
            }
        }
        let value = Tensor::from_vec(ar, ac, data);
        Ok(self.push(value, Op::BcastCol(a, b, kind)))
    }

    /// `[r,c] + [r,1]` with the column broadcast across each row.
    pub fn bcast_col_add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.bcast_col(a, b, BcastKind::Add, "bcast_col_add")
    }

    /// `[r,c] ⊙ [r,1]` with the column broadcast across each row.
    pub fn bcast_col_mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.bcast_col(a, b, BcastKind::Mul, "bcast_col_mul")
    }

    fn bcast_row(&mut self, a: Var, b: Var, kind: BcastKind, op: &'static str) -> Result<Var, AdError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if bc != ac || br != 1 {
            return Err(AdError::ShapeMismatch {
                op,
                lr: ar,
                lc: ac,
                rr: br,
                rc: bc,
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut data = Vec::with_capacity(ar * ac);
        for r in 0..ar {
            for (c, &x) in av.row(r).iter().enumerate() {
                let s = bv.data()[c];
                data.push(match kind {
                    BcastKind::Add => x + s,
                    BcastKind::Mul => x * s,
                });
            }
        }
        let value = Tensor::from_vec(ar, ac, data);
        Ok(self.push(value, Op::BcastRow(a, b, kind)))
    }

    /// `[r,c] + [1,c]` with the row broadcast down each column (bias add).
    pub fn bcast_row_add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.bcast_row(a, b, BcastKind::Add, "bcast_row_add")
    }

    /// `[r,c] ⊙ [1,c]` with the row broadcast down each column.
    pub fn bcast_row_mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.bcast_row(a, b, BcastKind::Mul, "bcast_row_mul")
    }

    /// Selects rows (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, AdError> {
        let av = self.value(a);
        let (r, c) = av.shape();
        if idx.iter().any(|&i| i >= r) {
            return Err(AdError::InvalidArgument {
                op: "gather_rows",
                msg: "row index out of range",
            });
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(av.row(i));
        }
        let value = Tensor::from_vec(idx.len(), c, data);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec())))
    }

    /// Selects individual entries into a `[k,1]` column.
    pub fn select_elems(&mut self, a: Var, idx: &[(usize, usize)]) -> Result<Var, AdError> {
        let av = self.value(a);
        let (r, c) = av.shape();
        if idx.iter().any(|&(i, j)| i >= r || j >= c) {
            return Err(AdError::InvalidArgument {
                op: "select_elems",
                msg: "index out of range",
            });
        }
        let data: Vec<S> = idx.iter().map(|&(i, j)| av.at(i, j)).collect();
        let value = Tensor::from_vec(idx.len(), 1, data);
        Ok(self.push(value, Op::SelectElems(a, idx.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let av = self.value(a);
        let (r, c) = av.shape();
        if start + len > c || len == 0 {
            return Err(AdError::InvalidArgument {
                op: "slice_cols",
                msg: "column range out of bounds",
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&av.row(row)[start..start + len]);
        }
        let value = Tensor::from_vec(r, len, data);
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(AdError::InvalidArgument {
                op: "concat_cols",
                msg: "no parts",
            });
        }
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).shape();
            if pr != r {
                return Err(AdError::ShapeMismatch {
                    op: "concat_cols",
                    lr: r,
                    lc: 0,
                    rr: pr,
                    rc: pc,
                });
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(row));
            }
        }
        let value = Tensor::from_vec(r, total, data);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        if parts.is_empty() {
            return Err(AdError::InvalidArgument {
                op: "concat_rows",
                msg: "no parts",
            });
        }
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).shape();
            if pc != c {
                return Err(AdError::ShapeMismatch {
                    op: "concat_rows",
                    lr: 0,
                    lc: c,
                    rr: pr,
                    rc: pc,
                });
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(rows, c, data);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, AdError> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return Err(AdError::InvalidArgument {
                op: "reshape",
                msg: "element count must be preserved",
            });
        }
        let value = Tensor::from_vec(rows, cols, av.data().to_vec());
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Inverted dropout: in training, zeroes entries with probability `p`
    /// and scales survivors by `1/(1−p)`; in evaluation it is the identity
    /// (no node is recorded).
    pub fn dropout(
        &mut self,
        a: Var,
        p: f64,
        train: bool,
        stream: &mut SeedStream,
    ) -> Result<Var, AdError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AdError::InvalidArgument {
                op: "dropout",
                msg: "probability must be in [0, 1)",
            });
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.value(a).shape();
        let keep = S::from_f64(1.0 / (1.0 - p));
        let mask_data: Vec<S> = (0..r * c)
            .map(|_| if stream.uniform() < p { S::ZERO } else { keep })
            .collect();
        let mask = Tensor::from_vec(r, c, mask_data);
        let value = {
            let av = self.value(a);
            let data: Vec<S> = av
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&x, &m)| x * m)
                .collect();
            Tensor::from_vec(r, c, data)
        };
        Ok(self.push(value, Op::MulMask(a, mask)))
    }

    /// Elementwise multiply by a fixed (non-differentiated) mask.
    pub fn mul_mask(&mut self, a: Var, mask: Tensor<S>) -> Result<Var, AdError> {
        if self.value(a).shape() != mask.shape() {
            let (lr, lc) = self.value(a).shape();
            let (rr, rc) = mask.shape();
            return Err(AdError::ShapeMismatch {
                op: "mul_mask",
                lr,
                lc,
                rr,
                rc,
            });
        }
        let value = {
            let av = self.value(a);
            let data: Vec<S> = av
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&x, &m)| x * m)
                .collect();
            Tensor::from_vec(av.rows(), av.cols(), data)
        };
        Ok(self.push(value, Op::MulMask(a, mask)))
    }

    /// Row-wise layer normalization with learnable `gamma`, `beta` (both
    /// `[1,c]`), composed from primitive ops.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, AdError> {
        let m = self.mean_cols(x);
        let neg_m = self.neg(m);
        let centered = self.bcast_col_add(x, neg_m)?;
        let sq = self.mul(centered, centered)?;
        let var = self.mean_cols(sq);
        let var_eps = self.add_scalar(var, eps);
        let std = self.sqrt(var_eps);
        let inv_std = self.recip(std);
        let normed = self.bcast_col_mul(centered, inv_std)?;
        let scaled = self.bcast_row_mul(normed, gamma)?;
        self.bcast_row_add(scaled, beta)
    }

    /// Reverse accumulation from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, AdError> {
        let (lr, lc) = self.value(loss).shape();
        if (lr, lc) != (1, 1) {
            return Err(AdError::NotScalar { rows: lr, cols: lc });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(S::ONE));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.accumulate_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_node(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let add_to = |v: Var, contribution: Tensor<S>, grads: &mut [Option<Tensor<S>>]| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Unary(a, kind) => {
                let av = self.value(*a);
                let one = S::ONE;
                let data: Vec<S> = match kind {
                    UnaryKind::Neg => g.data().iter().map(|&gd| -gd).collect(),
                    UnaryKind::Relu => g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gd, &x)| if x > S::ZERO { gd } else { S::ZERO })
                        .collect(),
                    UnaryKind::Abs => g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gd, &x)| {
                            if x > S::ZERO {
                                gd
                            } else if x < S::ZERO {
                                -gd
                            } else {
                                S::ZERO
                            }
                        })
                        .collect(),
                    UnaryKind::Exp => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gd, &y)| gd * y)
                        .collect(),
                    UnaryKind::Ln => g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gd, &x)| gd / x)
                        .collect(),
                    UnaryKind::Sqrt => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gd, &y)| gd / (y + y))
                        .collect(),
                    UnaryKind::Recip => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gd, &y)| -gd * y * y)
                        .collect(),
                    UnaryKind::Sigmoid => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gd, &y)| gd * y * (one - y))
                        .collect(),
                    UnaryKind::Softplus => g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gd, &x)| gd * stable_sigmoid(x))
                        .collect(),
                    UnaryKind::SmoothL1 => g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gd, &x)| gd * x.maxv(-one).minv(one))
                        .collect(),
                };
                add_to(*a, Tensor::from_vec(av.rows(), av.cols(), data), grads);
            }
            Op::Bin(a, b, kind) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (r, c) = av.shape();
                match kind {
                    BinKind::Add => {
                        add_to(*a, g.clone(), grads);
                        add_to(*b, g.clone(), grads);
                    }
                    BinKind::Sub => {
                        add_to(*a, g.clone(), grads);
                        let data: Vec<S> = g.data().iter().map(|&gd| -gd).collect();
                        add_to(*b, Tensor::from_vec(r, c, data), grads);
                    }
                    BinKind::Mul => {
                        let da: Vec<S> = g
                            .data()
                            .iter()
                            .zip(bv.data())
                            .map(|(&gd, &y)| gd * y)
                            .collect();
                        let db: Vec<S> = g
                            .data()
                            .iter()
                            .zip(av.data())
                            .map(|(&gd, &x)| gd * x)
                            .collect();
                        add_to(*a, Tensor::from_vec(r, c, da), grads);
                        add_to(*b, Tensor::from_vec(r, c, db), grads);
                    }
                    BinKind::Div => {
                        let da: Vec<S> = g
                            .data()
                            .iter()
                            .zip(bv.data())
                            .map(|(&gd, &y)| gd / y)
                            .collect();
                        let db: Vec<S> = g
                            .data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&gd, (&x, &y))| -gd * x / (y * y))
                            .collect();
                        add_to(*a, Tensor::from_vec(r, c, da), grads);
                        add_to(*b, Tensor::from_vec(r, c, db), grads);
                    }
                    BinKind::Max | BinKind::Min => {
                        // Subgradient: ties route to the first operand.
                        let take_a = |x: S, y: S| match kind {
                            BinKind::Max => x >= y,
                            _ => x <= y,
                        };
                        let da: Vec<S> = g
                            .data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&gd, (&x, &y))| if take_a(x, y) { gd } else { S::ZERO })
                            .collect();
                        let db: Vec<S> = g
                            .data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&gd, (&x, &y))| if take_a(x, y) { S::ZERO } else { gd })
                            .collect();
                        add_to(*a, Tensor::from_vec(r, c, da), grads);
                        add_to(*b, Tensor::from_vec(r, c, db), grads);
                    }
                }
            }
            Op::AddScalar(a, _c) => add_to(*a, g.clone(), grads),
            Op::Scale(a, c) => {
                let data: Vec<S> = g.data().iter().map(|&gd| gd * *c).collect();
                let (r, cc) = g.shape();
                add_to(*a, Tensor::from_vec(r, cc, data), grads);
            }
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                add_to(*a, g.matmul_nt(bv), grads);
                add_to(*b, av.matmul_tn(g), grads);
            }
            Op::Transpose(a) => add_to(*a, g.transpose(), grads),
            Op::SoftmaxRows(a) => {
                let (r, c) = out.shape();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    let y = out.row(row);
                    let gr = g.row(row);
                    let mut dot = 0.0f64;
                    for (&yi, &gi) in y.iter().zip(gr) {
                        dot += (yi * gi).to_f64();
                    }
                    let dot = S::from_f64(dot);
                    for (&yi, &gi) in y.iter().zip(gr) {
                        data.push(yi * (gi - dot));
                    }
                }
                add_to(*a, Tensor::from_vec(r, c, data), grads);
            }
            Op::LogSoftmaxRows(a) => {
                let (r, c) = out.shape();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    let y = out.row(row);
                    let gr = g.row(row);
                    let mut gsum = 0.0f64;
                    for &gi in gr {
                        gsum += gi.to_f64();
                    }
                    let gsum = S::from_f64(gsum);
                    for (&yi, &gi) in y.iter().zip(gr) {
                        data.push(gi - yi.exp() * gsum);
                    }
                }
                add_to(*a, Tensor::from_vec(r, c, data), grads);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                let gd = g.item();
                add_to(*a, Tensor::from_vec(r, c, vec![gd; r * c]), grads);
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let gd = g.item() * S::from_f64(1.0 / (r * c) as f64);
                add_to(*a, Tensor::from_vec(r, c, vec![gd; r * c]), grads);
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    let gd = g.data()[row];
                    data.extend(core::iter::repeat(gd).take(c));
                }
                add_to(*a, Tensor::from_vec(r, c, data), grads);
            }
            Op::MeanCols(a) => {
                let (r, c) = self.value(*a).shape();
                let inv = S::from_f64(1.0 / c as f64);
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    let gd = g.data()[row] * inv;
                    data.extend(core::iter::repeat(gd).take(c));
                }
                add_to(*a, Tensor::from_vec(r, c, data), grads);
            }
            Op::BcastCol(a, b, kind) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (r, c) = av.shape();
                match kind {
                    BcastKind::Add => {
                        add_to(*a, g.clone(), grads);
                        let data: Vec<S> = (0..r)
                            .map(|row| {
                                let mut acc = 0.0f64;
                                for &gd in g.row(row) {
                                    acc += gd.to_f64();
                                }
                                S::from_f64(acc)
                            })
                            .collect();
                        add_to(*b, Tensor::from_vec(r, 1, data), grads);
                    }
                    BcastKind::Mul => {
                        let mut da = Vec::with_capacity(r * c);
                        let mut db = Vec::with_capacity(r);
                        for row in 0..r {
                            let s = bv.data()[row];
                            let mut acc = 0.0f64;
                            for (&gd, &x) in g.row(row).iter().zip(av.row(row)) {
                                da.push(gd * s);
                                acc += (gd * x).to_f64();
                            }
                            db.push(S::from_f64(acc));
                        }
                        add_to(*a, Tensor::from_vec(r, c, da), grads);
                        add_to(*b, Tensor::from_vec(r, 1, db), grads);
                    }
                }
            }
            Op::BcastRow(a, b, kind) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (r, c) = av.shape();
                match kind {
                    BcastKind::Add => {
                        add_to(*a, g.clone(), grads);
                        let mut acc = vec![0.0f64; c];
                        for row in 0..r {
                            for (j, &gd) in g.row(row).iter().enumerate() {
                                acc[j] += gd.to_f64();
                            }
                        }
                        let data: Vec<S> = acc.into_iter().map(S::from_f64).collect();
                        add_to(*b, Tensor::from_vec(1, c, data), grads);
                    }
                    BcastKind::Mul => {
                        let mut da = Vec::with_capacity(r * c);
                        let mut acc = vec![0.0f64; c];
                        for row in 0..r {
                            for (j, (&gd, &x)) in g.row(row).iter().zip(av.row(row)).enumerate() {
                                da.push(gd * bv.data()[j]);
                                acc[j] += (gd * x).to_f64();
                            }
                        }
                        let db: Vec<S> = acc.into_iter().map(S::from_f64).collect();
                        add_to(*a, Tensor::from_vec(r, c, da), grads);
                        add_to(*b, Tensor::from_vec(1, c, db), grads);
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.value(*a).shape();
                let mut scattered = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    let dst = &mut scattered.data_mut()[i * c..(i + 1) * c];
                    for (d, &gd) in dst.iter_mut().zip(g.row(k)) {
                        *d += gd;
                    }
                }
                add_to(*a, scattered, grads);
            }
            Op::SelectElems(a, idx) => {
                let (r, c) = self.value(*a).shape();
                let mut scattered = Tensor::zeros(r, c);
                for (k, &(i, j)) in idx.iter().enumerate() {
                    scattered.data_mut()[i * c + j] += g.data()[k];
                }
                add_to(*a, scattered, grads);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let len = out.cols();
                let mut scattered = Tensor::zeros(r, c);
                for row in 0..r {
                    let dst = &mut scattered.data_mut()[row * c + start..row * c + start + len];
                    dst.copy_from_slice(g.row(row));
                }
                add_to(*a, scattered, grads);
            }
            Op::ConcatCols(parts) => {
                let r = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut part = Tensor::zeros(r, pc);
                    for row in 0..r {
                        part.data_mut()[row * pc..(row + 1) * pc]
                            .copy_from_slice(&g.row(row)[offset..offset + pc]);
                    }
                    add_to(p, part, grads);
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let c = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pr = self.value(p).rows();
                    let mut part = Tensor::zeros(pr, c);
                    part.data_mut()
                        .copy_from_slice(&g.data()[offset * c..(offset + pr) * c]);
                    add_to(p, part, grads);
                    offset += pr;
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                let reshaped = Tensor::from_vec(r, c, g.data().to_vec());
                add_to(*a, reshaped, grads);
            }
            Op::MulMask(a, mask) => {
                let data: Vec<S> = g
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&gd, &m)| gd * m)
                    .collect();
                let (r, c) = g.shape();
                add_to(*a, Tensor::from_vec(r, c, data), grads);
            }
        }
    }
}

fn stable_sigmoid<S: Real>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

fn stable_softplus<S: Real>(x: S) -> S {
    // ln(1 + eˣ) = max(x, 0) + ln(1 + e^{−|x|})
    x.maxv(S::ZERO) + (S::ONE + (-x.abs()).exp()).ln()
}
