//! Finite-difference verification of every tape operation. The same
//! generic machinery runs in `f32` (training precision) and `f64` (the
//! strict mode used by the `gradcheck` command and the acceptance suite).
//!
//! Sampled inputs are nudged away from subgradient kinks (relu/abs/min/max
//! transition points) by a margin larger than the probe step, since central
//! differences straddling a kink do not measure the one-sided derivative.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use super::tape::{AdError, Tape, Var};
use super::tensor::Tensor;
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpCase {
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
    Minimum,
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
    AddScalar,
    Scale,
    MatMul,
    Transpose,
    SoftmaxRows,
    LogSoftmaxRows,
    Sum,
    Mean,
    SumCols,
    MeanCols,
    BcastColAdd,
    BcastColMul,
    BcastRowAdd,
    BcastRowMul,
    GatherRows,
    SelectElems,
    SliceCols,
    ConcatCols,
    ConcatRows,
    Reshape,
    DropoutMask,
    LayerNorm,
}

impl OpCase {
    pub fn name(&self) -> &'static str {
        match self {
            OpCase::Add => "add",
            OpCase::Sub => "sub",
            OpCase::Mul => "mul",
            OpCase::Div => "div",
            OpCase::Maximum => "maximum",
            OpCase::Minimum => "minimum",
            OpCase::Neg => "neg",
            OpCase::Relu => "relu",
            OpCase::Abs => "abs",
            OpCase::Exp => "exp",
            OpCase::Ln => "ln",
            OpCase::Sqrt => "sqrt",
            OpCase::Recip => "recip",
            OpCase::Sigmoid => "sigmoid",
            OpCase::Softplus => "softplus",
            OpCase::SmoothL1 => "smooth_l1",
            OpCase::AddScalar => "add_scalar",
            OpCase::Scale => "scale",
            OpCase::MatMul => "matmul",
            OpCase::Transpose => "transpose",
            OpCase::SoftmaxRows => "softmax_rows",
            OpCase::LogSoftmaxRows => "log_softmax_rows",
            OpCase::Sum => "sum",
            OpCase::Mean => "mean",
            OpCase::SumCols => "sum_cols",
            OpCase::MeanCols => "mean_cols",
            OpCase::BcastColAdd => "bcast_col_add",
            OpCase::BcastColMul => "bcast_col_mul",
            OpCase::BcastRowAdd => "bcast_row_add",
            OpCase::BcastRowMul => "bcast_row_mul",
            OpCase::GatherRows => "gather_rows",
            OpCase::SelectElems => "select_elems",
            OpCase::SliceCols => "slice_cols",
            OpCase::ConcatCols => "concat_cols",
            OpCase::ConcatRows => "concat_rows",
            OpCase::Reshape => "reshape",
            OpCase::DropoutMask => "dropout_mask",
            OpCase::LayerNorm => "layer_norm",
        }
    }
}

pub fn all_op_cases() -> Vec<OpCase> {
    use OpCase::*;
    vec![
        Add, Sub, Mul, Div, Maximum, Minimum, Neg, Relu, Abs, Exp, Ln, Sqrt, Recip, Sigmoid,
        Softplus, SmoothL1, AddScalar, Scale, MatMul, Transpose, SoftmaxRows, LogSoftmaxRows,
        Sum, Mean, SumCols, MeanCols, BcastColAdd, BcastColMul, BcastRowAdd, BcastRowMul,
        GatherRows, SelectElems, SliceCols, ConcatCols, ConcatRows, Reshape, DropoutMask,
        LayerNorm,
    ]
}

#[derive(Debug, Clone)]
pub enum CaseAux {
    None,
    Scalar(f64),
    Indices(Vec<usize>),
    Elems(Vec<(usize, usize)>),
    Slice { start: usize, len: usize },
    Shape { rows: usize, cols: usize },
    Mask { rows: usize, cols: usize, data: Vec<f64> },
}

/// One concrete sampled test case: input tensors plus any op parameters.
#[derive(Debug, Clone)]
pub struct CaseInstance {
    pub case: OpCase,
    pub inputs: Vec<Tensor<f64>>,
    pub aux: CaseAux,
}

const KINK_MARGIN: f64 = 0.05;

fn nudge_away(x: f64, kinks: &[f64]) -> f64 {
    let mut out = x;
    for &k in kinks {
        if (out - k).abs() < KINK_MARGIN {
            out = if out >= k { k + KINK_MARGIN } else { k - KINK_MARGIN };
        }
    }
    out
}

fn rand_tensor(s: &mut SeedStream, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| s.range(lo, hi)).collect();
    Tensor::from_vec(rows, cols, data)
}

fn rand_tensor_kinked(
    s: &mut SeedStream,
    rows: usize,
    cols: usize,
    kinks: &[f64],
) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| nudge_away(s.range(-2.0, 2.0), kinks))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

pub fn sample_case(case: OpCase, s: &mut SeedStream) -> CaseInstance {
    let r = 1 + s.below(4);
    let c = 1 + s.below(4);
    let generic = |s: &mut SeedStream| rand_tensor(s, r, c, -2.0, 2.0);
    let (inputs, aux) = match case {
        OpCase::Add | OpCase::Sub | OpCase::Mul => {
            (vec![generic(s), rand_tensor(s, r, c, -2.0, 2.0)], CaseAux::None)
        }
        OpCase::Div => {
            let a = generic(s);
            let bdata: Vec<f64> = (0..r * c)
                .map(|_| {
                    let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                    sign * s.range(0.5, 2.0)
                })
                .collect();
            (vec![a, Tensor::from_vec(r, c, bdata)], CaseAux::None)
        }
        OpCase::Maximum | OpCase::Minimum => {
            let a = generic(s);
            let bdata: Vec<f64> = a
                .data()
                .iter()
                .map(|&av| {
                    let mut bv = s.range(-2.0, 2.0);
                    if (bv - av).abs() < KINK_MARGIN {
                        bv = av + 2.0 * KINK_MARGIN;
                    }
                    bv
                })
                .collect();
            (vec![a, Tensor::from_vec(r, c, bdata)], CaseAux::None)
        }
        OpCase::Neg | OpCase::Exp | OpCase::Sigmoid | OpCase::Softplus => {
            (vec![generic(s)], CaseAux::None)
        }
        OpCase::Relu | OpCase::Abs => (vec![rand_tensor_kinked(s, r, c, &[0.0])], CaseAux::None),
        OpCase::SmoothL1 => (
            vec![rand_tensor_kinked(s, r, c, &[-1.0, 1.0])],
            CaseAux::None,
        ),
        OpCase::Ln | OpCase::Sqrt | OpCase::Recip => {
            // lower bound keeps |f'''| small enough for the f32 probe step
            (vec![rand_tensor(s, r, c, 0.5, 2.5)], CaseAux::None)
        }
        OpCase::AddScalar | OpCase::Scale => {
            (vec![generic(s)], CaseAux::Scalar(s.range(-2.0, 2.0)))
        }
        OpCase::MatMul => {
            let (m, k, n) = (1 + s.below(4), 1 + s.below(4), 1 + s.below(4));
            (
                vec![
                    rand_tensor(s, m, k, -1.5, 1.5),
                    rand_tensor(s, k, n, -1.5, 1.5),
                ],
                CaseAux::None,
            )
        }
        OpCase::Transpose
        | OpCase::SoftmaxRows
        | OpCase::LogSoftmaxRows
        | OpCase::Sum
        | OpCase::Mean
        | OpCase::SumCols
        | OpCase::MeanCols => (vec![generic(s)], CaseAux::None),
        OpCase::BcastColAdd | OpCase::BcastColMul => (
            vec![generic(s), rand_tensor(s, r, 1, -2.0, 2.0)],
            CaseAux::None,
        ),
        OpCase::BcastRowAdd | OpCase::BcastRowMul => (
            vec![generic(s), rand_tensor(s, 1, c, -2.0, 2.0)],
            CaseAux::None,
        ),
        OpCase::GatherRows => {
            let k = 1 + s.below(5);
            let idx: Vec<usize> = (0..k).map(|_| s.below(r)).collect();
            (vec![generic(s)], CaseAux::Indices(idx))
        }
        OpCase::SelectElems => {
            let k = 1 + s.below(5);
            let idx: Vec<(usize, usize)> = (0..k).map(|_| (s.below(r), s.below(c))).collect();
            (vec![generic(s)], CaseAux::Elems(idx))
        }
        OpCase::SliceCols => {
            let start = s.below(c);
            let len = 1 + s.below(c - start);
            (vec![generic(s)], CaseAux::Slice { start, len })
        }
        OpCase::ConcatCols => {
            let parts = 2 + s.below(2);
            let inputs: Vec<Tensor<f64>> = (0..parts)
                .map(|_| {
                    let pc = 1 + s.below(3);
                    rand_tensor(s, r, pc, -2.0, 2.0)
                })
                .collect();
            (inputs, CaseAux::None)
        }
        OpCase::ConcatRows => {
            let parts = 2 + s.below(2);
            let inputs: Vec<Tensor<f64>> = (0..parts)
                .map(|_| {
                    let pr = 1 + s.below(3);
                    rand_tensor(s, pr, c, -2.0, 2.0)
                })
                .collect();
            (inputs, CaseAux::None)
        }
        OpCase::Reshape => (
            vec![generic(s)],
            CaseAux::Shape { rows: r * c, cols: 1 },
        ),
        OpCase::DropoutMask => {
            let p = 0.3;
            let mask: Vec<f64> = (0..r * c)
                .map(|_| if s.uniform() < p { 0.0 } else { 1.0 / (1.0 - p) })
                .collect();
            (
                vec![generic(s)],
                CaseAux::Mask {
                    rows: r,
                    cols: c,
                    data: mask,
                },
            )
        }
        OpCase::LayerNorm => {
            // A ramp keeps per-row variance ≳ 1; near-constant rows make the
            // rsqrt chain too curved for a finite-difference probe.
            let cols = 3 + s.below(3);
            let mut x = rand_tensor(s, r, cols, -1.0, 1.0);
            for row in 0..r {
                for j in 0..cols {
                    x.data_mut()[row * cols + j] += 2.0 * j as f64 / (cols - 1) as f64;
                }
            }
            (
                vec![
                    x,
                    rand_tensor(s, 1, cols, 0.5, 1.5),
                    rand_tensor(s, 1, cols, -0.5, 0.5),
                ],
                CaseAux::None,
            )
        }
    };
    CaseInstance { case, inputs, aux }
}

/// Builds the op under test and reduces it to a scalar with `mean`.
pub fn build_case<S: Real>(
    inst: &CaseInstance,
    tape: &mut Tape<S>,
    vars: &[Var],
) -> Result<Var, AdError> {
    let out = match (inst.case, &inst.aux) {
        (OpCase::Add, _) => tape.add(vars[0], vars[1])?,
        (OpCase::Sub, _) => tape.sub(vars[0], vars[1])?,
        (OpCase::Mul, _) => tape.mul(vars[0], vars[1])?,
        (OpCase::Div, _) => tape.div(vars[0], vars[1])?,
        (OpCase::Maximum, _) => tape.maximum(vars[0], vars[1])?,
        (OpCase::Minimum, _) => tape.minimum(vars[0], vars[1])?,
        (OpCase::Neg, _) => tape.neg(vars[0]),
        (OpCase::Relu, _) => tape.relu(vars[0]),
        (OpCase::Abs, _) => tape.abs(vars[0]),
        (OpCase::Exp, _) => tape.exp(vars[0]),
        (OpCase::Ln, _) => tape.ln(vars[0]),
        (OpCase::Sqrt, _) => tape.sqrt(vars[0]),
        (OpCase::Recip, _) => tape.recip(vars[0]),
        (OpCase::Sigmoid, _) => tape.sigmoid(vars[0]),
        (OpCase::Softplus, _) => tape.softplus(vars[0]),
        (OpCase::SmoothL1, _) => tape.smooth_l1(vars[0]),
        (OpCase::AddScalar, CaseAux::Scalar(cv)) => tape.add_scalar(vars[0], *cv),
        (OpCase::Scale, CaseAux::Scalar(cv)) => tape.scale(vars[0], *cv),
        (OpCase::MatMul, _) => tape.matmul(vars[0], vars[1])?,
        (OpCase::Transpose, _) => tape.transpose(vars[0]),
        (OpCase::SoftmaxRows, _) => tape.softmax_rows(vars[0]),
        (OpCase::LogSoftmaxRows, _) => tape.log_softmax_rows(vars[0]),
        (OpCase::Sum, _) => tape.sum(vars[0]),
        (OpCase::Mean, _) => tape.mean(vars[0]),
        (OpCase::SumCols, _) => tape.sum_cols(vars[0]),
        (OpCase::MeanCols, _) => tape.mean_cols(vars[0]),
        (OpCase::BcastColAdd, _) => tape.bcast_col_add(vars[0], vars[1])?,
        (OpCase::BcastColMul, _) => tape.bcast_col_mul(vars[0], vars[1])?,
        (OpCase::BcastRowAdd, _) => tape.bcast_row_add(vars[0], vars[1])?,
        (OpCase::BcastRowMul, _) => tape.bcast_row_mul(vars[0], vars[1])?,
        (OpCase::GatherRows, CaseAux::Indices(idx)) => tape.gather_rows(vars[0], idx)?,
        (OpCase::SelectElems, CaseAux::Elems(idx)) => tape.select_elems(vars[0], idx)?,
        (OpCase::SliceCols, CaseAux::Slice { start, len }) => {
            tape.slice_cols(vars[0], *start, *len)?
        }
        (OpCase::ConcatCols, _) => tape.concat_cols(vars)?,
        (OpCase::ConcatRows, _) => tape.concat_rows(vars)?,
        (OpCase::Reshape, CaseAux::Shape { rows, cols }) => tape.reshape(vars[0], *rows, *cols)?,
        (OpCase::DropoutMask, CaseAux::Mask { rows, cols, data }) => {
            let mask = Tensor::<S>::from_f64(*rows, *cols, data);
            tape.mul_mask(vars[0], mask)?
        }
        (OpCase::LayerNorm, _) => tape.layer_norm(vars[0], vars[1], vars[2], 1e-5)?,
        _ => {
            return Err(AdError::InvalidArgument {
                op: "build_case",
                msg: "aux mismatch",
            })
        }
    };
    if tape.value(out).shape() == (1, 1) {
        Ok(out)
    } else {
        Ok(tape.mean(out))
    }
}

/// Central-difference comparison of reverse-mode gradients for an arbitrary
/// scalar-valued graph builder, over every coordinate of every input.
/// Returns the max relative error with denominator
/// `max(|fd|, |analytic|, floor)`.
pub fn fd_max_rel_err<S: Real>(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<S>, &[Var]) -> Var,
    h: f64,
    denom_floor: f64,
) -> f64 {
    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let mut tape: Tape<S> = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(Tensor::<S>::from_f64(t.rows(), t.cols(), t.data())))
            .collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item().to_f64()
    };

    let mut tape: Tape<S> = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(Tensor::<S>::from_f64(t.rows(), t.cols(), t.data())))
        .collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v, t.rows(), t.cols()).to_f64_vec())
        .collect();

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic[i][j];
            let denom = fd.abs().max(an.abs()).max(denom_floor);
            let rel = (fd - an).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Max relative error between reverse-mode and central finite differences
/// over every input coordinate of one sampled case.
pub fn max_rel_err<S: Real>(inst: &CaseInstance, h: f64, denom_floor: f64) -> f64 {
    let build = |tape: &mut Tape<S>, vars: &[Var]| -> Var {
        build_case(inst, tape, vars).expect("case must build")
    };
    fd_max_rel_err(&inst.inputs, &build, h, denom_floor)
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Runs `seeds` sampled cases of one op in `f64` (step 1e-4, tol 1e-4).
pub fn check_op_f64(case: OpCase, seeds: usize, seed0: u64) -> CheckOutcome {
    let mut worst = 0.0f64;
    for k in 0..seeds {
        let mut s = SeedStream::new(seed0, "gradcheck-f64").substream(k as u64 ^ case as u64);
        let inst = sample_case(case, &mut s);
        worst = worst.max(max_rel_err::<f64>(&inst, 1e-4, 1e-6));
    }
    CheckOutcome {
        name: format!("op/{}", case.name()),
        cases: seeds,
        max_rel_err: worst,
        tol: 1e-4,
    }
}

/// Runs `seeds` sampled cases of one op in `f32` (step 1e-2, tol 1e-3).
/// The denominator floor sits above f32 forward-evaluation noise so that
/// near-zero gradients are compared absolutely, not against rounding.
pub fn check_op_f32(case: OpCase, seeds: usize, seed0: u64) -> CheckOutcome {
    let mut worst = 0.0f64;
    for k in 0..seeds {
        let mut s = SeedStream::new(seed0, "gradcheck-f32").substream(k as u64 ^ case as u64);
        let inst = sample_case(case, &mut s);
        worst = worst.max(max_rel_err::<f32>(&inst, 1e-2, 1e-2));
    }
    CheckOutcome {
        name: format!("op32/{}", case.name()),
        cases: seeds,
        max_rel_err: worst,
        tol: 1e-3,
    }
}
