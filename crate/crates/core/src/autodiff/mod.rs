//! Minimal reverse-mode automatic differentiation over dense matrices,
//! with an AdamW optimizer kernel and a finite-difference check harness.

pub mod check;
pub mod optim;
pub mod real;
pub mod tape;
pub mod tensor;

pub use check::{all_op_cases, check_op_f32, check_op_f64, CheckOutcome, OpCase};
pub use optim::{AdamWConfig, OptimizerState};
pub use real::Real;
pub use tape::{AdError, Gradients, Tape, Var};
pub use tensor::Tensor;
