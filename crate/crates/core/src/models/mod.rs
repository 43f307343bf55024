//! Learnable models: the keypoint-to-rotation MLP and the toy
//! encoder/decoder set predictor, plus the parameter store, initialization,
//! and checkpoint structures shared by both.

mod rotest;
pub mod train;
mod transformer;

pub use rotest::{RotEstConfig, RotationEstimator};
pub use transformer::{
    raster_to_patches, sinusoidal_positions, AttentionMap, AttentionStage, SetPredictor,
    ToyTransformerConfig,
};

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{AdError, Real, Tape, Tensor, Var};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tape(#[from] AdError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

/// Index of a named parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named parameter tensors in registration order. The order fixes gradient
/// collection and optimizer-state layout, which keeps training
/// bit-reproducible.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Real> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: String, tensor: Tensor<S>) -> ParamId {
        self.entries.push((name, tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].1
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|(_, t)| t.shape()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    /// Records every parameter as a tape leaf; index by `ParamId`.
    pub fn inject(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect()
    }

    /// Collects gradients in registration order (zeros where a parameter
    /// did not participate).
    pub fn collect_grads(
        &self,
        grads: &crate::autodiff::Gradients<S>,
        vars: &[Var],
    ) -> Vec<Tensor<S>> {
        self.entries
            .iter()
            .zip(vars)
            .map(|((_, t), &v)| grads.wrt(v, t.rows(), t.cols()))
            .collect()
    }

    /// Overwrites values by name; every stored entry must be provided with
    /// a matching shape.
    pub fn load_values(
        &mut self,
        named: &[(String, (usize, usize), Vec<f64>)],
    ) -> Result<(), ModelError> {
        for (name, tensor) in &mut self.entries {
            let Some((_, shape, data)) = named.iter().find(|(n, _, _)| n == name) else {
                return Err(ModelError::CheckpointMismatch(alloc::format!(
                    "missing parameter {name}"
                )));
            };
            if *shape != tensor.shape() {
                return Err(ModelError::CheckpointMismatch(alloc::format!(
                    "shape mismatch for {name}"
                )));
            }
            *tensor = Tensor::from_f64(shape.0, shape.1, data);
        }
        Ok(())
    }
}

/// A dense layer (weights `[in,out]`, bias `[1,out]`); weights initialize
/// uniform in `±sqrt(1/fan_in)`, biases to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut SeedStream,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let bound = libm::sqrt(1.0 / in_dim as f64);
        let wdata: Vec<S> = (0..in_dim * out_dim)
            .map(|_| S::from_f64(rng.range(-bound, bound)))
            .collect();
        let w = store.add(
            alloc::format!("{name}.w"),
            Tensor::from_vec(in_dim, out_dim, wdata),
        );
        let b = store.add(alloc::format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
    ) -> Result<Var, AdError> {
        let wx = tape.matmul(x, params[self.w.0])?;
        tape.bcast_row_add(wx, params[self.b.0])
    }
}

/// Layer-norm parameters (`gamma` ones, `beta` zeros).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn init<S: Real>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        let ones: Vec<S> = (0..dim).map(|_| S::ONE).collect();
        let gamma = store.add(alloc::format!("{name}.gamma"), Tensor::from_vec(1, dim, ones));
        let beta = store.add(alloc::format!("{name}.beta"), Tensor::zeros(1, dim));
        Self { gamma, beta }
    }

    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
    ) -> Result<Var, AdError> {
        tape.layer_norm(x, params[self.gamma.0], params[self.beta.0], 1e-5)
    }
}

/// Serializable training state: config echo, named parameter blobs,
/// optional optimizer state, and the positions of the named RNG streams.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub format_version: u32,
    /// "rotest" or "toy".
    pub kind: String,
    /// Flat `key=value` lines echoing the resolved training configuration.
    pub config: Vec<(String, String)>,
    pub params: Vec<(String, (usize, usize), Vec<f64>)>,
    pub optimizer: Option<OptimizerBlob>,
    pub rng_positions: Vec<(String, u64)>,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlob {
    pub step: u64,
    pub first_moments: Vec<(String, (usize, usize), Vec<f64>)>,
    pub second_moments: Vec<(String, (usize, usize), Vec<f64>)>,
}

impl CheckpointData {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}
