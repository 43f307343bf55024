//! The keypoint-to-rotation estimator: a fully connected network mapping
//! the flattened normalized keypoint coordinates of one object to the 6D
//! rotation representation.

use alloc::format;
use alloc::vec::Vec;

use super::{Linear, ModelError, ParamStore};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotEstConfig {
    /// 2 · keypoint count; 64 for the 32-point interpolated box.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for RotEstConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden_dim: 128,
            layers: 6,
            dropout: 0.5,
        }
    }
}

impl RotEstConfig {
    /// Paper-scale variant (hidden width 1024).
    pub fn full_scale() -> Self {
        Self {
            hidden_dim: 1024,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RotationEstimator {
    pub cfg: RotEstConfig,
    layers: Vec<Linear>,
}

impl RotationEstimator {
    pub fn init<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut SeedStream,
        prefix: &str,
        cfg: RotEstConfig,
    ) -> Result<Self, ModelError> {
        if cfg.input_dim == 0 || cfg.hidden_dim == 0 || cfg.layers < 2 {
            return Err(ModelError::InvalidConfig(
                "rotation estimator needs positive dims and ≥ 2 layers",
            ));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(ModelError::InvalidConfig("dropout must be in [0, 1)"));
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let in_dim = if i == 0 { cfg.input_dim } else { cfg.hidden_dim };
            let out_dim = if i == cfg.layers - 1 { 6 } else { cfg.hidden_dim };
            layers.push(Linear::init(
                store,
                rng,
                &format!("{prefix}.fc{i}"),
                in_dim,
                out_dim,
            ));
        }
        // Bias the output toward the identity 6D code so the Gram–Schmidt
        // map downstream starts from a well-conditioned representation.
        let out_bias = alloc::string::String::from(store.name(layers[cfg.layers - 1].b));
        store
            .load_single(&out_bias, (1, 6), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
            .expect("bias exists");
        Ok(Self { cfg, layers })
    }

    /// Batched forward: `[n, input_dim] → [n, 6]` raw 6D codes. Hidden
    /// activations are ReLU with dropout after each one in training.
    pub fn forward<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
        train: bool,
        dropout_stream: &mut SeedStream,
    ) -> Result<Var, ModelError> {
        let (_, cols) = tape.value(x).shape();
        if cols != self.cfg.input_dim {
            return Err(ModelError::Tape(crate::autodiff::AdError::ShapeMismatch {
                op: "rotation_estimator",
                lr: 1,
                lc: cols,
                rr: 1,
                rc: self.cfg.input_dim,
            }));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
                h = tape.dropout(h, self.cfg.dropout, train, dropout_stream)?;
            }
        }
        Ok(h)
    }
}

impl<S: Real> ParamStore<S> {
    /// Overwrites one named entry (helper for structured initializers).
    pub fn load_single(
        &mut self,
        name: &str,
        shape: (usize, usize),
        data: &[f64],
    ) -> Result<(), ModelError> {
        for (n, t) in self.entries_mut() {
            if n == name {
                if t.shape() != shape {
                    return Err(ModelError::CheckpointMismatch(format!(
                        "shape mismatch for {name}"
                    )));
                }
                *t = Tensor::from_f64(shape.0, shape.1, data);
                return Ok(());
            }
        }
        Err(ModelError::CheckpointMismatch(format!(
            "missing parameter {name}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot6d_to_matrix, Rot6D};

    fn flat6(t: &Tensor<f64>) -> Rot6D {
        let d = t.data();
        Rot6D::new([d[0], d[1], d[2], d[3], d[4], d[5]])
    }

    #[test]
    fn output_shape_is_six_wide() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(3, "init");
        let model =
            RotationEstimator::init(&mut store, &mut rng, "rotest", RotEstConfig::default())
                .unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let params = store.inject(&mut tape);
        let x = tape.leaf(Tensor::zeros(5, 64));
        let mut drop = SeedStream::new(0, "dropout");
        let y = model
            .forward(&mut tape, &params, x, false, &mut drop)
            .unwrap();
        assert_eq!(tape.value(y).shape(), (5, 6));
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(5, "init");
        let model =
            RotationEstimator::init(&mut store, &mut rng, "rotest", RotEstConfig::default())
                .unwrap();
        let input: Vec<f64> = (0..64).map(|i| 0.3 + 0.005 * i as f64).collect();
        let run = || {
            let mut tape: Tape<f64> = Tape::new();
            let params = store.inject(&mut tape);
            let x = tape.leaf_f64(1, 64, &input);
            let mut drop = SeedStream::new(9, "dropout");
            let y = model
                .forward(&mut tape, &params, x, false, &mut drop)
                .unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fresh_model_emits_a_valid_rotation_code() {
        // the identity-biased output layer keeps Gram–Schmidt well posed
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(11, "init");
        let model =
            RotationEstimator::init(&mut store, &mut rng, "rotest", RotEstConfig::default())
                .unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let params = store.inject(&mut tape);
        let x = tape.leaf_f64(1, 64, &[0.5; 64]);
        let mut drop = SeedStream::new(0, "dropout");
        let y = model
            .forward(&mut tape, &params, x, false, &mut drop)
            .unwrap();
        assert!(rot6d_to_matrix(flat6(tape.value(y))).is_ok());
    }

    #[test]
    fn dropout_only_acts_in_training() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SeedStream::new(13, "init");
        let cfg = RotEstConfig {
            dropout: 0.5,
            ..RotEstConfig::default()
        };
        let model = RotationEstimator::init(&mut store, &mut rng, "rotest", cfg).unwrap();
        let input = [0.4; 64];
        let mut tape: Tape<f64> = Tape::new();
        let params = store.inject(&mut tape);
        let x = tape.leaf_f64(1, 64, &input);
        let mut d1 = SeedStream::new(1, "dropout");
        let train_out = model.forward(&mut tape, &params, x, true, &mut d1).unwrap();
        let mut d2 = SeedStream::new(2, "dropout");
        let eval_out = model
            .forward(&mut tape, &params, x, false, &mut d2)
            .unwrap();
        assert!(d1.position() > 0);
        assert_eq!(d2.position(), 0);
        assert_ne!(tape.value(train_out), tape.value(eval_out));
    }
}
