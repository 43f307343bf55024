//! Global-norm gradient clipping and the decoupled-weight-decay Adam update.

use alloc::vec::Vec;

use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Maximal global gradient L2 norm; gradients are scaled by
    /// `min(1, clip_norm/‖g‖₂)` jointly over all parameters.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: 0.1,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(cfg: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    /// Scale factor that clips the joint gradient norm to `clip_norm`.
    pub fn clip_scale(&self, grads: &[Tensor<S>]) -> f64 {
        let mut norm_sq = 0.0f64;
        for g in grads {
            for x in g.data() {
                let v = x.to_f64();
                norm_sq += v * v;
            }
        }
        let norm = libm::sqrt(norm_sq);
        if norm > self.cfg.clip_norm && norm > 0.0 {
            self.cfg.clip_norm / norm
        } else {
            1.0
        }
    }

    /// Clips gradients jointly, then applies one AdamW step in place.
    pub fn clip_and_step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        let scale = S::from_f64(self.clip_scale(grads));
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.cfg.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.cfg.beta2, f64::from(t));
        let lr = S::from_f64(self.cfg.lr);
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.cfg.beta2);
        let inv_bc1 = S::from_f64(1.0 / bc1);
        let inv_bc2 = S::from_f64(1.0 / bc2);
        let eps = S::from_f64(self.cfg.eps);
        let wd = S::from_f64(self.cfg.lr * self.cfg.weight_decay);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.shape(), g.shape());
            for ((pw, &gw), (mw, vw)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                let gc = gw * scale;
                *mw = b1 * *mw + one_m_b1 * gc;
                *vw = b2 * *vw + one_m_b2 * gc * gc;
                let m_hat = *mw * inv_bc1;
                let v_hat = *vw * inv_bc2;
                // decoupled weight decay, then the Adam step
                *pw = *pw - wd * *pw;
                *pw = *pw - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_gradients_are_scaled_to_clip_norm() {
        let state: OptimizerState<f64> = OptimizerState::new(AdamWConfig::default(), &[(1, 2)]);
        // ‖(6, 8)‖ = 10 → scale 0.01
        let g = Tensor::from_vec(1, 2, vec![6.0, 8.0]);
        assert!((state.clip_scale(&[g]) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn small_gradients_pass_through() {
        let state: OptimizerState<f64> = OptimizerState::new(AdamWConfig::default(), &[(1, 2)]);
        let g = Tensor::from_vec(1, 2, vec![0.03, 0.04]);
        assert_eq!(state.clip_scale(&[g]), 1.0);
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        // f(w) = ‖w‖² from w0 = (1, 1); loss strictly decreases for 100 steps.
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            clip_norm: 1e9,
            ..AdamWConfig::default()
        };
        let mut state: OptimizerState<f64> = OptimizerState::new(cfg, &[(1, 2)]);
        let mut w = Tensor::from_vec(1, 2, vec![1.0, 1.0]);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss: f64 = w.data().iter().map(|x| x * x).sum();
            assert!(loss < prev, "loss must strictly decrease");
            prev = loss;
            let grad = Tensor::from_vec(1, 2, w.data().iter().map(|x| 2.0 * x).collect());
            let mut params = [w.clone()];
            state.clip_and_step(&mut params, &[grad]);
            w = params[0].clone();
        }
        assert!(prev < 0.5);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient() {
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut state: OptimizerState<f64> = OptimizerState::new(cfg, &[(1, 1)]);
        let mut params = [Tensor::scalar(1.0f64)];
        state.clip_and_step(&mut params, &[Tensor::scalar(0.0)]);
        assert!(params[0].item() < 1.0);
        assert!((params[0].item() - (1.0 - 1e-2 * 0.1)).abs() < 1e-12);
    }
}
