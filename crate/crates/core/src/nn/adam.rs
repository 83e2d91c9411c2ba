use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{Gradients, ModelParams, BLOCK_LAYER};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one model; `m` and `v` mirror its shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &ModelParams<T>, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
            config,
        }
    }

    /// Clears moments and step count, resizing to `model`.
    pub fn reset(&mut self, model: &ModelParams<T>) {
        *self = Self::new(model, self.config);
    }
}

/// One bias-corrected Adam update. Blocks of the first `frozen_layers` layers
/// (and their moments) are left untouched.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    model: &mut ModelParams<T>,
    grads: &Gradients<T>,
    frozen_layers: usize,
) -> Result<()> {
    if !model.same_shape(grads) || !model.same_shape(&state.m) {
        return Err(Error::ShapeMismatch(
            "adam: model, gradients and moments disagree".into(),
        ));
    }
    state.step += 1;
    let cfg = state.config;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one, lr, eps) = (T::one(), T::lit(cfg.lr), T::lit(cfg.eps));
    let t = state.step as i32;
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);

    let params = model.blocks_mut();
    let ms = state.m.blocks_mut();
    let vs = state.v.blocks_mut();
    let gs = grads.blocks();
    for ((((p, m), v), g), &layer) in params.into_iter().zip(ms).zip(vs).zip(gs).zip(&BLOCK_LAYER) {
        if layer < frozen_layers {
            continue;
        }
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{init_model, ModelMeta};

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut model: ModelParams<f64> = init_model(2, 3, 4, 1);
        let before = model.clone();
        let mut st = AdamState::new(&model, AdamConfig::default());
        let g = model.zeros_like();
        adam_step(&mut st, &mut model, &g, 0).unwrap();
        assert_eq!(model, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let meta = ModelMeta {
            d_in: 1,
            hidden: 1,
            seq_len: 1,
        };
        let mut model = ModelParams::<f64>::zeros(meta);
        let mut g = model.zeros_like();
        g.dense.b[0] = 1.0;
        let mut st = AdamState::new(&model, AdamConfig::default());
        adam_step(&mut st, &mut model, &g, 0).unwrap();
        // m̂ = 1, v̂ = 1  ⇒  Δ = -lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((model.dense.b[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn frozen_layers_are_skipped() {
        let mut model: ModelParams<f64> = init_model(2, 3, 4, 1);
        let before = model.clone();
        let mut g = model.zeros_like();
        for b in g.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.5);
        }
        let mut st = AdamState::new(&model, AdamConfig::default());
        adam_step(&mut st, &mut model, &g, 1).unwrap();
        assert_eq!(model.lstm, before.lstm);
        assert_ne!(model.dense, before.dense);
        assert!(st.m.lstm.w_ih.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut model: ModelParams<f64> = init_model(2, 3, 4, 1);
        let other: ModelParams<f64> = init_model(2, 4, 4, 1);
        let mut st = AdamState::new(&model, AdamConfig::default());
        assert!(adam_step(&mut st, &mut model, &other, 0).is_err());
    }
}
