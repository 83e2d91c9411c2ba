//! Dense numerical core: one LSTM layer, a linear head, MSE and Adam.

pub mod adam;
pub mod backward;
pub mod loss;
pub mod lstm;
pub mod model;

use crate::scalar::Scalar;
use crate::tensor::Tensor2D;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, backward_with, clip_global_norm, BackwardOptions};
pub use loss::mse_loss;
pub use lstm::{final_hidden, lstm_forward, lstm_trace, predict, LstmTrace};
pub use model::{
    init_model, init_model_with, DenseLayer, Gate, Gradients, InitOptions, LstmLayer, ModelMeta,
    ModelParams, BLOCK_LAYER, BLOCK_NAMES, GATES, GATE_ORDER, LAYERS,
};

/// One training example: a `seq_len × D_in` window and its scalar label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub x: Tensor2D<T>,
    pub y: T,
}

impl<T: Scalar> Sample<T> {
    pub fn new(x: Tensor2D<T>, y: T) -> Self {
        Self { x, y }
    }

    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            x: self.x.cast(),
            y: U::lit(self.y.as_f64()),
        }
    }
}
