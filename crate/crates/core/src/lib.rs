//! Federated LSTM health prognostics.
//!
//! Per-client LSTM regressors for battery capacity (cyclic degradation) and
//! remaining useful life (non-cyclic degradation), fused across clients with
//! either coordinate-wise averaging or neuron-matched averaging.
//!
//! The numerical core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which the experiment harness uses throughout.

pub mod client;
pub mod data;
pub mod error;
pub mod matching;
pub mod nn;
pub mod orchestrator;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor2D;

pub type Tensor = Tensor2D<f64>;
pub type Model = nn::ModelParams<f64>;
pub type Lstm = nn::LstmLayer<f64>;
pub type Dense = nn::DenseLayer<f64>;
pub type Adam = nn::AdamState<f64>;
