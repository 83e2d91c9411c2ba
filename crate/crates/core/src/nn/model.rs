use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor2D;

/// Number of gate blocks stacked along the `4·L` axis.
pub const GATES: usize = 4;

/// Layer count of the architecture: one LSTM layer followed by the dense head.
pub const LAYERS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

/// Order of the gate blocks inside `w_ih`, `w_hh`, `b_ih` and `b_hh`.
pub const GATE_ORDER: [Gate; GATES] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

impl Gate {
    pub fn as_str(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::Forget => "forget",
            Gate::Cell => "cell",
            Gate::Output => "output",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<T> {
    /// `4L × D_in`
    pub w_ih: Tensor2D<T>,
    /// `4L × L`
    pub w_hh: Tensor2D<T>,
    pub b_ih: Vec<T>,
    pub b_hh: Vec<T>,
}

impl<T: Scalar> LstmLayer<T> {
    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor2D::zeros(GATES * hidden, d_in),
            w_hh: Tensor2D::zeros(GATES * hidden, hidden),
            b_ih: vec![T::zero(); GATES * hidden],
            b_hh: vec![T::zero(); GATES * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn d_in(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.hidden();
        let ok = self.w_ih.rows() == GATES * l
            && self.w_hh.rows() == GATES * l
            && self.b_ih.len() == GATES * l
            && self.b_hh.len() == GATES * l;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "lstm blocks disagree: w_ih {:?}, w_hh {:?}, b_ih {}, b_hh {}",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.b_ih.len(),
                self.b_hh.len()
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `D_out × L`
    pub w: Tensor2D<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w: Tensor2D::zeros(1, hidden),
            b: vec![T::zero()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub d_in: usize,
    pub hidden: usize,
    pub seq_len: usize,
}

/// Full parameter set: the LSTM layer (layer 0) and the regression head (layer 1).
///
/// The same type carries gradients and Adam moments, so every per-parameter
/// routine can walk the six flat blocks returned by [`ModelParams::blocks`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub lstm: LstmLayer<T>,
    pub dense: DenseLayer<T>,
    pub meta: ModelMeta,
}

/// Gradient set; shapes mirror the model.
pub type Gradients<T> = ModelParams<T>;

/// Layer owning each entry of [`ModelParams::blocks`].
pub const BLOCK_LAYER: [usize; 6] = [0, 0, 0, 0, 1, 1];

pub const BLOCK_NAMES: [&str; 6] = [
    "lstm_w_ih",
    "lstm_w_hh",
    "lstm_b_ih",
    "lstm_b_hh",
    "dense_w",
    "dense_b",
];

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(meta: ModelMeta) -> Self {
        Self {
            lstm: LstmLayer::zeros(meta.d_in, meta.hidden),
            dense: DenseLayer::zeros(meta.hidden),
            meta,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.meta)
    }

    pub fn blocks(&self) -> [&[T]; 6] {
        [
            self.lstm.w_ih.as_slice(),
            self.lstm.w_hh.as_slice(),
            &self.lstm.b_ih,
            &self.lstm.b_hh,
            self.dense.w.as_slice(),
            &self.dense.b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.lstm.w_ih.as_mut_slice(),
            self.lstm.w_hh.as_mut_slice(),
            &mut self.lstm.b_ih,
            &mut self.lstm.b_hh,
            self.dense.w.as_mut_slice(),
            &mut self.dense.b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.lstm.validate()?;
        let l = self.lstm.hidden();
        if self.meta.hidden != l || self.meta.d_in != self.lstm.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "meta {:?} does not describe lstm ({} inputs, {l} hidden)",
                self.meta,
                self.lstm.d_in()
            )));
        }
        if self.dense.w.shape() != (1, l) || self.dense.b.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "dense head {:?} does not fit hidden size {l}",
                self.dense.w.shape()
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.meta == other.meta
            && self
                .blocks()
                .iter()
                .zip(other.blocks().iter())
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Moves hidden unit `l` to index `perm[l]` in every block; `perm` must be a bijection.
    ///
    /// The network function is unchanged by construction.
    pub fn relabel_hidden(&self, perm: &[usize]) -> Self {
        let l = self.meta.hidden;
        assert_eq!(perm.len(), l, "permutation length must equal hidden size");
        let mut out = self.zeros_like();
        for g in 0..GATES {
            for (src, &dst) in perm.iter().enumerate() {
                let (rs, rd) = (g * l + src, g * l + dst);
                out.lstm.w_ih.row_mut(rd).copy_from_slice(self.lstm.w_ih.row(rs));
                out.lstm.b_ih[rd] = self.lstm.b_ih[rs];
                out.lstm.b_hh[rd] = self.lstm.b_hh[rs];
                for (csrc, &cdst) in perm.iter().enumerate() {
                    out.lstm.w_hh.set(rd, cdst, self.lstm.w_hh.get(rs, csrc));
                }
            }
        }
        for (src, &dst) in perm.iter().enumerate() {
            out.dense.w.set(0, dst, self.dense.w.get(0, src));
        }
        out.dense.b = self.dense.b.clone();
        out
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            lstm: LstmLayer {
                w_ih: self.lstm.w_ih.cast(),
                w_hh: self.lstm.w_hh.cast(),
                b_ih: self.lstm.b_ih.iter().map(|v| U::lit(v.as_f64())).collect(),
                b_hh: self.lstm.b_hh.iter().map(|v| U::lit(v.as_f64())).collect(),
            },
            dense: DenseLayer {
                w: self.dense.w.cast(),
                b: self.dense.b.iter().map(|v| U::lit(v.as_f64())).collect(),
            },
            meta: self.meta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitOptions {
    /// Initial value of the forget-gate bias in `b_ih`.
    pub forget_bias: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { forget_bias: 0.0 }
    }
}

/// Weights uniform in `[-1/√hidden, 1/√hidden]`, biases zero.
pub fn init_model<T: Scalar>(d_in: usize, hidden: usize, seq_len: usize, seed: u64) -> ModelParams<T> {
    init_model_with(d_in, hidden, seq_len, seed, InitOptions::default())
}

pub fn init_model_with<T: Scalar>(
    d_in: usize,
    hidden: usize,
    seq_len: usize,
    seed: u64,
    opts: InitOptions,
) -> ModelParams<T> {
    assert!(d_in >= 1 && hidden >= 1, "d_in and hidden must be positive");
    let meta = ModelMeta {
        d_in,
        hidden,
        seq_len,
    };
    let mut model = ModelParams::zeros(meta);
    let bound = 1.0 / (hidden as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Draws are made in f64 so that f32 and f64 models share one random stream.
    let mut fill = |block: &mut [T]| {
        for v in block.iter_mut() {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
    };
    fill(model.lstm.w_ih.as_mut_slice());
    fill(model.lstm.w_hh.as_mut_slice());
    fill(model.dense.w.as_mut_slice());
    if opts.forget_bias != 0.0 {
        for v in &mut model.lstm.b_ih[hidden..2 * hidden] {
            *v = T::lit(opts.forget_bias);
        }
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_match_reference_configs() {
        let m: ModelParams<f64> = init_model(2, 128, 171, 7);
        assert_eq!(m.lstm.w_ih.shape(), (512, 2));
        assert_eq!(m.lstm.w_hh.shape(), (512, 128));
        assert_eq!(m.dense.w.shape(), (1, 128));
        m.validate().unwrap();

        let m: ModelParams<f64> = init_model(14, 256, 50, 7);
        assert_eq!(m.lstm.w_ih.shape(), (1024, 14));
        assert_eq!(m.meta.seq_len, 50);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a: ModelParams<f64> = init_model(3, 16, 10, 99);
        let b: ModelParams<f64> = init_model(3, 16, 10, 99);
        assert_eq!(a, b);
        let c: ModelParams<f64> = init_model(3, 16, 10, 100);
        assert_ne!(a, c);
        let bound = 0.25;
        for block in [a.lstm.w_ih.as_slice(), a.lstm.w_hh.as_slice(), a.dense.w.as_slice()] {
            assert!(block.iter().all(|v| v.abs() <= bound));
        }
        assert!(a.lstm.b_ih.iter().chain(&a.lstm.b_hh).all(|&v| v == 0.0));
        assert_eq!(a.dense.b, vec![0.0]);
    }

    #[test]
    fn forget_bias_override_touches_only_forget_block() {
        let m: ModelParams<f64> = init_model_with(2, 3, 4, 1, InitOptions { forget_bias: 1.0 });
        assert_eq!(&m.lstm.b_ih[0..3], &[0.0; 3]);
        assert_eq!(&m.lstm.b_ih[3..6], &[1.0; 3]);
        assert_eq!(&m.lstm.b_ih[6..12], &[0.0; 6]);
    }

    #[test]
    fn f32_and_f64_share_the_init_stream() {
        let a: ModelParams<f64> = init_model(2, 4, 3, 5);
        let b: ModelParams<f32> = init_model(2, 4, 3, 5);
        assert_eq!(a.cast::<f32>(), b);
    }

    #[test]
    fn relabel_identity_is_noop_and_inverse_roundtrips() {
        let m: ModelParams<f64> = init_model(2, 4, 3, 11);
        assert_eq!(m.relabel_hidden(&[0, 1, 2, 3]), m);
        let perm = [2, 0, 3, 1];
        let mut inv = [0; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        assert_eq!(m.relabel_hidden(&perm).relabel_hidden(&inv), m);
    }
}
