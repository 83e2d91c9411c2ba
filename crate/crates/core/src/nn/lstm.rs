//! Single-layer LSTM forward pass and the linear regression head.

use crate::error::{Error, Result};
use crate::nn::model::{LstmLayer, ModelParams, GATES};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{dot, Tensor2D};

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct LstmTrace<T> {
    /// Activated gates per step, `T × 4L`, in gate order (input, forget, cell, output).
    pub gates: Tensor2D<T>,
    /// Cell states `z_1..z_T`, `T × L`.
    pub cells: Tensor2D<T>,
    /// Hidden states `h_1..h_T`, `T × L`.
    pub hidden: Tensor2D<T>,
}

impl<T: Scalar> LstmTrace<T> {
    pub fn final_hidden(&self) -> &[T] {
        self.hidden.row(self.hidden.rows() - 1)
    }
}

fn check_input<T: Scalar>(layer: &LstmLayer<T>, x: &Tensor2D<T>) -> Result<()> {
    if x.cols() != layer.d_in() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, layer expects {}",
            x.cols(),
            layer.d_in()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("input sequence".into()));
    }
    if !x.is_finite() {
        return Err(Error::DataQuality("input sequence contains NaN or Inf".into()));
    }
    Ok(())
}

/// Runs the recurrence from `h_0 = z_0 = 0` and records every intermediate.
pub fn lstm_trace<T: Scalar>(layer: &LstmLayer<T>, x: &Tensor2D<T>) -> Result<LstmTrace<T>> {
    check_input(layer, x)?;
    let l = layer.hidden();
    let steps = x.rows();
    let mut gates = Tensor2D::zeros(steps, GATES * l);
    let mut cells = Tensor2D::zeros(steps, l);
    let mut hidden = Tensor2D::zeros(steps, l);
    let mut h_prev = vec![T::zero(); l];
    let mut z_prev = vec![T::zero(); l];
    let mut pre = vec![T::zero(); GATES * l];

    for t in 0..steps {
        for (p, (&bi, &bh)) in pre.iter_mut().zip(layer.b_ih.iter().zip(&layer.b_hh)) {
            *p = bi + bh;
        }
        layer.w_ih.matvec_acc(x.row(t), &mut pre);
        layer.w_hh.matvec_acc(&h_prev, &mut pre);

        let g_row = gates.row_mut(t);
        for u in 0..l {
            g_row[u] = sigmoid(pre[u]);
            g_row[l + u] = sigmoid(pre[l + u]);
            g_row[2 * l + u] = pre[2 * l + u].tanh();
            g_row[3 * l + u] = sigmoid(pre[3 * l + u]);
        }
        for u in 0..l {
            let (a, k, g, o) = (g_row[u], g_row[l + u], g_row[2 * l + u], g_row[3 * l + u]);
            let z = k * z_prev[u] + a * g;
            z_prev[u] = z;
            h_prev[u] = o * z.tanh();
        }
        cells.row_mut(t).copy_from_slice(&z_prev);
        hidden.row_mut(t).copy_from_slice(&h_prev);
    }
    Ok(LstmTrace {
        gates,
        cells,
        hidden,
    })
}

/// Hidden-state sequence (`T × L`) and the final hidden state.
pub fn lstm_forward<T: Scalar>(layer: &LstmLayer<T>, x: &Tensor2D<T>) -> Result<(Tensor2D<T>, Vec<T>)> {
    let trace = lstm_trace(layer, x)?;
    let last = trace.final_hidden().to_vec();
    Ok((trace.hidden, last))
}

fn check_seq_len<T: Scalar>(model: &ModelParams<T>, x: &Tensor2D<T>) -> Result<()> {
    if x.rows() != model.meta.seq_len {
        return Err(Error::ShapeMismatch(format!(
            "sequence has {} steps, model expects {}",
            x.rows(),
            model.meta.seq_len
        )));
    }
    Ok(())
}

/// Final hidden state `h_T` for one window (the feature-extractor output).
pub fn final_hidden<T: Scalar>(model: &ModelParams<T>, x: &Tensor2D<T>) -> Result<Vec<T>> {
    check_seq_len(model, x)?;
    Ok(lstm_forward(&model.lstm, x)?.1)
}

#[inline]
pub(crate) fn head<T: Scalar>(model: &ModelParams<T>, h: &[T]) -> T {
    dot(model.dense.w.row(0), h) + model.dense.b[0]
}

/// `ŷ = w · h_T + b`.
pub fn predict<T: Scalar>(model: &ModelParams<T>, x: &Tensor2D<T>) -> Result<T> {
    let h = final_hidden(model, x)?;
    Ok(head(model, &h))
}
