//! Backpropagation through time for the LSTM + linear head model.

use crate::error::{Error, Result};
use crate::nn::lstm::{head, lstm_trace, LstmTrace};
use crate::nn::model::{Gradients, ModelParams, BLOCK_LAYER, GATES};
use crate::nn::Sample;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct BackwardOptions<T> {
    /// Leading layers whose gradients are neither computed nor clipped.
    pub frozen_layers: usize,
    /// Global-norm clip threshold over the trainable blocks; `None` disables clipping.
    pub clip_norm: Option<T>,
}

impl<T: Scalar> Default for BackwardOptions<T> {
    fn default() -> Self {
        Self {
            frozen_layers: 0,
            clip_norm: Some(T::lit(5.0)),
        }
    }
}

/// Mean batch MSE and its exact gradient, unclipped, for every parameter.
pub fn backward<T: Scalar>(model: &ModelParams<T>, batch: &[&Sample<T>]) -> Result<(T, Gradients<T>)> {
    backward_with(
        model,
        batch,
        BackwardOptions {
            frozen_layers: 0,
            clip_norm: None,
        },
    )
}

pub fn backward_with<T: Scalar>(
    model: &ModelParams<T>,
    batch: &[&Sample<T>],
    opts: BackwardOptions<T>,
) -> Result<(T, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("backward over an empty batch".into()));
    }
    let seq_len = batch[0].x.rows();
    if batch.iter().any(|s| s.x.rows() != seq_len) {
        return Err(Error::ShapeMismatch("batch mixes sequence lengths".into()));
    }
    let n = T::from_count(batch.len());
    let two = T::lit(2.0);
    let mut grads = model.zeros_like();
    let mut loss = T::zero();

    for sample in batch {
        let trace = lstm_trace(&model.lstm, &sample.x)?;
        let h_last = trace.final_hidden();
        let resid = head(model, h_last) - sample.y;
        loss += resid * resid;
        let d_out = two * resid / n;

        // Dense head.
        for (g, &h) in grads.dense.w.row_mut(0).iter_mut().zip(h_last) {
            *g += d_out * h;
        }
        grads.dense.b[0] += d_out;

        if opts.frozen_layers == 0 {
            let dh: Vec<T> = model.dense.w.row(0).iter().map(|&w| w * d_out).collect();
            accumulate_lstm(model, sample, &trace, dh, &mut grads);
        }
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::DataQuality("loss is NaN or Inf".into()));
    }
    if let Some(max) = opts.clip_norm {
        clip_global_norm(&mut grads, max, opts.frozen_layers);
    }
    Ok((loss, grads))
}

fn accumulate_lstm<T: Scalar>(
    model: &ModelParams<T>,
    sample: &Sample<T>,
    trace: &LstmTrace<T>,
    mut dh: Vec<T>,
    grads: &mut Gradients<T>,
) {
    let l = model.meta.hidden;
    let steps = sample.x.rows();
    let one = T::one();
    let zeros = vec![T::zero(); l];
    let mut dz_next = vec![T::zero(); l];
    let mut dpre = vec![T::zero(); GATES * l];

    for t in (0..steps).rev() {
        let gates = trace.gates.row(t);
        let z = trace.cells.row(t);
        let (z_prev, h_prev) = if t > 0 {
            (trace.cells.row(t - 1), trace.hidden.row(t - 1))
        } else {
            (&zeros[..], &zeros[..])
        };
        for u in 0..l {
            let (a, k, g, o) = (gates[u], gates[l + u], gates[2 * l + u], gates[3 * l + u]);
            let tz = z[u].tanh();
            let d_o = dh[u] * tz;
            let dz = dz_next[u] + dh[u] * o * (one - tz * tz);
            dpre[u] = dz * g * a * (one - a);
            dpre[l + u] = dz * z_prev[u] * k * (one - k);
            dpre[2 * l + u] = dz * a * (one - g * g);
            dpre[3 * l + u] = d_o * o * (one - o);
            dz_next[u] = dz * k;
        }
        grads.lstm.w_ih.add_outer(&dpre, sample.x.row(t));
        grads.lstm.w_hh.add_outer(&dpre, h_prev);
        for ((bi, bh), &d) in grads.lstm.b_ih.iter_mut().zip(grads.lstm.b_hh.iter_mut()).zip(&dpre) {
            *bi += d;
            *bh += d;
        }
        dh.iter_mut().for_each(|v| *v = T::zero());
        model.lstm.w_hh.matvec_t_acc(&dpre, &mut dh);
    }
}

/// Rescales the trainable blocks so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: T, frozen_layers: usize) -> T {
    let mut sq = T::zero();
    for (block, &layer) in grads.blocks().iter().zip(&BLOCK_LAYER) {
        if layer >= frozen_layers {
            sq += block.iter().map(|&g| g * g).sum::<T>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (block, &layer) in grads.blocks_mut().into_iter().zip(&BLOCK_LAYER) {
            if layer >= frozen_layers {
                block.iter_mut().for_each(|g| *g *= scale);
            }
        }
    }
    norm
}
