use crate::error::{Error, Result};
use crate::nn::{LstmLayer, GATES};
use crate::scalar::Scalar;
use crate::tensor::Tensor2D;

/// Input-side parameters of one hidden unit: its `w_ih` row in each gate, then
/// the four combined biases `b_ih + b_hh`, in gate order. Length `4·D_in + 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronVector {
    pub client_id: usize,
    pub index: usize,
    pub values: Vec<f64>,
}

pub fn neuron_dim(d_in: usize) -> usize {
    GATES * d_in + GATES
}

pub fn extract_neuron_vectors<T: Scalar>(layer: &LstmLayer<T>, client_id: usize) -> Vec<NeuronVector> {
    let (l, d) = (layer.hidden(), layer.d_in());
    (0..l)
        .map(|u| {
            let mut values = Vec::with_capacity(neuron_dim(d));
            for g in 0..GATES {
                values.extend(layer.w_ih.row(g * l + u).iter().map(|v| v.as_f64()));
            }
            for g in 0..GATES {
                values.push((layer.b_ih[g * l + u] + layer.b_hh[g * l + u]).as_f64());
            }
            NeuronVector {
                client_id,
                index: u,
                values,
            }
        })
        .collect()
}

/// Inverse of [`extract_neuron_vectors`]: `w_ih` (`4L × D_in`) and the combined bias (`4L`).
pub fn rebuild_input_side(vectors: &[NeuronVector], d_in: usize) -> Result<(Tensor2D<f64>, Vec<f64>)> {
    let l = vectors.len();
    if let Some(v) = vectors.iter().find(|v| v.values.len() != neuron_dim(d_in)) {
        return Err(Error::ShapeMismatch(format!(
            "neuron {} has {} values, expected {}",
            v.index,
            v.values.len(),
            neuron_dim(d_in)
        )));
    }
    let mut w = Tensor2D::zeros(GATES * l, d_in);
    let mut bias = vec![0.0; GATES * l];
    for (u, v) in vectors.iter().enumerate() {
        for g in 0..GATES {
            w.row_mut(g * l + u).copy_from_slice(&v.values[g * d_in..(g + 1) * d_in]);
            bias[g * l + u] = v.values[GATES * d_in + g];
        }
    }
    Ok((w, bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_model;

    #[test]
    fn lengths_and_zero_layer() {
        let layer = LstmLayer::<f64>::zeros(2, 3);
        let vs = extract_neuron_vectors(&layer, 0);
        assert_eq!(vs.len(), 3);
        assert!(vs.iter().all(|v| v.values.len() == 12 && v.values.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn layout_is_gate_rows_then_biases() {
        let mut layer = LstmLayer::<f64>::zeros(2, 3);
        for g in 0..4 {
            layer.w_ih.set(g * 3 + 1, 0, (10 * g) as f64);
            layer.w_ih.set(g * 3 + 1, 1, (10 * g + 1) as f64);
            layer.b_ih[g * 3 + 1] = 0.5 * g as f64;
            layer.b_hh[g * 3 + 1] = 0.25;
        }
        let v = &extract_neuron_vectors(&layer, 0)[1].values;
        assert_eq!(v, &vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0, 30.0, 31.0, 0.25, 0.75, 1.25, 1.75]);
    }

    #[test]
    fn rebuild_reproduces_input_side() {
        let mut m = init_model::<f64>(3, 5, 2, 4);
        m.lstm.b_ih.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 * 0.1);
        m.lstm.b_hh.iter_mut().enumerate().for_each(|(i, b)| *b = -(i as f64) * 0.03);
        let (w, b) = rebuild_input_side(&extract_neuron_vectors(&m.lstm, 0), 3).unwrap();
        assert_eq!(w, m.lstm.w_ih);
        let combined: Vec<f64> = m.lstm.b_ih.iter().zip(&m.lstm.b_hh).map(|(a, b)| a + b).collect();
        assert_eq!(b, combined);
    }
}
