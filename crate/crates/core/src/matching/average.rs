//! Scattering client layers into the global neuron order and averaging them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::bbp::AssignmentMatrix;
use crate::nn::{DenseLayer, LstmLayer, ModelMeta, ModelParams, GATES};
use crate::scalar::Scalar;
use crate::tensor::Tensor2D;

/// Divisor for a global neuron's average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgMode {
    /// `1/n_i`: only the clients that own neuron `i`.
    #[default]
    PerMatch,
    /// `1/J` for every neuron, owners or not.
    UniformJ,
}

impl std::fmt::Display for AvgMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerMatch => "per_match",
            Self::UniformJ => "uniform_j",
        })
    }
}

impl std::str::FromStr for AvgMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_match" => Ok(Self::PerMatch),
            "uniform_j" => Ok(Self::UniformJ),
            other => Err(Error::Config(format!("unknown avg_mode `{other}`"))),
        }
    }
}

fn check_assignment(local: usize, a: &AssignmentMatrix) -> Result<()> {
    a.validate()?;
    if a.local_size() != local {
        return Err(Error::ShapeMismatch(format!(
            "assignment for client {} covers {} neurons, layer has {local}",
            a.client_id,
            a.local_size()
        )));
    }
    Ok(())
}

/// Input-side blocks after scattering: `w_ih` (`4L′ × D_in`), `b_ih`, `b_hh`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBlocks<T> {
    pub w_ih: Tensor2D<T>,
    pub b_ih: Vec<T>,
    pub b_hh: Vec<T>,
}

/// Row `g·L + l` moves to `g·L′ + Π(l)` in every gate; unowned rows are zero.
pub fn permute_input_hidden<T: Scalar>(layer: &LstmLayer<T>, a: &AssignmentMatrix) -> Result<InputBlocks<T>> {
    let (l, d) = (layer.hidden(), layer.d_in());
    check_assignment(l, a)?;
    let lg = a.global_size;
    let mut out = InputBlocks {
        w_ih: Tensor2D::zeros(GATES * lg, d),
        b_ih: vec![T::zero(); GATES * lg],
        b_hh: vec![T::zero(); GATES * lg],
    };
    for g in 0..GATES {
        for (src, &dst) in a.mapping.iter().enumerate() {
            let (rs, rd) = (g * l + src, g * lg + dst);
            out.w_ih.row_mut(rd).copy_from_slice(layer.w_ih.row(rs));
            out.b_ih[rd] = layer.b_ih[rs];
            out.b_hh[rd] = layer.b_hh[rs];
        }
    }
    Ok(out)
}

/// Per gate block, entry `(l, m)` moves to `(Π(l), Π(m))` in a zero `L′ × L′` block.
pub fn permute_hidden_hidden<T: Scalar>(w_hh: &Tensor2D<T>, a: &AssignmentMatrix) -> Result<Tensor2D<T>> {
    let l = w_hh.cols();
    if w_hh.rows() != GATES * l {
        return Err(Error::ShapeMismatch(format!("w_hh {:?} is not 4L x L", w_hh.shape())));
    }
    check_assignment(l, a)?;
    let lg = a.global_size;
    let mut out = Tensor2D::zeros(GATES * lg, lg);
    for g in 0..GATES {
        for (src, &dst) in a.mapping.iter().enumerate() {
            for (csrc, &cdst) in a.mapping.iter().enumerate() {
                out.set(g * lg + dst, cdst, w_hh.get(g * l + src, csrc));
            }
        }
    }
    Ok(out)
}

/// Both permutations, giving a layer of hidden size `L′`.
pub fn permute_layer<T: Scalar>(layer: &LstmLayer<T>, a: &AssignmentMatrix) -> Result<LstmLayer<T>> {
    let input = permute_input_hidden(layer, a)?;
    Ok(LstmLayer {
        w_ih: input.w_ih,
        w_hh: permute_hidden_hidden(&layer.w_hh, a)?,
        b_ih: input.b_ih,
        b_hh: input.b_hh,
    })
}

/// Column `l` of the head moves to `Π(l)`; unowned columns are zero.
pub fn permute_dense<T: Scalar>(dense: &DenseLayer<T>, a: &AssignmentMatrix) -> Result<DenseLayer<T>> {
    check_assignment(dense.w.cols(), a)?;
    let mut out = DenseLayer::zeros(a.global_size);
    for (src, &dst) in a.mapping.iter().enumerate() {
        out.w.set(0, dst, dense.w.get(0, src));
    }
    out.b = dense.b.clone();
    Ok(out)
}

fn owners(assignments: &[AssignmentMatrix]) -> Result<(usize, Vec<Vec<bool>>, Vec<usize>)> {
    let first = assignments
        .first()
        .ok_or_else(|| Error::Empty("no client layers to average".into()))?;
    let lg = first.global_size;
    if assignments.iter().any(|a| a.global_size != lg) {
        return Err(Error::ShapeMismatch("assignments disagree on the global size".into()));
    }
    let owned: Vec<Vec<bool>> = assignments.iter().map(AssignmentMatrix::owned).collect();
    let counts: Vec<usize> = (0..lg).map(|i| owned.iter().filter(|o| o[i]).count()).collect();
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!("global neuron {i} is owned by no client")));
    }
    Ok((lg, owned, counts))
}

fn weight<T: Scalar>(mode: AvgMode, owners: usize, clients: usize) -> T {
    match mode {
        AvgMode::PerMatch => T::lit(1.0 / owners.max(1) as f64),
        AvgMode::UniformJ => T::lit(1.0 / clients as f64),
    }
}

/// Averages permuted client layers neuron by neuron.
///
/// Input-side rows of neuron `i` are averaged over its owners; recurrent entry
/// `(i, i′)` over the clients owning both. Accumulation is `acc += w·x` in client order.
pub fn matched_average_layer<T: Scalar>(
    permuted: &[LstmLayer<T>],
    assignments: &[AssignmentMatrix],
    mode: AvgMode,
) -> Result<LstmLayer<T>> {
    let (lg, owned, counts) = owners(assignments)?;
    if permuted.len() != assignments.len() {
        return Err(Error::ShapeMismatch("one assignment per client layer is required".into()));
    }
    let d = permuted[0].d_in();
    if permuted.iter().any(|p| p.hidden() != lg || p.d_in() != d) {
        return Err(Error::ShapeMismatch(format!("client layers must all be permuted to hidden size {lg}")));
    }
    let j = permuted.len();
    let mut out = LstmLayer::zeros(d, lg);
    for (layer, own) in permuted.iter().zip(&owned) {
        for g in 0..GATES {
            for i in (0..lg).filter(|&i| own[i]) {
                let r = g * lg + i;
                let w: T = weight(mode, counts[i], j);
                for (acc, &x) in out.w_ih.row_mut(r).iter_mut().zip(layer.w_ih.row(r)) {
                    *acc += w * x;
                }
                out.b_ih[r] += w * layer.b_ih[r];
                out.b_hh[r] += w * layer.b_hh[r];
                for i2 in (0..lg).filter(|&i2| own[i2]) {
                    let both = owned.iter().filter(|o| o[i] && o[i2]).count();
                    let w: T = weight(mode, both, j);
                    let v = out.w_hh.get(r, i2) + w * layer.w_hh.get(r, i2);
                    out.w_hh.set(r, i2, v);
                }
            }
        }
    }
    Ok(out)
}

/// Head columns averaged over each neuron's owners; the bias over all clients.
pub fn average_output_layer<T: Scalar>(
    permuted: &[DenseLayer<T>],
    assignments: &[AssignmentMatrix],
    mode: AvgMode,
) -> Result<DenseLayer<T>> {
    let (lg, owned, counts) = owners(assignments)?;
    if permuted.len() != assignments.len() || permuted.iter().any(|d| d.w.cols() != lg) {
        return Err(Error::ShapeMismatch(format!("dense layers must all be permuted to hidden size {lg}")));
    }
    let j = permuted.len();
    let mut out = DenseLayer::zeros(lg);
    let wb = T::lit(1.0 / j as f64);
    for (dense, own) in permuted.iter().zip(&owned) {
        for i in (0..lg).filter(|&i| own[i]) {
            let w: T = weight(mode, counts[i], j);
            let v = out.w.get(0, i) + w * dense.w.get(0, i);
            out.w.set(0, i, v);
        }
        out.b[0] += wb * dense.b[0];
    }
    Ok(out)
}

/// Permutes and averages whole client models under fixed assignments, with no retraining.
pub fn matched_aggregate<T: Scalar>(
    models: &[ModelParams<T>],
    assignments: &[AssignmentMatrix],
    mode: AvgMode,
) -> Result<ModelParams<T>> {
    if models.len() != assignments.len() || models.is_empty() {
        return Err(Error::ShapeMismatch("one assignment per client model is required".into()));
    }
    let layers = models
        .iter()
        .zip(assignments)
        .map(|(m, a)| permute_layer(&m.lstm, a))
        .collect::<Result<Vec<_>>>()?;
    let heads = models
        .iter()
        .zip(assignments)
        .map(|(m, a)| permute_dense(&m.dense, a))
        .collect::<Result<Vec<_>>>()?;
    let lstm = matched_average_layer(&layers, assignments, mode)?;
    let dense = average_output_layer(&heads, assignments, mode)?;
    let meta = ModelMeta {
        hidden: lstm.hidden(),
        ..models[0].meta
    };
    Ok(ModelParams { lstm, dense, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_model;

    fn swap01(l: usize) -> AssignmentMatrix {
        let mut mapping: Vec<usize> = (0..l).collect();
        mapping.swap(0, 1);
        AssignmentMatrix {
            client_id: 0,
            mapping,
            global_size: l,
        }
    }

    #[test]
    fn identity_permutation_is_a_no_op() {
        let m = init_model::<f64>(3, 4, 2, 1);
        let a = AssignmentMatrix::identity(0, 4);
        assert_eq!(permute_layer(&m.lstm, &a).unwrap(), m.lstm);
        assert_eq!(permute_dense(&m.dense, &a).unwrap(), m.dense);
    }

    #[test]
    fn swap_moves_rows_in_every_gate() {
        let m = init_model::<f64>(2, 3, 2, 2);
        let p = permute_input_hidden(&m.lstm, &swap01(3)).unwrap();
        for g in 0..4 {
            assert_eq!(p.w_ih.row(g * 3), m.lstm.w_ih.row(g * 3 + 1));
            assert_eq!(p.w_ih.row(g * 3 + 1), m.lstm.w_ih.row(g * 3));
            assert_eq!(p.w_ih.row(g * 3 + 2), m.lstm.w_ih.row(g * 3 + 2));
        }
    }

    #[test]
    fn hidden_hidden_swap_is_p_h_pt() {
        let mut h = Tensor2D::zeros(8, 2);
        for g in 0..4 {
            let base = 10.0 * g as f64;
            h.set(2 * g, 0, base + 1.0);
            h.set(2 * g, 1, base + 2.0);
            h.set(2 * g + 1, 0, base + 3.0);
            h.set(2 * g + 1, 1, base + 4.0);
        }
        let out = permute_hidden_hidden(&h, &swap01(2)).unwrap();
        // P = [[0,1],[1,0]]: P [[a,b],[c,d]] Pᵀ = [[d,c],[b,a]].
        for g in 0..4 {
            let base = 10.0 * g as f64;
            assert_eq!(out.row(2 * g), &[base + 4.0, base + 3.0]);
            assert_eq!(out.row(2 * g + 1), &[base + 2.0, base + 1.0]);
        }
    }

    #[test]
    fn growth_leaves_zero_slot() {
        let m = init_model::<f64>(2, 2, 2, 3);
        let a = AssignmentMatrix {
            client_id: 0,
            mapping: vec![0, 2],
            global_size: 3,
        };
        let p = permute_layer(&m.lstm, &a).unwrap();
        for g in 0..4 {
            assert!(p.w_ih.row(g * 3 + 1).iter().all(|&v| v == 0.0));
            assert!(p.w_hh.row(g * 3 + 1).iter().all(|&v| v == 0.0));
            assert_eq!(p.w_hh.get(g * 3, 1), 0.0);
            assert_eq!(p.w_hh.get(g * 3 + 2, 2), m.lstm.w_hh.get(g * 2 + 1, 1));
        }
        let d = permute_dense(&m.dense, &a).unwrap();
        assert_eq!(d.w.row(0), &[m.dense.w.get(0, 0), 0.0, m.dense.w.get(0, 1)]);
    }

    fn filled(d: usize, l: usize, v: f64) -> LstmLayer<f64> {
        let mut layer = LstmLayer::zeros(d, l);
        layer.w_ih.as_mut_slice().iter_mut().for_each(|x| *x = v);
        layer.w_hh.as_mut_slice().iter_mut().for_each(|x| *x = v);
        layer.b_ih.iter_mut().for_each(|x| *x = v);
        layer.b_hh.iter_mut().for_each(|x| *x = v);
        layer
    }

    #[test]
    fn shared_neuron_is_averaged_disjoint_ones_concatenated() {
        // Client 0 owns globals {0, 1}, client 1 owns {1, 2}; global 1 is shared.
        let a0 = AssignmentMatrix { client_id: 0, mapping: vec![0, 1], global_size: 3 };
        let a1 = AssignmentMatrix { client_id: 1, mapping: vec![2, 1], global_size: 3 };
        let p0 = permute_layer(&filled(1, 2, 2.0), &a0).unwrap();
        let p1 = permute_layer(&filled(1, 2, 4.0), &a1).unwrap();
        let avg = matched_average_layer(&[p0, p1], &[a0.clone(), a1.clone()], AvgMode::PerMatch).unwrap();
        for g in 0..4 {
            assert_eq!(avg.w_ih.get(g * 3, 0), 2.0);
            assert_eq!(avg.w_ih.get(g * 3 + 1, 0), 3.0);
            assert_eq!(avg.w_ih.get(g * 3 + 2, 0), 4.0);
            assert_eq!(avg.b_hh[g * 3 + 1], 3.0);
            assert_eq!(avg.w_hh.get(g * 3 + 1, 1), 3.0);
            assert_eq!(avg.w_hh.get(g * 3, 1), 2.0);
            assert_eq!(avg.w_hh.get(g * 3 + 2, 1), 4.0);
            // No client owns both 0 and 2.
            assert_eq!(avg.w_hh.get(g * 3, 2), 0.0);
        }
        let uni = matched_average_layer(
            &[permute_layer(&filled(1, 2, 2.0), &a0).unwrap(), permute_layer(&filled(1, 2, 4.0), &a1).unwrap()],
            &[a0, a1],
            AvgMode::UniformJ,
        )
        .unwrap();
        assert_eq!(uni.w_ih.get(0, 0), 1.0);
        assert_eq!(uni.w_ih.get(1, 0), 3.0);
    }

    #[test]
    fn output_layer_disjoint_clients() {
        let a0 = AssignmentMatrix { client_id: 0, mapping: vec![0], global_size: 2 };
        let a1 = AssignmentMatrix { client_id: 1, mapping: vec![1], global_size: 2 };
        let d0 = DenseLayer { w: Tensor2D::from_vec(1, 1, vec![1.5]).unwrap(), b: vec![1.0] };
        let d1 = DenseLayer { w: Tensor2D::from_vec(1, 1, vec![-2.0]).unwrap(), b: vec![3.0] };
        let p = [permute_dense(&d0, &a0).unwrap(), permute_dense(&d1, &a1).unwrap()];
        let avg = average_output_layer(&p, &[a0, a1], AvgMode::PerMatch).unwrap();
        assert_eq!(avg.w.row(0), &[1.5, -2.0]);
        assert_eq!(avg.b, vec![2.0]);
    }

    #[test]
    fn identity_assignments_reduce_to_uniform_fedavg() {
        let models: Vec<_> = (0..3).map(|j| crate::nn::init_model::<f64>(2, 4, 3, j)).collect();
        let ids: Vec<_> = (0..3).map(|j| AssignmentMatrix::identity(j, 4)).collect();
        let fedma = matched_aggregate(&models, &ids, AvgMode::PerMatch).unwrap();
        let fedavg = crate::matching::fedavg_aggregate(&models, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(fedma, fedavg);
    }

    #[test]
    fn unowned_global_neuron_is_rejected() {
        let a = AssignmentMatrix { client_id: 0, mapping: vec![0], global_size: 2 };
        let p = permute_layer(&filled(1, 1, 1.0), &a).unwrap();
        assert!(matched_average_layer(&[p], &[a], AvgMode::PerMatch).is_err());
    }
}
