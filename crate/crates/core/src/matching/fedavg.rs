use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::scalar::Scalar;

/// Tolerance on `Σ p_j = 1`.
pub const FRACTION_TOL: f64 = 1e-9;

/// Coordinate-wise `Σ_j p_j · θ_j`, accumulated in client order.
pub fn fedavg_aggregate<T: Scalar>(models: &[ModelParams<T>], fractions: &[f64]) -> Result<ModelParams<T>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Empty("no client models to aggregate".into()))?;
    if fractions.len() != models.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fractions for {} models",
            fractions.len(),
            models.len()
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > FRACTION_TOL || fractions.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Config(format!("client fractions must be non-negative and sum to 1, got {total}")));
    }
    if let Some(j) = models.iter().position(|m| !m.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!("client {j} model shape differs from client 0")));
    }
    let mut out = first.zeros_like();
    for (m, &p) in models.iter().zip(fractions) {
        let w = T::lit(p);
        for (acc, src) in out.blocks_mut().into_iter().zip(m.blocks()) {
            for (a, &x) in acc.iter_mut().zip(src) {
                *a += w * x;
            }
        }
    }
    Ok(out)
}

/// `p_j = n_j / Σ n`.
pub fn sample_fractions(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("no samples across clients".into()));
    }
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, ModelMeta};
    use proptest::prelude::*;

    fn scalar_model(v: f64) -> ModelParams<f64> {
        let mut m = ModelParams::zeros(ModelMeta { d_in: 1, hidden: 1, seq_len: 1 });
        for b in m.blocks_mut() {
            b.iter_mut().for_each(|x| *x = v);
        }
        m
    }

    #[test]
    fn single_client_is_identity() {
        let m = init_model::<f64>(3, 4, 2, 9);
        assert_eq!(fedavg_aggregate(std::slice::from_ref(&m), &[1.0]).unwrap(), m);
    }

    #[test]
    fn weighted_means() {
        let mid = fedavg_aggregate(&[scalar_model(2.0), scalar_model(4.0)], &[0.5, 0.5]).unwrap();
        assert!(mid.blocks().iter().all(|b| b.iter().all(|&v| v == 3.0)));
        let skew = fedavg_aggregate(&[scalar_model(0.0), scalar_model(4.0)], &[0.25, 0.75]).unwrap();
        assert!(skew.blocks().iter().all(|b| b.iter().all(|&v| v == 3.0)));
    }

    #[test]
    fn rejects_bad_fractions_and_shapes() {
        let a = scalar_model(1.0);
        assert!(fedavg_aggregate(&[a.clone(), a.clone()], &[0.5, 0.6]).is_err());
        assert!(fedavg_aggregate(std::slice::from_ref(&a), &[0.5, 0.5]).is_err());
        let b = init_model::<f64>(1, 2, 1, 0);
        assert!(matches!(fedavg_aggregate(&[a, b], &[0.5, 0.5]), Err(Error::ShapeMismatch(_))));
        assert!(fedavg_aggregate::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn fractions_from_counts() {
        assert_eq!(sample_fractions(&[1, 3]).unwrap(), vec![0.25, 0.75]);
        assert!(sample_fractions(&[0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_is_affine(sa in any::<u64>(), sb in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0, p in 0.0f64..1.0) {
            let a: Vec<_> = (0..2).map(|j| init_model::<f64>(2, 3, 2, sa.wrapping_add(j))).collect();
            let b: Vec<_> = (0..2).map(|j| init_model::<f64>(2, 3, 2, sb.wrapping_add(j))).collect();
            let fr = [p, 1.0 - p];
            let combo: Vec<_> = a.iter().zip(&b).map(|(x, y)| {
                let mut out = x.zeros_like();
                for ((o, xs), ys) in out.blocks_mut().into_iter().zip(x.blocks()).zip(y.blocks()) {
                    for ((ov, &xv), &yv) in o.iter_mut().zip(xs).zip(ys) {
                        *ov = alpha * xv + beta * yv;
                    }
                }
                out
            }).collect();
            let lhs = fedavg_aggregate(&combo, &fr).unwrap();
            let ga = fedavg_aggregate(&a, &fr).unwrap();
            let gb = fedavg_aggregate(&b, &fr).unwrap();
            for ((l, x), y) in lhs.blocks().iter().zip(ga.blocks()).zip(gb.blocks()) {
                for ((&lv, &xv), &yv) in l.iter().zip(x).zip(y) {
                    prop_assert!((lv - (alpha * xv + beta * yv)).abs() < 1e-12);
                }
            }
        }
    }
}
