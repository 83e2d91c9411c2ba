use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn identity(n_features: usize) -> Self {
        Self {
            mean: vec![0.0; n_features],
            std: vec![1.0; n_features],
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Fits over every row of every block (rows are samples, columns are features).
    pub fn fit<'a>(blocks: impl IntoIterator<Item = &'a Tensor2D<f64>>) -> Result<Self> {
        let blocks: Vec<&Tensor2D<f64>> = blocks.into_iter().collect();
        let m = blocks
            .first()
            .map(|b| b.cols())
            .ok_or_else(|| Error::Empty("no feature data to standardize".into()))?;
        if blocks.iter().any(|b| b.cols() != m) {
            return Err(Error::ShapeMismatch("feature blocks disagree on width".into()));
        }
        let n: usize = blocks.iter().map(|b| b.rows()).sum();
        if n < 2 {
            return Err(Error::Empty(format!("standardization needs at least 2 samples, got {n}")));
        }
        let mut mean = vec![0.0; m];
        for b in &blocks {
            for r in 0..b.rows() {
                for (acc, &v) in mean.iter_mut().zip(b.row(r)) {
                    *acc += v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; m];
        for b in &blocks {
            for r in 0..b.rows() {
                for ((acc, &v), &mu) in var.iter_mut().zip(b.row(r)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
        }
        let mut std = Vec::with_capacity(m);
        for (feature, v) in var.into_iter().enumerate() {
            let s = (v / n as f64).sqrt();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::ZeroVariance { feature });
            }
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    /// `x' = (x − mean) / std`, column-wise.
    pub fn apply(&self, x: &Tensor2D<f64>) -> Result<Tensor2D<f64>> {
        self.check(x)?;
        Ok(Tensor2D::from_fn(x.rows(), x.cols(), |r, c| {
            (x.get(r, c) - self.mean[c]) / self.std[c]
        }))
    }

    pub fn unapply(&self, x: &Tensor2D<f64>) -> Result<Tensor2D<f64>> {
        self.check(x)?;
        Ok(Tensor2D::from_fn(x.rows(), x.cols(), |r, c| {
            x.get(r, c) * self.std[c] + self.mean[c]
        }))
    }

    fn check(&self, x: &Tensor2D<f64>) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} features, stats fitted on {}",
                x.cols(),
                self.mean.len()
            )));
        }
        Ok(())
    }
}
