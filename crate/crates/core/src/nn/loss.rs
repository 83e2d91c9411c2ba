use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean of squared residuals.
pub fn mse_loss<T: Scalar>(preds: &[T], labels: &[T]) -> Result<T> {
    if preds.is_empty() {
        return Err(Error::Empty("mse over zero samples".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let sum: T = preds.iter().zip(labels).map(|(&p, &y)| (p - y) * (p - y)).sum();
    Ok(sum / T::from_count(preds.len()))
}
