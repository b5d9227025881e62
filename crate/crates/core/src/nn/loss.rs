use crate::error::{Error, Result};

/// Squared error and its derivative with respect to the prediction.
pub fn mse_loss(pred: f64, label: f64) -> Result<(f64, f64)> {
    if !pred.is_finite() || !label.is_finite() {
        return Err(Error::Numeric(format!(
            "mse_loss on non-finite input (pred {pred}, label {label})"
        )));
    }
    let diff = pred - label;
    Ok((diff * diff, 2.0 * diff))
}
