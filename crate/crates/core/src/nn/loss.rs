use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::metrics::sigmoid;

/// Mean squared error over all `B * K` entries and its gradient.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("empty batch"));
    }
    let n = pred.len() as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Binary cross-entropy on logits, averaged over the batch.
///
/// Uses `max(z, 0) - z*y + ln(1 + e^{-|z|})`, which never overflows; the
/// gradient is `(sigmoid(z) - y) / B`.
pub fn bce_loss(logits: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != labels.dim() || logits.ncols() != 1 {
        return Err(Error::Shape(format!(
            "logits {:?} vs labels {:?}, expected B x 1",
            logits.dim(),
            labels.dim()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Empty("empty batch"));
    }
    if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(Error::Validation("binary labels must be 0 or 1".into()));
    }
    let b = logits.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    Zip::from(&mut grad)
        .and(&logits)
        .and(&labels)
        .for_each(|g, z, y| {
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            *g = (sigmoid(*z) - y) / b;
        });
    Ok((loss / b, grad))
}
