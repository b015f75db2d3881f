use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::{math, Real};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before the logarithm.
pub const PROB_FLOOR: Real = 1e-12;

const SUM_TOLERANCE: Real = 1e-6;

/// Cross-entropy of one probability vector against a class index.
///
/// Returns `-ln(clamp(pred[label]))` and the gradient with respect to
/// `pred`; the gradient is zero where the clamp is active.
pub fn cross_entropy_single(pred: &[Real], label: usize) -> Result<(Real, alloc::vec::Vec<Real>)> {
    if label >= pred.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: pred.len(),
        });
    }
    let sum: Real = pred.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid("prediction is not a probability vector"));
    }
    let p = pred[label];
    let clamped = p.clamp(PROB_FLOOR, 1.0);
    let mut grad = vec![0.0; pred.len()];
    if (PROB_FLOOR..=1.0).contains(&p) {
        grad[label] = -1.0 / p;
    }
    Ok((-math::ln(clamped), grad))
}

/// Mean cross-entropy over a batch of probability rows.
pub fn cross_entropy(pred: &Tensor, labels: &[usize]) -> Result<(Real, Tensor)> {
    if pred.rank() != 2 || pred.batch() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            expected: vec![labels.len(), pred.row_len()],
            found: pred.shape().to_vec(),
        });
    }
    let n = labels.len() as Real;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let (loss, g) = cross_entropy_single(pred.row(b), label)?;
        total += loss;
        for (d, v) in grad.row_mut(b).iter_mut().zip(g) {
            *d = v / n;
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::non_finite("cross_entropy"));
    }
    Ok((loss, grad))
}
