use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Matrix;

/// Mean softmax cross-entropy over masked rows and its gradient w.r.t. the
/// logits. The gradient is zero outside the mask.
pub fn loss_and_grad<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    mask: &[bool],
) -> Result<(T, Matrix<T>)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::invalid("loss mask selects no nodes"));
    }
    scaled_loss_and_grad(logits, labels, mask, count)
}

/// Cross-entropy summed over masked rows and divided by `denominator`.
///
/// Devices holding a slice of the training set pass the global mask count
/// so that their partial losses and gradients sum to the full-graph mean.
pub fn scaled_loss_and_grad<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    mask: &[bool],
    denominator: usize,
) -> Result<(T, Matrix<T>)> {
    let (n, c) = logits.shape();
    if labels.len() != n || mask.len() != n {
        return Err(Error::invalid(format!(
            "{n} logit rows but {} labels and {} mask entries",
            labels.len(),
            mask.len()
        )));
    }
    if denominator == 0 {
        return Err(Error::invalid("loss denominator is zero"));
    }
    let scale = T::one() / T::of_usize(denominator);
    let mut grad = Matrix::zeros(n, c);
    let mut total = T::zero();
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let y = labels[i];
        if y >= c {
            return Err(Error::invalid(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for &x in row {
            z += (x - max).exp();
        }
        let log_z = z.ln() + max;
        total += log_z - row[y];
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *gj = (p - if j == y { T::one() } else { T::zero() }) * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Counts masked rows whose arg-max logit equals the label.
pub fn correct_predictions<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    mask: &[bool],
) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for i in 0..logits.rows() {
        if !mask[i] {
            continue;
        }
        total += 1;
        let row = logits.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == labels[i]);
    }
    (correct, total)
}
