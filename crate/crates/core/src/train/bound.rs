use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs of the gradient-descent convergence bound under quantized messages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBound {
    /// Smoothness constant of the loss.
    pub l2: f64,
    /// Fixed step size; must satisfy `α < 2/L2`.
    pub alpha: f64,
    /// Number of iterations.
    pub t: u64,
    /// `√Σ_l Q^l`.
    pub q: f64,
    /// `L(w_1) − L*`.
    pub gap: f64,
}

impl ConvergenceBound {
    /// Builds the bound from per-layer variance bounds `Q^l`.
    pub fn from_layers(l2: f64, alpha: f64, t: u64, q_layers: &[f64], gap: f64) -> Self {
        ConvergenceBound {
            l2,
            alpha,
            t,
            q: q_layers.iter().sum::<f64>().sqrt(),
            gap,
        }
    }
}

/// Bound on the average squared gradient norm over `T` steps:
/// `2·gap / (T(2α − α²L2)) + α·L2·Q² / (2 − α·L2)`.
pub fn convergence_bound(cb: &ConvergenceBound) -> Result<f64> {
    let ConvergenceBound {
        l2,
        alpha,
        t,
        q,
        gap,
    } = *cb;
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::invalid(format!(
            "L2 must be positive and finite, got {l2}"
        )));
    }
    if !(alpha > 0.0 && alpha * l2 < 2.0) {
        return Err(Error::invalid(format!(
            "step size {alpha} must lie in (0, 2/L2) = (0, {})",
            2.0 / l2
        )));
    }
    if t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    if !(q >= 0.0 && gap >= 0.0) {
        return Err(Error::invalid("Q and the loss gap must be non-negative"));
    }
    let first = 2.0 * gap / (t as f64 * (2.0 * alpha - alpha * alpha * l2));
    let second = alpha * l2 * q * q / (2.0 - alpha * l2);
    Ok(first + second)
}
