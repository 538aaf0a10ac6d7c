use crate::comm::CostModel;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Sums per-device weight gradients in device-id order; every device then
/// holds the same result.
pub fn allreduce_weight_grads(per_device: &[Vec<Matrix<f64>>]) -> Result<Vec<Matrix<f64>>> {
    let Some(first) = per_device.first() else {
        return Err(Error::protocol("all-reduce over zero devices"));
    };
    let mut sum = first.clone();
    for (d, grads) in per_device.iter().enumerate().skip(1) {
        if grads.len() != sum.len() {
            return Err(Error::protocol(format!(
                "device {d} contributes {} gradients, device 0 has {}",
                grads.len(),
                sum.len()
            )));
        }
        for (acc, g) in sum.iter_mut().zip(grads) {
            if acc.shape() != g.shape() {
                return Err(Error::protocol(format!(
                    "device {d} gradient is {:?}, expected {:?}",
                    g.shape(),
                    acc.shape()
                )));
            }
            acc.add_assign(g)?;
        }
    }
    Ok(sum)
}

/// Simulated seconds of a ring all-reduce of `params` 64-bit values:
/// `2(N−1)` steps, each moving a `1/N` slice to the right-hand neighbor.
pub fn allreduce_time(cost: &CostModel, params: usize) -> f64 {
    let n = cost.num_devices();
    if n < 2 {
        return 0.0;
    }
    let bits = (64 * params).div_ceil(n) as u64;
    let step = (0..n)
        .map(|d| cost.transfer_time(d, (d + 1) % n, bits))
        .fold(0.0, f64::max);
    2.0 * (n - 1) as f64 * step
}
