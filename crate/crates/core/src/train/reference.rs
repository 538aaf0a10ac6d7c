//! Single-device full-graph trainer written directly from the layer
//! definition, used as the oracle for the distributed engine.

use crate::error::{Error, Result};
use crate::graph::{compute_coeffs, AggCoeffs, AggMode, Graph, Split};
use crate::scalar::Scalar;
use crate::tensor::{
    correct_predictions, loss_and_grad, GnnModel, Matrix, OptimizerKind, OptimizerState,
};

use super::engine::Evaluation;

pub struct ReferenceTrainer<'g, T> {
    g: &'g Graph,
    coeffs: AggCoeffs,
    model: GnnModel<T>,
    opt: OptimizerState<T>,
    features: Matrix<T>,
}

impl<'g, T: Scalar> ReferenceTrainer<'g, T> {
    pub fn new(
        g: &'g Graph,
        dims: &[usize],
        agg: AggMode,
        optimizer: OptimizerKind,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        if dims.first() != Some(&g.feature_dim()) {
            return Err(Error::invalid(
                "model input width does not match the features",
            ));
        }
        Ok(ReferenceTrainer {
            g,
            coeffs: compute_coeffs(g, agg),
            model: GnnModel::init(dims, agg, seed)?,
            opt: OptimizerState::new(optimizer, lr)?,
            features: g.features().cast(),
        })
    }

    pub fn model(&self) -> &GnnModel<T> {
        &self.model
    }

    /// `h̄_v = Σ_{u∈{v}∪N(v)} α_{u,v} h_u`.
    fn aggregate(&self, h: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(h.rows(), h.cols());
        for v in 0..self.g.num_nodes() {
            let dst = out.row_mut(v);
            for (u, a) in self.coeffs.closed_neighborhood(self.g, v) {
                let a = T::of(a);
                for (o, &x) in dst.iter_mut().zip(h.row(u)) {
                    *o += a * x;
                }
            }
        }
        out
    }

    /// `∂L/∂h_u = Σ_{v: u∈{v}∪N(v)} α_{u,v} g_v`.
    fn scatter(&self, grad: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(grad.rows(), grad.cols());
        for u in 0..self.g.num_nodes() {
            let dst = out.row_mut(u);
            for (v, _) in self.coeffs.closed_neighborhood(self.g, u) {
                let a = T::of(
                    self.coeffs
                        .get(self.g, u, v)
                        .expect("symmetric neighborhoods"),
                );
                for (o, &x) in dst.iter_mut().zip(grad.row(v)) {
                    *o += a * x;
                }
            }
        }
        out
    }

    /// Loss, accuracies and weight gradients at the current weights.
    pub fn gradients(&self) -> Result<(Evaluation, Vec<Matrix<T>>)> {
        let layers = self.model.num_layers();
        let mut h = self.features.clone();
        let mut caches = Vec::with_capacity(layers);
        for l in 0..layers {
            let (out, cache) = self.model.layer_forward(l, self.aggregate(&h))?;
            h = out;
            caches.push(cache);
        }
        let labels = self.g.labels();
        let (loss, mut grad) = loss_and_grad(&h, labels, self.g.mask(Split::Train))?;
        let acc = |s: Split| {
            let (c, n) = correct_predictions(&h, labels, self.g.mask(s));
            if n == 0 {
                0.0
            } else {
                c as f64 / n as f64
            }
        };
        let eval = Evaluation {
            loss: loss.to_f64_lossless(),
            train_acc: acc(Split::Train),
            val_acc: acc(Split::Val),
            test_acc: acc(Split::Test),
        };
        let mut grads = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            let (gw, g_in) = self.model.layer_backward(l, &caches[l], &grad)?;
            grads.push(gw);
            if l > 0 {
                grad = self.scatter(&g_in);
            }
        }
        grads.reverse();
        Ok((eval, grads))
    }

    /// One full-batch step; returns the pre-update evaluation.
    pub fn train_epoch(&mut self) -> Result<Evaluation> {
        let (eval, grads) = self.gradients()?;
        let mut params = self.model.weights_mut();
        self.opt.step(&mut params, &grads)?;
        Ok(eval)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        Ok(self.gradients()?.0)
    }
}
