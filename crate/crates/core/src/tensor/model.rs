use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AggMode;
use crate::scalar::Scalar;

use super::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `in_dim × out_dim`; rows are multiplied from the left: `h = σ(h̄ W)`.
    pub weight: Matrix<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Stack of weighted-sum layers `h_v^l = σ(W^l · Σ_{u∈{v}∪N(v)} α_{u,v} h_u^{l-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel<T> {
    pub layers: Vec<Layer<T>>,
    pub mode: AggMode,
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    /// Aggregated input `h̄`.
    pub aggregated: Matrix<T>,
    /// Pre-activation `h̄ W`.
    pub pre_activation: Matrix<T>,
}

impl<T: Scalar> GnnModel<T> {
    /// Glorot-uniform initialization: entries uniform in `±√(6/(fan_in+fan_out))`.
    /// Hidden layers use ReLU, the last layer none.
    pub fn init(dims: &[usize], mode: AggMode, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(
                "a model needs at least an input and an output dimension",
            ));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(rng.gen_range(-bound..bound)))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
                    activation: if l + 1 == n_layers {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(GnnModel { layers, mode })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(Layer::in_dim).collect();
        d.extend(self.layers.last().map(Layer::out_dim));
        d
    }

    pub fn weights(&self) -> Vec<&Matrix<T>> {
        self.layers.iter().map(|l| &l.weight).collect()
    }

    pub fn weights_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.layers.iter_mut().map(|l| &mut l.weight).collect()
    }

    /// Dense transform and activation of layer `l` on the aggregated input.
    pub fn layer_forward(
        &self,
        l: usize,
        aggregated: Matrix<T>,
    ) -> Result<(Matrix<T>, LayerCache<T>)> {
        let layer = self.layer(l)?;
        let pre = aggregated.matmul(&layer.weight)?;
        let out = activate(&pre, layer.activation);
        Ok((
            out,
            LayerCache {
                aggregated,
                pre_activation: pre,
            },
        ))
    }

    /// Returns `(∂L/∂W^l, ∂L/∂h̄)` given `∂L/∂h^l`.
    ///
    /// `∂L/∂h̄` still has to be scattered back through the aggregation
    /// coefficients to obtain `∂L/∂h^{l-1}`.
    pub fn layer_backward(
        &self,
        l: usize,
        cache: &LayerCache<T>,
        grad_out: &Matrix<T>,
    ) -> Result<(Matrix<T>, Matrix<T>)> {
        let layer = self.layer(l)?;
        if grad_out.shape() != cache.pre_activation.shape() {
            return Err(Error::invalid(format!(
                "layer {l} gradient is {:?}, expected {:?}",
                grad_out.shape(),
                cache.pre_activation.shape()
            )));
        }
        let delta = activation_backward(&cache.pre_activation, grad_out, layer.activation);
        let grad_w = cache.aggregated.t_matmul(&delta)?;
        let grad_in = delta.matmul_t(&layer.weight)?;
        Ok((grad_w, grad_in))
    }

    fn layer(&self, l: usize) -> Result<&Layer<T>> {
        self.layers
            .get(l)
            .ok_or_else(|| Error::invalid(format!("layer {l} out of range")))
    }
}

pub fn activate<T: Scalar>(pre: &Matrix<T>, act: Activation) -> Matrix<T> {
    match act {
        // NaN passes through so divergence stays visible downstream
        Activation::Relu => pre.map(|x| {
            if x > T::zero() || x.is_nan() {
                x
            } else {
                T::zero()
            }
        }),
        Activation::None => pre.clone(),
    }
}

fn activation_backward<T: Scalar>(pre: &Matrix<T>, grad: &Matrix<T>, act: Activation) -> Matrix<T> {
    match act {
        Activation::None => grad.clone(),
        Activation::Relu => {
            let data = pre
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
                .collect();
            Matrix::from_vec(pre.rows(), pre.cols(), data).expect("same shape")
        }
    }
}
