//! Dense algebra and the weighted-sum GNN layer with hand-written backward passes.

mod aggregate;
mod loss;
mod matrix;
mod model;
mod optim;

pub use aggregate::{aggregate, AggregationPlan, SparseRows};
pub use loss::{correct_predictions, loss_and_grad, scaled_loss_and_grad};
pub use matrix::Matrix;
pub use model::{activate, Activation, GnnModel, Layer, LayerCache};
pub use optim::{OptimizerKind, OptimizerState};
