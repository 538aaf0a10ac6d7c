pub mod assign;
pub mod comm;
pub mod data;
pub mod error;
pub mod graph;
pub mod quant;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used by the engine.
pub type MatrixF64 = tensor::Matrix<f64>;
pub type MatrixF32 = tensor::Matrix<f32>;
pub type ModelF64 = tensor::GnnModel<f64>;
pub type ModelF32 = tensor::GnnModel<f32>;
pub type ReferenceTrainerF64<'g> = train::ReferenceTrainer<'g, f64>;
