//! Dataset descriptions and synthetic desk-scale graphs.

mod synthetic;

pub use synthetic::{generate_synthetic, DatasetKind, DatasetSpec};
