//! Graph storage, partitioning and aggregation coefficients.

mod coeffs;
mod csr;
pub mod io;
mod partition;

pub use coeffs::{compute_coeffs, AggCoeffs, AggMode};
pub use csr::{Graph, NodeId, Split};
pub use partition::{
    owner_map, partition_graph, partitions_from_owner, split_local_remote, NeighborSplit, Partition,
};

#[cfg(test)]
pub(crate) use csr::fixtures;
