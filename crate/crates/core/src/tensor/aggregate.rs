use crate::error::{Error, Result};
use crate::graph::{AggCoeffs, Graph, NeighborSplit, NodeId, Partition};
use crate::scalar::Scalar;

use super::Matrix;

/// Sparse weighted-gather operator: output row `r` is `Σ coeff · input[col]`
/// over the row's terms, in stored order.
///
/// Columns index a virtual input made of `num_local` local rows followed by
/// `num_remote` remote rows, so one operator covers the local and remote
/// parts of an aggregation.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    coeffs: Vec<f64>,
    num_local: usize,
    num_remote: usize,
}

impl SparseRows {
    fn builder(num_local: usize, num_remote: usize) -> Self {
        SparseRows {
            offsets: vec![0],
            cols: Vec::new(),
            coeffs: Vec::new(),
            num_local,
            num_remote,
        }
    }

    fn push_term(&mut self, col: usize, coeff: f64) {
        self.cols.push(col as u32);
        self.coeffs.push(coeff);
    }

    fn finish_row(&mut self) {
        self.offsets.push(self.cols.len());
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_local(&self) -> usize {
        self.num_local
    }

    pub fn num_remote(&self) -> usize {
        self.num_remote
    }

    pub fn row_terms(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.cols[span.clone()]
            .iter()
            .map(|&c| c as usize)
            .zip(self.coeffs[span].iter().copied())
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    /// Total terms over `rows`, for cost accounting.
    pub fn nnz_of(&self, rows: &[usize]) -> usize {
        rows.iter().map(|&r| self.row_len(r)).sum()
    }

    /// Computes the listed output rows into `out` (same row indices).
    pub fn apply_rows<T: Scalar>(
        &self,
        rows: &[usize],
        local: &Matrix<T>,
        remote: &Matrix<T>,
        out: &mut Matrix<T>,
    ) -> Result<()> {
        self.check_inputs(local, remote)?;
        let dim = local.cols();
        if out.shape() != (self.num_rows(), dim) {
            return Err(Error::invalid(format!(
                "aggregation output is {:?}, expected ({}, {dim})",
                out.shape(),
                self.num_rows()
            )));
        }
        for &r in rows {
            let dst = out.row_mut(r);
            dst.fill(T::zero());
            for (c, a) in self.row_terms(r) {
                let src = if c < self.num_local {
                    local.row(c)
                } else {
                    remote.row(c - self.num_local)
                };
                let a = T::of(a);
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o += a * x;
                }
            }
        }
        Ok(())
    }

    /// Computes every output row.
    pub fn apply<T: Scalar>(&self, local: &Matrix<T>, remote: &Matrix<T>) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(self.num_rows(), local.cols());
        let all: Vec<usize> = (0..self.num_rows()).collect();
        self.apply_rows(&all, local, remote, &mut out)?;
        Ok(out)
    }

    fn check_inputs<T: Scalar>(&self, local: &Matrix<T>, remote: &Matrix<T>) -> Result<()> {
        if local.rows() != self.num_local || remote.rows() != self.num_remote {
            return Err(Error::invalid(format!(
                "aggregation expects {} local and {} remote rows, got {} and {}",
                self.num_local,
                self.num_remote,
                local.rows(),
                remote.rows()
            )));
        }
        if self.num_remote > 0 && remote.cols() != local.cols() {
            return Err(Error::invalid(format!(
                "local rows have dimension {} but remote rows have {}",
                local.cols(),
                remote.cols()
            )));
        }
        Ok(())
    }
}

/// Forward and backward gather operators for one device.
///
/// * `forward`: owned `v` ← `Σ_{u ∈ {v}∪N(v)} α_{u,v} h_u`, terms in ascending
///   global id so a single-device run sums in exactly the same order.
/// * `backward_local`: owned `u` ← `Σ_{v ∈ {u}∪N_L(u)} α_{u,v} g_v`.
/// * `backward_remote`: remote `k` ← `Σ_{v ∈ N_T(k)} α_{k,v} g_v`, the partial
///   gradient returned to `k`'s owner.
///
/// Remote rows are laid out as `remote_in[0] ++ remote_in[1] ++ ...`.
#[derive(Clone, Debug)]
pub struct AggregationPlan {
    pub forward: SparseRows,
    pub backward_local: SparseRows,
    pub backward_remote: SparseRows,
    /// First remote row of each source device.
    pub remote_offsets: Vec<usize>,
}

impl AggregationPlan {
    pub fn for_partition(g: &Graph, coeffs: &AggCoeffs, p: &Partition) -> Self {
        let n_local = p.owned_nodes.len();
        let mut remote_offsets = Vec::with_capacity(p.num_devices() + 1);
        let mut acc = 0;
        for list in &p.remote_in {
            remote_offsets.push(acc);
            acc += list.len();
        }
        remote_offsets.push(acc);
        let n_remote = acc;

        // global id -> virtual column
        let column_of = |u: NodeId| -> usize {
            if let Some(i) = p.local_index(u) {
                return i;
            }
            for (d, list) in p.remote_in.iter().enumerate() {
                if let Ok(j) = list.binary_search(&u) {
                    return n_local + remote_offsets[d] + j;
                }
            }
            unreachable!("neighbor {u} is neither owned nor received")
        };

        let mut forward = SparseRows::builder(n_local, n_remote);
        for &v in &p.owned_nodes {
            for (u, a) in coeffs.closed_neighborhood(g, v) {
                forward.push_term(column_of(u), a);
            }
            forward.finish_row();
        }

        let mut backward_local = SparseRows::builder(n_local, 0);
        for &u in &p.owned_nodes {
            for (v, _) in coeffs.closed_neighborhood(g, u) {
                if let Some(iv) = p.local_index(v) {
                    let a = coeffs
                        .get(g, u, v)
                        .expect("u is in v's closed neighborhood");
                    backward_local.push_term(iv, a);
                }
            }
            backward_local.finish_row();
        }

        let mut backward_remote = SparseRows::builder(n_local, 0);
        for list in &p.remote_in {
            for &k in list {
                for &v in g.neighbors(k) {
                    if let Some(iv) = p.local_index(v) {
                        let a = coeffs.get(g, k, v).expect("k is a neighbor of v");
                        backward_remote.push_term(iv, a);
                    }
                }
                backward_remote.finish_row();
            }
        }

        AggregationPlan {
            forward,
            backward_local,
            backward_remote,
            remote_offsets,
        }
    }

    pub fn num_remote(&self) -> usize {
        self.forward.num_remote()
    }
}

/// `h̄_v = Σ_{u∈{v}∪N_L(v)} α_{u,v} h_u + Σ_{k∈N_R(v)} α_{k,v} ĥ_k` for each owned
/// node, given explicit neighbor splits.
///
/// `remote_ids` names the rows of `dequantized_remote`. This is the direct
/// form of the aggregation; the engine uses the precompiled [`AggregationPlan`].
pub fn aggregate<T: Scalar>(
    g: &Graph,
    coeffs: &AggCoeffs,
    splits: &[NeighborSplit],
    local_embeddings: &Matrix<T>,
    remote_ids: &[NodeId],
    dequantized_remote: &Matrix<T>,
) -> Result<Matrix<T>> {
    if local_embeddings.rows() != splits.len() {
        return Err(Error::invalid(format!(
            "{} local rows for {} owned nodes",
            local_embeddings.rows(),
            splits.len()
        )));
    }
    if dequantized_remote.rows() != remote_ids.len() {
        return Err(Error::invalid("remote rows do not match remote ids"));
    }
    if !remote_ids.is_empty() && dequantized_remote.cols() != local_embeddings.cols() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: local {} vs remote {}",
            local_embeddings.cols(),
            dequantized_remote.cols()
        )));
    }
    let owned: Vec<NodeId> = splits.iter().map(|s| s.node).collect();
    let dim = local_embeddings.cols();
    let mut out = Matrix::zeros(splits.len(), dim);
    for (row, s) in splits.iter().enumerate() {
        let v = s.node;
        let dst = out.row_mut(row);
        let local_terms = std::iter::once(v).chain(s.local.iter().copied());
        for u in local_terms {
            let i = owned
                .binary_search(&u)
                .map_err(|_| Error::invalid(format!("local neighbor {u} is not owned")))?;
            let a = T::of(
                coeffs
                    .get(g, u, v)
                    .ok_or_else(|| Error::invalid("missing coefficient"))?,
            );
            for (o, &x) in dst.iter_mut().zip(local_embeddings.row(i)) {
                *o += a * x;
            }
        }
        for &k in &s.remote {
            let j = remote_ids.iter().position(|&r| r == k).ok_or_else(|| {
                Error::invalid(format!("remote neighbor {k} has no received row"))
            })?;
            let a = T::of(
                coeffs
                    .get(g, k, v)
                    .ok_or_else(|| Error::invalid("missing coefficient"))?,
            );
            for (o, &x) in dst.iter_mut().zip(dequantized_remote.row(j)) {
                *o += a * x;
            }
        }
    }
    Ok(out)
}
