use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub type NodeId = usize;

/// Which node set a mask refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Undirected graph in compressed-row form, with node features, labels and
/// train/val/test masks.
///
/// Self-loops are never stored; the self contribution is added by the
/// aggregation coefficients.
#[derive(Clone, Debug)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    features: Matrix<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    train: Vec<bool>,
    val: Vec<bool>,
    test: Vec<bool>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are symmetrized, deduplicated and
    /// self-loops dropped.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(NodeId, NodeId)],
        features: Matrix<f64>,
        labels: Vec<usize>,
        masks: [Vec<bool>; 3],
    ) -> Result<Self> {
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Self::from_csr(offsets, neighbors, features, labels, masks)
    }

    fn from_csr(
        offsets: Vec<usize>,
        neighbors: Vec<NodeId>,
        features: Matrix<f64>,
        labels: Vec<usize>,
        masks: [Vec<bool>; 3],
    ) -> Result<Self> {
        let n = offsets.len() - 1;
        if features.rows() != n {
            return Err(Error::invalid(format!(
                "feature matrix has {} rows for {n} nodes",
                features.rows()
            )));
        }
        if !features.all_finite() {
            return Err(Error::invalid("features contain non-finite values"));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        let [train, val, test] = masks;
        for (name, m) in [("train", &train), ("val", &val), ("test", &test)] {
            if m.len() != n {
                return Err(Error::invalid(format!(
                    "{name} mask has length {} for {n} nodes",
                    m.len()
                )));
            }
        }
        for v in 0..n {
            let c = train[v] as u8 + val[v] as u8 + test[v] as u8;
            if c > 1 {
                return Err(Error::invalid(format!(
                    "node {v} appears in more than one split"
                )));
            }
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(Graph {
            offsets,
            neighbors,
            features,
            labels,
            num_classes,
            train,
            val,
            test,
        })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Sorted neighbor list of `v`.
    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn mask(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// All undirected edges as `(u, v)` with `u < v`.
    pub fn edge_list(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes() {
            out.extend(
                self.neighbors(u)
                    .iter()
                    .filter(|&&v| u < v)
                    .map(|&v| (u, v)),
            );
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Graph with zero features, class 0 everywhere, every node in train.
    pub fn plain(n: usize, edges: &[(NodeId, NodeId)], feat_dim: usize) -> Graph {
        Graph::from_edges(
            n,
            edges,
            Matrix::zeros(n, feat_dim),
            vec![0; n],
            [vec![true; n], vec![false; n], vec![false; n]],
        )
        .unwrap()
    }

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        plain(n, &edges, 1)
    }
}
