use serde::{Deserialize, Serialize};

use super::csr::{Graph, NodeId};

/// Neighborhood normalization used by the weighted-sum layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggMode {
    /// `1/√((d_u+1)(d_v+1))`
    Gcn,
    /// `1/(d_v+1)`
    SageMean,
}

impl std::str::FromStr for AggMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(AggMode::Gcn),
            "sage" | "sage_mean" => Ok(AggMode::SageMean),
            other => Err(format!("unknown aggregation mode '{other}'")),
        }
    }
}

/// Aggregation coefficient `α_{u,v}`: the weight node `u`'s embedding carries
/// in node `v`'s aggregate, for `u ∈ {v} ∪ N(v)`.
///
/// Neighbor coefficients are stored aligned with `Graph::neighbors(v)`.
#[derive(Clone, Debug)]
pub struct AggCoeffs {
    mode: AggMode,
    self_coeff: Vec<f64>,
    offsets: Vec<usize>,
    neighbor_coeff: Vec<f64>,
}

pub fn compute_coeffs(g: &Graph, mode: AggMode) -> AggCoeffs {
    let n = g.num_nodes();
    let mut self_coeff = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbor_coeff = Vec::with_capacity(2 * g.num_edges());
    offsets.push(0);
    for v in 0..n {
        let dv = g.degree(v) as f64 + 1.0;
        match mode {
            AggMode::Gcn => {
                self_coeff.push(1.0 / dv);
                for &u in g.neighbors(v) {
                    let du = g.degree(u) as f64 + 1.0;
                    neighbor_coeff.push(1.0 / (du * dv).sqrt());
                }
            }
            AggMode::SageMean => {
                self_coeff.push(1.0 / dv);
                neighbor_coeff.extend(std::iter::repeat_n(1.0 / dv, g.degree(v)));
            }
        }
        offsets.push(neighbor_coeff.len());
    }
    AggCoeffs {
        mode,
        self_coeff,
        offsets,
        neighbor_coeff,
    }
}

impl AggCoeffs {
    pub fn mode(&self) -> AggMode {
        self.mode
    }

    /// `α_{v,v}`.
    #[inline]
    pub fn self_coeff(&self, v: NodeId) -> f64 {
        self.self_coeff[v]
    }

    /// `α_{u,v}` for each `u` in `g.neighbors(v)`, same order.
    #[inline]
    pub fn neighbor_coeffs(&self, v: NodeId) -> &[f64] {
        &self.neighbor_coeff[self.offsets[v]..self.offsets[v + 1]]
    }

    /// `α_{u,v}`, or `None` if `u ∉ {v} ∪ N(v)`.
    pub fn get(&self, g: &Graph, u: NodeId, v: NodeId) -> Option<f64> {
        if u == v {
            return Some(self.self_coeff[v]);
        }
        g.neighbors(v)
            .binary_search(&u)
            .ok()
            .map(|i| self.neighbor_coeffs(v)[i])
    }

    /// `{v} ∪ N(v)` in ascending id order, paired with `α_{u,v}`.
    pub fn closed_neighborhood<'a>(
        &'a self,
        g: &'a Graph,
        v: NodeId,
    ) -> impl Iterator<Item = (NodeId, f64)> + 'a {
        let nbrs = g.neighbors(v);
        let split = nbrs.partition_point(|&u| u < v);
        let coeffs = self.neighbor_coeffs(v);
        nbrs[..split]
            .iter()
            .copied()
            .zip(coeffs[..split].iter().copied())
            .chain(std::iter::once((v, self.self_coeff[v])))
            .chain(
                nbrs[split..]
                    .iter()
                    .copied()
                    .zip(coeffs[split..].iter().copied()),
            )
    }
}
