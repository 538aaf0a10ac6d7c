use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::io::DatasetFiles;
use crate::graph::{Graph, NodeId};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Load from a directory in the on-disk layout of [`DatasetFiles`].
    File,
    /// Stochastic block model with Gaussian class features.
    Sbm,
    /// Degree-corrected SBM with heavy-tailed degrees and sparse binary
    /// bag-of-words features.
    CitationLike,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "file" => Ok(DatasetKind::File),
            "sbm" => Ok(DatasetKind::Sbm),
            "citation" | "citation_like" | "citation-like" => Ok(DatasetKind::CitationLike),
            other => Err(format!("unknown dataset kind '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Directory for [`DatasetKind::File`].
    pub path: Option<PathBuf>,
    pub nodes: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    pub classes: usize,
    /// Standard deviation of per-node feature noise around the class centroid.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    /// The 2000-node, 4-community desk benchmark.
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Sbm,
            path: None,
            nodes: 2000,
            communities: 4,
            p_intra: 0.016,
            p_inter: 0.002,
            feature_dim: 64,
            classes: 4,
            feature_noise: 4.0,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind == DatasetKind::File {
            return match &self.path {
                Some(_) => Ok(()),
                None => Err(Error::invalid("file dataset needs a path")),
            };
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_intra) || !prob(self.p_inter) {
            return Err(Error::invalid(format!(
                "edge probabilities must lie in [0, 1], got {} and {}",
                self.p_intra, self.p_inter
            )));
        }
        if self.classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if self.communities < self.classes {
            return Err(Error::invalid(format!(
                "{} communities cannot cover {} classes",
                self.communities, self.classes
            )));
        }
        if self.nodes < self.communities {
            return Err(Error::invalid("fewer nodes than communities"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::invalid(
                "feature noise must be a finite non-negative number",
            ));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Graph> {
        match self.kind {
            DatasetKind::File => {
                self.validate()?;
                DatasetFiles::in_dir(self.path.as_ref().expect("validated")).load()
            }
            _ => generate_synthetic(self),
        }
    }
}

/// Builds a synthetic graph; identical specs give identical graphs.
///
/// Nodes are assigned to equal-size communities by a seeded shuffle;
/// community `c` carries class `c mod classes`. Splits are 60/20/20 by a
/// second seeded shuffle.
pub fn generate_synthetic(spec: &DatasetSpec) -> Result<Graph> {
    spec.validate()?;
    if spec.kind == DatasetKind::File {
        return Err(Error::invalid(
            "generate_synthetic needs a synthetic dataset kind",
        ));
    }
    let n = spec.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut order: Vec<NodeId> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut community = vec![0usize; n];
    for (i, &v) in order.iter().enumerate() {
        community[v] = i % spec.communities;
    }
    let labels: Vec<usize> = community.iter().map(|&c| c % spec.classes).collect();

    let edges = match spec.kind {
        DatasetKind::Sbm => sbm_edges(&community, spec, &mut rng),
        _ => degree_corrected_edges(&community, spec, &mut rng)?,
    };
    let features = match spec.kind {
        DatasetKind::Sbm => gaussian_features(&labels, spec, &mut rng),
        _ => bag_of_words_features(&labels, spec, &mut rng),
    };

    let mut split: Vec<NodeId> = (0..n).collect();
    split.shuffle(&mut rng);
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let mut masks = [vec![false; n], vec![false; n], vec![false; n]];
    for (i, &v) in split.iter().enumerate() {
        let which = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        masks[which][v] = true;
    }
    Graph::from_edges(n, &edges, features, labels, masks)
}

/// Samples each block pair with geometric skips, so cost scales with the
/// number of edges rather than `n²`.
fn sbm_edges(
    community: &[usize],
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<(NodeId, NodeId)> {
    let mut members: Vec<Vec<NodeId>> = vec![Vec::new(); spec.communities];
    for (v, &c) in community.iter().enumerate() {
        members[c].push(v);
    }
    let mut edges = Vec::new();
    for a in 0..spec.communities {
        for b in a..spec.communities {
            let p = if a == b { spec.p_intra } else { spec.p_inter };
            if p <= 0.0 {
                continue;
            }
            let (ma, mb) = (&members[a], &members[b]);
            // linear index over the pair set of this block
            let total: u64 = if a == b {
                (ma.len() as u64) * (ma.len() as u64).saturating_sub(1) / 2
            } else {
                ma.len() as u64 * mb.len() as u64
            };
            let skip = Geometric::new(p).expect("p in (0, 1]");
            let mut idx: u64 = skip.sample(rng);
            while idx < total {
                let (u, v) = if a == b {
                    triangle_pair(idx, ma)
                } else {
                    let w = mb.len() as u64;
                    (ma[(idx / w) as usize], mb[(idx % w) as usize])
                };
                edges.push((u, v));
                idx += 1 + skip.sample(rng);
            }
        }
    }
    edges
}

/// Maps `idx` to the `idx`-th pair `(i, j)`, `i < j`, of `members` in
/// row-major upper-triangle order.
fn triangle_pair(idx: u64, members: &[NodeId]) -> (NodeId, NodeId) {
    let m = members.len() as u64;
    // row i holds m-1-i pairs; find the row by walking the closed form
    let mut lo = 0u64;
    let mut hi = m - 1;
    let start = |i: u64| i * (2 * m - i - 1) / 2;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if start(mid) <= idx {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let j = lo + 1 + (idx - start(lo));
    (members[lo as usize], members[j as usize])
}

fn degree_corrected_edges(
    community: &[usize],
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(NodeId, NodeId)>> {
    let n = community.len();
    let pareto = Pareto::new(1.0, 2.5).map_err(|e| Error::invalid(e.to_string()))?;
    let raw: Vec<f64> = (0..n).map(|_| pareto.sample(rng)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let weight: Vec<f64> = raw.iter().map(|w| w / mean).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let base = if community[u] == community[v] {
                spec.p_intra
            } else {
                spec.p_inter
            };
            let p = (base * weight[u] * weight[v]).min(1.0);
            if p > 0.0 && rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Ok(edges)
}

fn gaussian_features(labels: &[usize], spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let centroids: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.feature_dim).map(|_| std.sample(rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(labels.len() * spec.feature_dim);
    for &y in labels {
        for &c in &centroids[y] {
            data.push(c + spec.feature_noise * std.sample(rng));
        }
    }
    Matrix::from_vec(labels.len(), spec.feature_dim, data).expect("sized above")
}

/// Each class prefers its own slice of the vocabulary; nodes draw about
/// `feature_dim / 8` words, a fraction `1/(1+noise)` from their class slice.
fn bag_of_words_features(
    labels: &[usize],
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
) -> Matrix<f64> {
    let f = spec.feature_dim;
    let words = (f / 8).max(1);
    let slice = (f / spec.classes).max(1);
    let p_class = 1.0 / (1.0 + spec.feature_noise);
    let mut m = Matrix::zeros(labels.len(), f);
    for (v, &y) in labels.iter().enumerate() {
        let row = m.row_mut(v);
        for _ in 0..words {
            let w = if rng.gen::<f64>() < p_class {
                (y * slice + rng.gen_range(0..slice)).min(f - 1)
            } else {
                rng.gen_range(0..f)
            };
            row[w] = 1.0;
        }
    }
    m
}
