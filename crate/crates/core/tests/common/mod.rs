#![allow(dead_code)]

use adaqp_core::assign::{AssignmentProblem, GroupSpec, PairGroups};
use adaqp_core::comm::CostModel;
use adaqp_core::graph::{Graph, NodeId};
use adaqp_core::tensor::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph with Gaussian-ish features, random labels, and a
/// mask split that keeps every set non-empty.
pub fn random_graph(n: usize, p: f64, feat_dim: usize, classes: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let feats: Vec<f64> = (0..n * feat_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            if i < classes {
                i
            } else {
                r.gen_range(0..classes)
            }
        })
        .collect();
    let train: Vec<bool> = (0..n).map(|i| i % 5 < 3).collect();
    let val: Vec<bool> = (0..n).map(|i| i % 5 == 3).collect();
    let test: Vec<bool> = (0..n).map(|i| i % 5 == 4).collect();
    Graph::from_edges(
        n,
        &edges,
        Matrix::from_vec(n, feat_dim, feats).unwrap(),
        labels,
        [train, val, test],
    )
    .unwrap()
}

/// Random assignment instance with `pairs` device pairs and `groups` groups
/// spread over them (every pair gets at least one).
pub fn random_problem(pairs: usize, groups: usize, seed: u64) -> (AssignmentProblem, CostModel) {
    assert!(groups >= pairs);
    let mut r = rng(seed);
    let n = pairs + 1;
    let mut cost = CostModel::uniform(n, 1.0, 0.0).unwrap();
    let mut list: Vec<PairGroups> = (0..pairs)
        .map(|i| {
            let (src, dst) = (i, (i + 1) % n);
            cost.set(src, dst, r.gen_range(0.5..2.0), r.gen_range(0.0..20.0))
                .unwrap();
            PairGroups {
                src,
                dst,
                groups: Vec::new(),
            }
        })
        .collect();
    for g in 0..groups {
        let p = if g < pairs { g } else { r.gen_range(0..pairs) };
        list[p].groups.push(GroupSpec {
            beta: r.gen_range(0.0..10.0) * 10f64.powi(r.gen_range(0..3)),
            dim: 8 * r.gen_range(1..6),
        });
    }
    (AssignmentProblem { pairs: list }, cost)
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` of the
/// distributed engine's weight gradients against central differences of its
/// own full-precision loss.
pub fn gradient_check(
    g: &Graph,
    parts: usize,
    agg: adaqp_core::graph::AggMode,
    dims: &[usize],
    seed: u64,
) -> f64 {
    use adaqp_core::graph::partition_graph;
    use adaqp_core::train::{DistributedTrainer, PrecisionMode, TrainerOptions};

    let mut opts = TrainerOptions::new(dims.to_vec(), PrecisionMode::Fp, seed);
    opts.agg = agg;
    let cost = CostModel::uniform(parts, 0.0, 0.0).unwrap();
    let mut t =
        DistributedTrainer::new(g, partition_graph(g, parts, seed).unwrap(), cost, opts).unwrap();
    let analytic = t.compute_gradients(0).unwrap().grads;
    let weights: Vec<Matrix<f64>> = t.model().weights().into_iter().cloned().collect();
    let eps = 1e-6;
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for l in 0..weights.len() {
        for k in 0..weights[l].data().len() {
            let mut loss_at = |delta: f64| {
                let mut w = weights.clone();
                w[l].data_mut()[k] += delta;
                t.set_weights(&w).unwrap();
                t.compute_gradients(0).unwrap().loss
            };
            let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            let a = analytic[l].data()[k];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300)
}
