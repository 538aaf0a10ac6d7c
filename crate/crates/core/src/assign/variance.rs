//! Per-layer upper bound on the weight-gradient variance that message
//! quantization introduces.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::graph::{owner_map, AggCoeffs, Graph, NodeId, Partition};
use crate::quant::BitWidth;

use super::plan::BitWidthPlan;
use super::stats::{InstanceKey, MessageStat, TraceStats};

/// A cross-device edge as seen by the aggregating device: `consumer` (owned
/// by `dst`) aggregates the message of `node` (owned by `src`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemoteEdge {
    pub src: usize,
    pub dst: usize,
    pub node: NodeId,
    pub consumer: NodeId,
    pub alpha: f64,
}

pub fn remote_edges(g: &Graph, coeffs: &AggCoeffs, parts: &[Partition]) -> Vec<RemoteEdge> {
    let owner = owner_map(parts, g.num_nodes());
    let mut out = Vec::new();
    for p in parts {
        for &v in &p.owned_nodes {
            for (&u, &alpha) in g.neighbors(v).iter().zip(coeffs.neighbor_coeffs(v)) {
                if owner[u] != p.device_id {
                    out.push(RemoteEdge {
                        src: owner[u],
                        dst: p.device_id,
                        node: u,
                        consumer: v,
                        alpha,
                    });
                }
            }
        }
    }
    out
}

/// Bounds on `‖h̄_v‖` (`m`) and on the gradient w.r.t. a layer's output (`n`).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormBounds {
    pub m: f64,
    pub n: f64,
}

/// `D · S² / 6` with `S = range / (2^b − 1)`: the expected squared error of
/// quantizing the message at `bits`, assuming uniform fractional parts.
pub fn message_variance(stat: &MessageStat, bits: BitWidth) -> f64 {
    let range = stat.max - stat.min;
    let s = range / f64::from(bits.max_code());
    stat.dim as f64 * s * s / 6.0
}

fn instance_messages<'a>(
    stats: &'a TraceStats,
    plan: &'a BitWidthPlan,
    key: InstanceKey,
) -> Result<impl Iterator<Item = (usize, usize, &'a MessageStat, BitWidth)> + 'a> {
    let inst = stats
        .instances
        .get(&key)
        .ok_or_else(|| Error::invalid(format!("no traces for {key}")))?;
    let pplan = plan
        .instance(key)
        .ok_or_else(|| Error::invalid(format!("plan has no entry for {key}")))?;
    let mut rows = Vec::new();
    for p in &inst.pairs {
        let pp = pplan.pair(p.src, p.dst).ok_or_else(|| {
            Error::invalid(format!("plan has no pair {} -> {} in {key}", p.src, p.dst))
        })?;
        if pp.message_bits.len() != p.messages.len() {
            return Err(Error::invalid(format!(
                "plan and traces disagree on {} -> {} in {key}",
                p.src, p.dst
            )));
        }
        for (m, &b) in p.messages.iter().zip(&pp.message_bits) {
            rows.push((p.src, p.dst, m, b));
        }
    }
    Ok(rows.into_iter())
}

/// `Q^l` for every layer `l` (0-based weight index).
///
/// For each node `v`: `A_v = Σ_{k∈N_R(v)} α²_{k,v} D_k S_k² / 6` over the
/// quantized inputs of layer `l`, and `B_v` is the same quantity for the
/// gradient partials of `v`'s layer-`l` output that remote devices send back
/// (zero for the last layer). Then `Q^l = Σ_v A_v·B_v + M²·B_v + N²·A_v`.
pub fn variance_bound_q(
    stats: &TraceStats,
    plan: &BitWidthPlan,
    edges: &[RemoteEdge],
    num_layers: usize,
    bounds: &[NormBounds],
) -> Result<Vec<f64>> {
    if bounds.len() != num_layers {
        return Err(Error::invalid(format!(
            "{} norm bounds for {num_layers} layers",
            bounds.len()
        )));
    }
    let mut out = Vec::with_capacity(num_layers);
    for (l, nb) in bounds.iter().enumerate() {
        if edges.is_empty() {
            out.push(0.0);
            continue;
        }
        let mut ab: BTreeMap<NodeId, (f64, f64)> = BTreeMap::new();

        let mut fwd: HashMap<(usize, usize, NodeId), f64> = HashMap::new();
        for (s, d, m, b) in instance_messages(stats, plan, InstanceKey::forward(l))? {
            fwd.insert((s, d, m.node), message_variance(m, b));
        }
        for e in edges {
            let var = fwd.get(&(e.src, e.dst, e.node)).ok_or_else(|| {
                Error::invalid(format!(
                    "no trace of node {} for {} -> {} at layer {l}",
                    e.node, e.src, e.dst
                ))
            })?;
            ab.entry(e.consumer).or_default().0 += e.alpha * e.alpha * var;
        }

        if l + 1 < num_layers {
            for (_, _, m, b) in instance_messages(stats, plan, InstanceKey::backward(l + 1))? {
                ab.entry(m.node).or_default().1 += m.sum_alpha_sq * message_variance(m, b);
            }
        }

        let m2 = nb.m * nb.m;
        let n2 = nb.n * nb.n;
        out.push(ab.values().map(|&(a, b)| a * b + m2 * b + n2 * a).sum());
    }
    Ok(out)
}
