use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Embeddings (or input features) moving to the devices that aggregate them.
    Forward,
    /// Partial gradients returned to the owners of the forwarded nodes.
    Backward,
}

/// One exchange in the training step: the forward or backward traffic of a
/// layer (0-based). Forward traffic of layer `l` carries that layer's input
/// embeddings; backward traffic of layer `l` carries gradients w.r.t. them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceKey {
    pub layer: usize,
    pub direction: Direction,
}

impl InstanceKey {
    pub fn forward(layer: usize) -> Self {
        InstanceKey {
            layer,
            direction: Direction::Forward,
        }
    }

    pub fn backward(layer: usize) -> Self {
        InstanceKey {
            layer,
            direction: Direction::Backward,
        }
    }
}

impl std::fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = match self.direction {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        };
        write!(f, "L{}/{d}", self.layer)
    }
}

/// Traced statistics of one message.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageStat {
    /// Global id of the node the message describes.
    pub node: NodeId,
    pub dim: usize,
    pub min: f64,
    pub max: f64,
    /// `Σ_{v∈N_T(k)} α²_{k,v}` over the message's consumers on the target device.
    pub sum_alpha_sq: f64,
}

/// `β_k = Σα² · D_k · (max − min)² / 6`.
///
/// A message quantized to `b` bits contributes `β_k / (2^b − 1)²` to the
/// gradient variance.
pub fn compute_beta(s: &MessageStat) -> f64 {
    let range = s.max - s.min;
    s.sum_alpha_sq * s.dim as f64 * range * range / 6.0
}

impl MessageStat {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.max >= self.min && self.sum_alpha_sq > 0.0) {
            return Err(Error::invalid(format!(
                "invalid trace for node {}: {self:?}",
                self.node
            )));
        }
        Ok(())
    }

    /// Widens the observed range with a new observation of the same message.
    pub fn observe(&mut self, min: f64, max: f64) {
        self.min = self.min.min(min);
        self.max = self.max.max(max);
    }
}

/// Messages sent over one ordered device pair, in wire order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub src: usize,
    pub dst: usize,
    pub messages: Vec<MessageStat>,
}

/// All traced traffic of one exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub key: InstanceKey,
    /// Sorted by `(src, dst)`.
    pub pairs: Vec<PairStats>,
}

impl InstanceStats {
    pub fn pair(&self, src: usize, dst: usize) -> Option<&PairStats> {
        self.pairs
            .binary_search_by_key(&(src, dst), |p| (p.src, p.dst))
            .ok()
            .map(|i| &self.pairs[i])
    }

    pub fn num_messages(&self) -> usize {
        self.pairs.iter().map(|p| p.messages.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.pairs.windows(2) {
            if (w[0].src, w[0].dst) >= (w[1].src, w[1].dst) {
                return Err(Error::invalid("instance pairs must be sorted and unique"));
            }
        }
        for p in &self.pairs {
            for m in &p.messages {
                m.validate()?;
            }
        }
        Ok(())
    }
}

/// Traces gathered by one device (or merged across devices) over a period.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub instances: BTreeMap<InstanceKey, InstanceStats>,
}

impl TraceStats {
    /// Records one observed message, widening the range if it was seen before.
    ///
    /// `position` is the message's index in the pair's wire order.
    pub fn record(
        &mut self,
        key: InstanceKey,
        src: usize,
        dst: usize,
        position: usize,
        stat: MessageStat,
    ) {
        let inst = self.instances.entry(key).or_insert_with(|| InstanceStats {
            key,
            pairs: Vec::new(),
        });
        let idx = match inst
            .pairs
            .binary_search_by_key(&(src, dst), |p| (p.src, p.dst))
        {
            Ok(i) => i,
            Err(i) => {
                inst.pairs.insert(
                    i,
                    PairStats {
                        src,
                        dst,
                        messages: Vec::new(),
                    },
                );
                i
            }
        };
        let msgs = &mut inst.pairs[idx].messages;
        if position < msgs.len() {
            msgs[position].observe(stat.min, stat.max);
        } else {
            debug_assert_eq!(position, msgs.len(), "messages are recorded in wire order");
            msgs.push(stat);
        }
    }

    /// Master-side gather: combines per-device traces. Pairs are disjoint
    /// across devices because each device traces only what it sends.
    pub fn merge(parts: impl IntoIterator<Item = TraceStats>) -> Result<TraceStats> {
        let mut out = TraceStats::default();
        for part in parts {
            for (key, inst) in part.instances {
                let dst = out.instances.entry(key).or_insert_with(|| InstanceStats {
                    key,
                    pairs: Vec::new(),
                });
                for p in inst.pairs {
                    match dst
                        .pairs
                        .binary_search_by_key(&(p.src, p.dst), |q| (q.src, q.dst))
                    {
                        Ok(_) => {
                            return Err(Error::protocol(format!(
                                "pair {} -> {} of {key} traced by more than one device",
                                p.src, p.dst
                            )))
                        }
                        Err(i) => dst.pairs.insert(i, p),
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}
