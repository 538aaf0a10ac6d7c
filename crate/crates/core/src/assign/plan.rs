use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{packed_len, BitWidth, HEADER_LEN};

use super::stats::{compute_beta, InstanceKey, InstanceStats};

/// Message dimensions of every pair of every exchange, in wire order:
/// `layout[key][(src, dst)] = [D_k, ...]`.
pub type PlanLayout = BTreeMap<InstanceKey, BTreeMap<(usize, usize), Vec<usize>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    /// Wire positions of the group's messages.
    pub members: Vec<usize>,
    pub bits: BitWidth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPlan {
    pub src: usize,
    pub dst: usize,
    /// Message dimensions in wire order.
    pub dims: Vec<usize>,
    pub groups: Vec<GroupPlan>,
    /// Bit-width of each message in wire order (derived from `groups`).
    pub message_bits: Vec<BitWidth>,
}

impl PairPlan {
    pub fn new(src: usize, dst: usize, dims: Vec<usize>, groups: Vec<GroupPlan>) -> Result<Self> {
        let mut message_bits: Vec<Option<BitWidth>> = vec![None; dims.len()];
        for g in &groups {
            for &m in &g.members {
                match message_bits.get_mut(m) {
                    Some(slot @ None) => *slot = Some(g.bits),
                    Some(Some(_)) => {
                        return Err(Error::invalid(format!(
                            "message {m} of {src}->{dst} is in two groups"
                        )))
                    }
                    None => {
                        return Err(Error::invalid(format!(
                            "group member {m} out of range for {src}->{dst}"
                        )))
                    }
                }
            }
        }
        let message_bits = message_bits
            .into_iter()
            .enumerate()
            .map(|(m, b)| {
                b.ok_or_else(|| {
                    Error::invalid(format!("message {m} of {src}->{dst} has no bit-width"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairPlan {
            src,
            dst,
            dims,
            groups,
            message_bits,
        })
    }

    /// Every message at one width, one group per message.
    pub fn uniform(src: usize, dst: usize, dims: Vec<usize>, bits: BitWidth) -> Self {
        let groups = (0..dims.len())
            .map(|m| GroupPlan {
                members: vec![m],
                bits,
            })
            .collect();
        let message_bits = vec![bits; dims.len()];
        PairPlan {
            src,
            dst,
            dims,
            groups,
            message_bits,
        }
    }

    /// Wire bytes per bit-width (`[2, 4, 8]` order), headers included.
    pub fn buffer_sizes(&self) -> [u64; 3] {
        let mut out = [0u64; 3];
        for (&d, &b) in self.dims.iter().zip(&self.message_bits) {
            let slot = BitWidth::ALL
                .iter()
                .position(|&w| w == b)
                .expect("valid width");
            out[slot] += (HEADER_LEN + packed_len(d, b)) as u64;
        }
        out
    }

    pub fn wire_bytes(&self) -> u64 {
        self.buffer_sizes().iter().sum()
    }

    /// `Σ β_k / (2^{b_k} − 1)²` over this pair's messages.
    pub fn variance(&self, betas: &[f64]) -> f64 {
        betas
            .iter()
            .zip(&self.message_bits)
            .map(|(b, w)| b * w.variance_factor())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancePlan {
    pub key: InstanceKey,
    /// Sorted by `(src, dst)`.
    pub pairs: Vec<PairPlan>,
}

impl InstancePlan {
    pub fn pair(&self, src: usize, dst: usize) -> Option<&PairPlan> {
        self.pairs
            .binary_search_by_key(&(src, dst), |p| (p.src, p.dst))
            .ok()
            .map(|i| &self.pairs[i])
    }

    /// Variance objective of this plan under the given traces.
    pub fn variance(&self, stats: &InstanceStats) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.pairs {
            let betas = pair_betas(stats, p)?;
            total += p.variance(&betas);
        }
        Ok(total)
    }

    /// Expected variance objective when every message draws its width
    /// uniformly from {2, 4, 8}.
    pub fn expected_uniform_variance(stats: &InstanceStats) -> f64 {
        let factor = BitWidth::ALL
            .iter()
            .map(|b| b.variance_factor())
            .sum::<f64>()
            / 3.0;
        stats
            .pairs
            .iter()
            .flat_map(|p| &p.messages)
            .map(|m| compute_beta(m) * factor)
            .sum()
    }
}

fn pair_betas(stats: &InstanceStats, p: &PairPlan) -> Result<Vec<f64>> {
    if p.dims.is_empty() {
        return Ok(Vec::new());
    }
    let traced = stats.pair(p.src, p.dst).ok_or_else(|| {
        Error::invalid(format!(
            "no traces for {} -> {} in {}",
            p.src, p.dst, stats.key
        ))
    })?;
    if traced.messages.len() != p.dims.len() {
        return Err(Error::invalid(format!(
            "{} -> {} in {}: {} traced messages, plan has {}",
            p.src,
            p.dst,
            stats.key,
            traced.messages.len(),
            p.dims.len()
        )));
    }
    Ok(traced.messages.iter().map(compute_beta).collect())
}

/// Bit-widths of every exchange, shared by all devices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitWidthPlan {
    pub version: u64,
    /// Sorted by key.
    pub instances: Vec<InstancePlan>,
}

impl BitWidthPlan {
    pub fn uniform(layout: &PlanLayout, bits: BitWidth) -> Self {
        Self::from_fn(layout, |_, _, _| bits)
    }

    /// Each message independently draws its width uniformly from {2, 4, 8}.
    pub fn random<R: Rng>(layout: &PlanLayout, rng: &mut R) -> Self {
        Self::from_fn(layout, |_, _, _| BitWidth::ALL[rng.gen_range(0..3)])
    }

    fn from_fn(
        layout: &PlanLayout,
        mut pick: impl FnMut(InstanceKey, (usize, usize), usize) -> BitWidth,
    ) -> Self {
        let instances = layout
            .iter()
            .map(|(&key, pairs)| InstancePlan {
                key,
                pairs: pairs
                    .iter()
                    .map(|(&(s, d), dims)| {
                        let groups: Vec<GroupPlan> = (0..dims.len())
                            .map(|m| GroupPlan {
                                members: vec![m],
                                bits: pick(key, (s, d), m),
                            })
                            .collect();
                        PairPlan::new(s, d, dims.clone(), groups)
                            .expect("singleton groups cover all messages")
                    })
                    .collect(),
            })
            .collect();
        BitWidthPlan {
            version: 0,
            instances,
        }
    }

    pub fn instance(&self, key: InstanceKey) -> Option<&InstancePlan> {
        self.instances
            .binary_search_by_key(&key, |i| i.key)
            .ok()
            .map(|i| &self.instances[i])
    }

    pub fn pair(&self, key: InstanceKey, src: usize, dst: usize) -> Option<&PairPlan> {
        self.instance(key).and_then(|i| i.pair(src, dst))
    }

    /// Replaces one instance's plan (keeps order).
    pub fn set_instance(&mut self, plan: InstancePlan) {
        match self.instances.binary_search_by_key(&plan.key, |i| i.key) {
            Ok(i) => self.instances[i] = plan,
            Err(i) => self.instances.insert(i, plan),
        }
    }

    /// Checks the plan describes exactly the given traffic.
    pub fn check_layout(&self, layout: &PlanLayout) -> Result<()> {
        if self.instances.len() != layout.len() {
            return Err(Error::invalid("plan and layout cover different exchanges"));
        }
        for inst in &self.instances {
            let pairs = layout
                .get(&inst.key)
                .ok_or_else(|| Error::invalid(format!("plan has unknown exchange {}", inst.key)))?;
            if pairs.len() != inst.pairs.len() {
                return Err(Error::invalid(format!("pair sets differ for {}", inst.key)));
            }
            for p in &inst.pairs {
                match pairs.get(&(p.src, p.dst)) {
                    Some(dims) if *dims == p.dims => {}
                    _ => {
                        return Err(Error::invalid(format!(
                            "{} -> {} of {} disagrees with layout",
                            p.src, p.dst, inst.key
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}
