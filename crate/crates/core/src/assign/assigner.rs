use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comm::CostModel;
use crate::error::{Error, Result};

use super::group::group_and_order;
use super::plan::{BitWidthPlan, GroupPlan, InstancePlan, PairPlan};
use super::solver::{evaluate, solve_assignment, AssignmentProblem, Objective};
use super::stats::{InstanceKey, InstanceStats, TraceStats};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignerConfig {
    pub lambda: f64,
    /// Epochs between re-solves.
    pub period: usize,
    pub group_size: usize,
}

impl Default for AssignerConfig {
    fn default() -> Self {
        AssignerConfig {
            lambda: 0.5,
            period: 50,
            group_size: 4,
        }
    }
}

impl AssignerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "λ must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.period == 0 {
            return Err(Error::invalid("period must be at least 1"));
        }
        if self.group_size == 0 {
            return Err(Error::invalid("group size must be at least 1"));
        }
        Ok(())
    }

    /// Whether the assigner runs at the end of `epoch` (1-based).
    pub fn is_reassignment_epoch(&self, epoch: usize) -> bool {
        epoch > 0 && epoch.is_multiple_of(self.period)
    }
}

/// Result of solving one exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSolution {
    pub key: InstanceKey,
    pub plan: InstancePlan,
    /// Objective of the normalized problem the solver saw.
    pub normalized: Objective,
    /// Variance term in raw units (`Σ β_g / (2^b−1)²`).
    pub variance: f64,
    /// Longest predicted pair transfer in seconds.
    pub z: f64,
}

/// Groups, normalizes and solves one exchange.
pub fn solve_instance(
    stats: &InstanceStats,
    cost: &CostModel,
    cfg: &AssignerConfig,
) -> Result<InstanceSolution> {
    stats.validate()?;
    let groups = group_and_order(stats, cfg.group_size)?;
    let pairs: Vec<(usize, usize)> = stats.pairs.iter().map(|p| (p.src, p.dst)).collect();
    let problem = AssignmentProblem::from_groups(&pairs, &groups);
    let (scaled, scaled_cost) = problem.normalized(cost);
    let solution = solve_assignment(&scaled, &scaled_cost, cfg.lambda)?;
    let raw = evaluate(&problem, cost, cfg.lambda, &solution.bits);

    let pair_plans = stats
        .pairs
        .iter()
        .zip(groups.iter().zip(&solution.bits))
        .map(|(p, (gs, bits))| {
            let plans = gs
                .iter()
                .zip(bits)
                .map(|(g, &b)| GroupPlan {
                    members: g.members.clone(),
                    bits: b,
                })
                .collect();
            PairPlan::new(
                p.src,
                p.dst,
                p.messages.iter().map(|m| m.dim).collect(),
                plans,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InstanceSolution {
        key: stats.key,
        plan: InstancePlan {
            key: stats.key,
            pairs: pair_plans,
        },
        normalized: solution.objective,
        variance: raw.variance,
        z: raw.z,
    })
}

/// Master-side step: merge the per-device traces, solve every exchange
/// independently (in parallel), and return the next plan version.
///
/// Returns `None` when `epoch` is not a multiple of the period.
pub fn reassignment_round(
    epoch: usize,
    cfg: &AssignerConfig,
    traces: Vec<TraceStats>,
    current: &BitWidthPlan,
    cost: &CostModel,
) -> Result<Option<(BitWidthPlan, Vec<InstanceSolution>)>> {
    cfg.validate()?;
    if !cfg.is_reassignment_epoch(epoch) {
        return Ok(None);
    }
    let merged = TraceStats::merge(traces)?;
    for inst in &current.instances {
        let traced = merged.instances.get(&inst.key);
        for p in &inst.pairs {
            let n = traced
                .and_then(|t| t.pair(p.src, p.dst))
                .map_or(0, |t| t.messages.len());
            if n != p.dims.len() {
                return Err(Error::protocol(format!(
                    "{} -> {} of {}: traced {n} messages, plan expects {}",
                    p.src,
                    p.dst,
                    inst.key,
                    p.dims.len()
                )));
            }
        }
    }
    let solved: Vec<InstanceSolution> = merged
        .instances
        .par_iter()
        .filter(|(_, s)| s.num_messages() > 0)
        .map(|(_, s)| solve_instance(s, cost, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut next = current.clone();
    next.version = current.version + 1;
    for s in &solved {
        if current.instance(s.key).is_none() {
            return Err(Error::protocol(format!(
                "traces cover unknown exchange {}",
                s.key
            )));
        }
        next.set_instance(s.plan.clone());
    }
    Ok(Some((next, solved)))
}
