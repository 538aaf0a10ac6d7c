//! Bit-width assignment for one exchange.
//!
//! Minimizes `λ·Σ_pairs Σ_groups β_g/(2^{b_g}−1)² + (1−λ)·Z` subject to
//! `θ_i·Σ_g D_g·b_g + γ_i ≤ Z` for every pair `i`, over `b_g ∈ {2,4,8}`.
//!
//! The exact solver exploits that pairs only interact through `Z`: for a
//! fixed `Z` every pair independently picks its minimum-variance assignment
//! within the time budget. Per pair, a knapsack-style DP over groups yields
//! the minimum variance for every reachable bit total; its lower envelope
//! gives the candidate `Z` values, and the best `Z` is found by sweeping them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::comm::CostModel;
use crate::error::{Error, Result};
use crate::quant::BitWidth;

use super::group::MessageGroup;

/// Largest instance the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_GROUPS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub beta: f64,
    pub dim: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGroups {
    pub src: usize,
    pub dst: usize,
    pub groups: Vec<GroupSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentProblem {
    pub pairs: Vec<PairGroups>,
}

impl AssignmentProblem {
    pub fn from_groups(pairs: &[(usize, usize)], groups: &[Vec<MessageGroup>]) -> Self {
        AssignmentProblem {
            pairs: pairs
                .iter()
                .zip(groups)
                .map(|(&(src, dst), gs)| PairGroups {
                    src,
                    dst,
                    groups: gs
                        .iter()
                        .map(|g| GroupSpec {
                            beta: g.beta,
                            dim: g.dim,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn num_groups(&self) -> usize {
        self.pairs.iter().map(|p| p.groups.len()).sum()
    }

    /// Rescales the two objectives to comparable magnitudes: β by the
    /// all-2-bit variance and costs by the all-8-bit `Z`. Returns the scaled
    /// problem and cost model; the assignment problem itself is unchanged in
    /// form.
    pub fn normalized(&self, cost: &CostModel) -> (AssignmentProblem, CostModel) {
        let all = |b: BitWidth| -> Vec<Vec<BitWidth>> {
            self.pairs.iter().map(|p| vec![b; p.groups.len()]).collect()
        };
        let v2 = evaluate(self, cost, 1.0, &all(BitWidth::B2)).variance;
        let z8 = evaluate(self, cost, 0.0, &all(BitWidth::B8)).z;
        let vs = if v2 > 0.0 { 1.0 / v2 } else { 1.0 };
        let zs = if z8 > 0.0 { 1.0 / z8 } else { 1.0 };
        let scaled = AssignmentProblem {
            pairs: self
                .pairs
                .iter()
                .map(|p| PairGroups {
                    src: p.src,
                    dst: p.dst,
                    groups: p
                        .groups
                        .iter()
                        .map(|g| GroupSpec {
                            beta: g.beta * vs,
                            dim: g.dim,
                        })
                        .collect(),
                })
                .collect(),
        };
        (scaled, cost.scaled(zs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    /// `Σ β_g / (2^b − 1)²`.
    pub variance: f64,
    /// Longest predicted pair transfer time.
    pub z: f64,
    /// `λ·variance + (1−λ)·z`.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `bits[pair][group]`.
    pub bits: Vec<Vec<BitWidth>>,
    pub objective: Objective,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "λ must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

fn pair_bits(p: &PairGroups, bits: &[BitWidth]) -> u64 {
    p.groups
        .iter()
        .zip(bits)
        .map(|(g, b)| g.dim * u64::from(b.bits()))
        .sum()
}

/// Scores an assignment. Both solvers rank candidates by exactly this
/// arithmetic, so their objectives compare bit-for-bit.
pub fn evaluate(
    problem: &AssignmentProblem,
    cost: &CostModel,
    lambda: f64,
    bits: &[Vec<BitWidth>],
) -> Objective {
    let mut variance = 0.0;
    let mut z: f64 = 0.0;
    for (p, b) in problem.pairs.iter().zip(bits) {
        let mut v = 0.0;
        for (g, &w) in p.groups.iter().zip(b) {
            v += g.beta * w.variance_factor();
        }
        variance += v;
        z = z.max(cost.transfer_time(p.src, p.dst, pair_bits(p, b)));
    }
    Objective {
        variance,
        z,
        value: lambda * variance + (1.0 - lambda) * z,
    }
}

/// Total order on candidates: objective, then variance, then the
/// lexicographically larger bit vector.
fn compare(
    a: &Objective,
    a_bits: &[Vec<BitWidth>],
    b: &Objective,
    b_bits: &[Vec<BitWidth>],
) -> Ordering {
    a.value
        .total_cmp(&b.value)
        .then(a.variance.total_cmp(&b.variance))
        .then_with(|| {
            let fa = a_bits.iter().flatten();
            let fb = b_bits.iter().flatten();
            fb.cmp(fa)
        })
}

fn validate(problem: &AssignmentProblem, cost: &CostModel, lambda: f64) -> Result<()> {
    check_lambda(lambda)?;
    if problem.num_groups() == 0 {
        return Err(Error::invalid("assignment problem has no message groups"));
    }
    for p in &problem.pairs {
        if p.src >= cost.num_devices() || p.dst >= cost.num_devices() {
            return Err(Error::invalid(format!(
                "pair {} -> {} not covered by the cost model",
                p.src, p.dst
            )));
        }
        for g in &p.groups {
            if g.dim == 0 || !(g.beta.is_finite() && g.beta >= 0.0) {
                return Err(Error::invalid(format!("invalid group {g:?}")));
            }
        }
    }
    Ok(())
}

/// Exhaustive search over all `3^G` assignments.
pub fn brute_force_assignment(
    problem: &AssignmentProblem,
    cost: &CostModel,
    lambda: f64,
) -> Result<Assignment> {
    validate(problem, cost, lambda)?;
    let total = problem.num_groups();
    if total > BRUTE_FORCE_MAX_GROUPS {
        return Err(Error::ResourceLimit(format!(
            "exhaustive search over {total} groups exceeds the limit of {BRUTE_FORCE_MAX_GROUPS}"
        )));
    }
    let shape: Vec<usize> = problem.pairs.iter().map(|p| p.groups.len()).collect();
    let mut digits = vec![0usize; total];
    let mut best: Option<Assignment> = None;
    loop {
        let mut it = digits.iter();
        let bits: Vec<Vec<BitWidth>> = shape
            .iter()
            .map(|&n| it.by_ref().take(n).map(|&d| BitWidth::ALL[d]).collect())
            .collect();
        let obj = evaluate(problem, cost, lambda, &bits);
        let better = match &best {
            None => true,
            Some(b) => compare(&obj, &bits, &b.objective, &b.bits) == Ordering::Less,
        };
        if better {
            best = Some(Assignment {
                bits,
                objective: obj,
            });
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == total {
                return Ok(best.expect("at least one assignment evaluated"));
            }
            digits[i] += 1;
            if digits[i] < 3 {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

const MULTIPLIERS: [u64; 3] = [1, 2, 4];
const UNREACHED: u8 = u8::MAX;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Minimum-variance assignments of one pair, indexed by bit total.
struct PairFrontier {
    /// `(units, variance)` with units ascending and variance non-increasing;
    /// for equal variance only the largest total is kept.
    points: Vec<(u64, f64)>,
    /// Bits per unit: `2 · gcd(D_g)`.
    bits_per_unit: u64,
    weights: Vec<u64>,
    /// `choice[g * width + u]`: multiplier index of group `g` on the best path to `u`.
    choice: Vec<u8>,
    width: usize,
}

impl PairFrontier {
    fn build(p: &PairGroups) -> Self {
        let g_all = p.groups.iter().fold(0, |acc, g| gcd(acc, g.dim)).max(1);
        let weights: Vec<u64> = p.groups.iter().map(|g| g.dim / g_all).collect();
        let max_units: u64 = weights.iter().map(|w| 4 * w).sum();
        let width = max_units as usize + 1;
        let mut best = vec![f64::INFINITY; width];
        best[0] = 0.0;
        let mut choice = vec![UNREACHED; p.groups.len() * width];
        let mut reach_hi = 0usize;
        for (gi, g) in p.groups.iter().enumerate() {
            let mut next = vec![f64::INFINITY; width];
            let w = weights[gi] as usize;
            for (u, &base) in best.iter().enumerate().take(reach_hi + 1) {
                if base == f64::INFINITY {
                    continue;
                }
                for (ci, &m) in MULTIPLIERS.iter().enumerate() {
                    let v = base + g.beta * BitWidth::ALL[ci].variance_factor();
                    let t = u + w * m as usize;
                    let slot = &mut choice[gi * width + t];
                    // prefer the wider code on exact ties
                    if v < next[t] || (v == next[t] && (*slot == UNREACHED || ci as u8 > *slot)) {
                        next[t] = v;
                        *slot = ci as u8;
                    }
                }
            }
            reach_hi += 4 * w;
            best = next;
        }
        let mut points: Vec<(u64, f64)> = Vec::new();
        for (u, &v) in best.iter().enumerate() {
            if v == f64::INFINITY {
                continue;
            }
            match points.last() {
                Some(&(_, last)) if v > last => {}
                Some(&(_, last)) if v == last => *points.last_mut().unwrap() = (u as u64, v),
                _ => points.push((u as u64, v)),
            }
        }
        PairFrontier {
            points,
            bits_per_unit: 2 * g_all,
            weights,
            choice,
            width,
        }
    }

    fn bits_of(&self, units: u64) -> u64 {
        units * self.bits_per_unit
    }

    fn reconstruct(&self, units: u64) -> Vec<BitWidth> {
        let mut out = vec![BitWidth::B8; self.weights.len()];
        let mut u = units as usize;
        for gi in (0..self.weights.len()).rev() {
            let ci = self.choice[gi * self.width + u];
            debug_assert_ne!(ci, UNREACHED);
            out[gi] = BitWidth::ALL[ci as usize];
            u -= self.weights[gi] as usize * MULTIPLIERS[ci as usize] as usize;
        }
        debug_assert_eq!(u, 0);
        out
    }
}

/// Exact minimizer of the scalarized variance/time objective.
pub fn solve_assignment(
    problem: &AssignmentProblem,
    cost: &CostModel,
    lambda: f64,
) -> Result<Assignment> {
    validate(problem, cost, lambda)?;
    let frontiers: Vec<PairFrontier> = problem.pairs.iter().map(PairFrontier::build).collect();
    let times: Vec<Vec<f64>> = problem
        .pairs
        .iter()
        .zip(&frontiers)
        .map(|(p, f)| {
            f.points
                .iter()
                .map(|&(u, _)| cost.transfer_time(p.src, p.dst, f.bits_of(u)))
                .collect()
        })
        .collect();

    let mut candidates: Vec<f64> = times.iter().flatten().copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // per pair: index of the last frontier point within budget; moves forward as Z grows
    let mut cursor: Vec<Option<usize>> = vec![None; frontiers.len()];
    let mut best: Option<(Objective, Vec<usize>)> = None;
    let mut best_bits: Option<Vec<Vec<BitWidth>>> = None;

    for &budget in &candidates {
        let mut feasible = true;
        for (i, ts) in times.iter().enumerate() {
            let mut c = cursor[i];
            let mut next = c.map_or(0, |k| k + 1);
            while next < ts.len() && ts[next] <= budget {
                c = Some(next);
                next += 1;
            }
            cursor[i] = c;
            feasible &= c.is_some();
        }
        if !feasible {
            continue;
        }
        let picks: Vec<usize> = cursor.iter().map(|c| c.unwrap()).collect();
        let mut variance = 0.0;
        let mut z: f64 = 0.0;
        for (i, &k) in picks.iter().enumerate() {
            variance += frontiers[i].points[k].1;
            z = z.max(times[i][k]);
        }
        let obj = Objective {
            variance,
            z,
            value: lambda * variance + (1.0 - lambda) * z,
        };
        let replace = match &best {
            None => true,
            Some((b, _)) => match obj
                .value
                .total_cmp(&b.value)
                .then(obj.variance.total_cmp(&b.variance))
            {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => {
                    let bits = materialize(&frontiers, &picks);
                    let current = best_bits
                        .get_or_insert_with(|| materialize(&frontiers, &best.as_ref().unwrap().1));
                    compare(&obj, &bits, b, current) == Ordering::Less
                }
            },
        };
        if replace {
            best = Some((obj, picks));
            best_bits = None;
        }
    }

    let (_, picks) = best.ok_or_else(|| Error::invalid("no feasible assignment"))?;
    let bits = materialize(&frontiers, &picks);
    let objective = evaluate(problem, cost, lambda, &bits);
    Ok(Assignment { bits, objective })
}

fn materialize(frontiers: &[PairFrontier], picks: &[usize]) -> Vec<Vec<BitWidth>> {
    frontiers
        .iter()
        .zip(picks)
        .map(|(f, &k)| f.reconstruct(f.points[k].0))
        .collect()
}
