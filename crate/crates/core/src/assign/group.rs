use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::stats::{compute_beta, InstanceStats};

/// Messages of one device pair that share a bit-width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageGroup {
    /// Index of the pair in the instance's pair list.
    pub pair: usize,
    /// Wire positions of the members, in descending-β order.
    pub members: Vec<usize>,
    /// `Σ β_k` over members.
    pub beta: f64,
    /// `Σ D_k` over members.
    pub dim: u64,
}

/// Sorts each pair's messages by descending β (ties by wire position) and
/// cuts them into consecutive groups of `group_size`; the last group of a
/// pair may be smaller.
pub fn group_and_order(stats: &InstanceStats, group_size: usize) -> Result<Vec<Vec<MessageGroup>>> {
    if group_size == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    Ok(stats
        .pairs
        .iter()
        .enumerate()
        .map(|(pi, pair)| {
            let betas: Vec<f64> = pair.messages.iter().map(compute_beta).collect();
            let mut order: Vec<usize> = (0..pair.messages.len()).collect();
            order.sort_by(|&a, &b| betas[b].total_cmp(&betas[a]).then(a.cmp(&b)));
            order
                .chunks(group_size)
                .map(|members| MessageGroup {
                    pair: pi,
                    members: members.to_vec(),
                    beta: members.iter().map(|&m| betas[m]).sum(),
                    dim: members.iter().map(|&m| pair.messages[m].dim as u64).sum(),
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::stats::{InstanceKey, MessageStat, PairStats};

    fn instance(betas: &[f64]) -> InstanceStats {
        // dim 6, Σα² 1 → β = range²
        let messages = betas
            .iter()
            .enumerate()
            .map(|(i, &b)| MessageStat {
                node: 100 + i,
                dim: 6,
                min: 0.0,
                max: b.sqrt(),
                sum_alpha_sq: 1.0,
            })
            .collect();
        InstanceStats {
            key: InstanceKey::forward(0),
            pairs: vec![PairStats {
                src: 0,
                dst: 1,
                messages,
            }],
        }
    }

    #[test]
    fn groups_follow_descending_beta() {
        let groups = group_and_order(&instance(&[5.0, 1.0, 9.0]), 2).unwrap();
        assert_eq!(groups[0].len(), 2);
        assert_eq!(groups[0][0].members, vec![2, 0]);
        assert_eq!(groups[0][1].members, vec![1]);
        assert!((groups[0][0].beta - 14.0).abs() < 1e-12);
        assert_eq!(groups[0][0].dim, 12);
    }

    #[test]
    fn group_size_covering_all_gives_one_group() {
        let groups = group_and_order(&instance(&[1.0, 2.0, 3.0]), 3).unwrap();
        assert_eq!(groups[0].len(), 1);
    }

    #[test]
    fn ties_break_by_position() {
        let groups = group_and_order(&instance(&[1.0, 1.0, 1.0]), 1).unwrap();
        let firsts: Vec<usize> = groups[0].iter().map(|g| g.members[0]).collect();
        assert_eq!(firsts, vec![0, 1, 2]);
    }

    #[test]
    fn zero_group_size_is_rejected() {
        assert!(group_and_order(&instance(&[1.0]), 0).is_err());
    }
}
