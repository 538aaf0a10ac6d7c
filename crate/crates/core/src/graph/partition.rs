use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::csr::{Graph, NodeId};
use crate::error::{Error, Result};

/// One device's share of the graph.
///
/// All node lists hold global ids in ascending order. `remote_in[d]` lists the
/// nodes owned by device `d` whose messages this device receives;
/// `remote_out[d]` lists the owned nodes whose messages are sent to `d`. Both
/// are empty at the device's own index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub device_id: usize,
    pub owned_nodes: Vec<NodeId>,
    pub central_nodes: Vec<NodeId>,
    pub marginal_nodes: Vec<NodeId>,
    pub remote_in: Vec<Vec<NodeId>>,
    pub remote_out: Vec<Vec<NodeId>>,
}

impl Partition {
    pub fn num_devices(&self) -> usize {
        self.remote_out.len()
    }

    pub fn owns(&self, v: NodeId) -> bool {
        self.owned_nodes.binary_search(&v).is_ok()
    }

    /// Position of `v` in `owned_nodes`.
    pub fn local_index(&self, v: NodeId) -> Option<usize> {
        self.owned_nodes.binary_search(&v).ok()
    }

    /// Devices this partition exchanges messages with.
    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_devices()).filter(|&d| !self.remote_out[d].is_empty())
    }
}

/// Local and remote neighbor sets of one owned node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSplit {
    pub node: NodeId,
    pub local: Vec<NodeId>,
    pub remote: Vec<NodeId>,
}

/// Splits `g` into `n_parts` balanced partitions by seeded BFS region growing.
///
/// Part sizes differ by at most one. The result depends only on `(g, n_parts, seed)`.
pub fn partition_graph(g: &Graph, n_parts: usize, seed: u64) -> Result<Vec<Partition>> {
    let n = g.num_nodes();
    if n_parts == 0 || n_parts > n {
        return Err(Error::invalid(format!(
            "cannot split {n} nodes into {n_parts} partitions"
        )));
    }
    let owner = grow_regions(g, n_parts, seed);
    partitions_from_owner(g, &owner, n_parts)
}

fn grow_regions(g: &Graph, n_parts: usize, seed: u64) -> Vec<usize> {
    const UNASSIGNED: usize = usize::MAX;
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<NodeId> = (0..n).collect();
    order.shuffle(&mut rng);

    let target: Vec<usize> = (0..n_parts)
        .map(|p| n / n_parts + usize::from(p < n % n_parts))
        .collect();
    let mut owner = vec![UNASSIGNED; n];
    let mut size = vec![0usize; n_parts];
    let mut frontier: Vec<VecDeque<NodeId>> = order[..n_parts]
        .iter()
        .map(|&root| VecDeque::from([root]))
        .collect();
    // fallback cursor into `order` for parts whose frontier runs dry
    let mut cursor = 0;
    let mut assigned = 0;

    while assigned < n {
        for p in 0..n_parts {
            if size[p] == target[p] {
                continue;
            }
            let next = loop {
                match frontier[p].pop_front() {
                    Some(v) if owner[v] == UNASSIGNED => break Some(v),
                    Some(_) => continue,
                    None => break None,
                }
            };
            let v = match next {
                Some(v) => v,
                None => {
                    while owner[order[cursor]] != UNASSIGNED {
                        cursor += 1;
                    }
                    order[cursor]
                }
            };
            owner[v] = p;
            size[p] += 1;
            assigned += 1;
            frontier[p].extend(g.neighbors(v).iter().filter(|&&u| owner[u] == UNASSIGNED));
            if assigned == n {
                break;
            }
        }
    }
    owner
}

/// Builds partitions from an explicit node → device assignment.
pub fn partitions_from_owner(g: &Graph, owner: &[usize], n_parts: usize) -> Result<Vec<Partition>> {
    let n = g.num_nodes();
    if owner.len() != n {
        return Err(Error::invalid(format!(
            "owner map has {} entries for {n} nodes",
            owner.len()
        )));
    }
    if let Some(&bad) = owner.iter().find(|&&d| d >= n_parts) {
        return Err(Error::invalid(format!(
            "device id {bad} out of range for {n_parts} partitions"
        )));
    }

    let mut parts: Vec<Partition> = (0..n_parts)
        .map(|d| Partition {
            device_id: d,
            owned_nodes: Vec::new(),
            central_nodes: Vec::new(),
            marginal_nodes: Vec::new(),
            remote_in: vec![Vec::new(); n_parts],
            remote_out: vec![Vec::new(); n_parts],
        })
        .collect();

    let mut seen = vec![usize::MAX; n_parts];
    for v in 0..n {
        let i = owner[v];
        parts[i].owned_nodes.push(v);
        let mut marginal = false;
        for &u in g.neighbors(v) {
            let d = owner[u];
            if d != i {
                marginal = true;
                // v's message goes to every foreign device holding a neighbor, once
                if seen[d] != v {
                    seen[d] = v;
                    parts[i].remote_out[d].push(v);
                    parts[d].remote_in[i].push(v);
                }
            }
        }
        if marginal {
            parts[i].marginal_nodes.push(v);
        } else {
            parts[i].central_nodes.push(v);
        }
    }
    Ok(parts)
}

/// Recovers the node → device map from a partition set.
pub fn owner_map(parts: &[Partition], num_nodes: usize) -> Vec<usize> {
    let mut owner = vec![usize::MAX; num_nodes];
    for p in parts {
        for &v in &p.owned_nodes {
            owner[v] = p.device_id;
        }
    }
    owner
}

/// Splits every owned node's neighborhood into on-device and off-device sets.
pub fn split_local_remote(p: &Partition, g: &Graph) -> Vec<NeighborSplit> {
    p.owned_nodes
        .iter()
        .map(|&v| {
            let (local, remote) = g.neighbors(v).iter().partition(|&&u| p.owns(u));
            NeighborSplit {
                node: v,
                local,
                remote,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::csr::fixtures::{path, plain};

    #[test]
    fn single_partition_has_no_marginal_nodes() {
        let g = path(4);
        let parts = partition_graph(&g, 1, 0).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].central_nodes, vec![0, 1, 2, 3]);
        assert!(parts[0].marginal_nodes.is_empty());
    }

    #[test]
    fn path_split_in_two_has_one_cut_edge() {
        let g = path(4);
        let parts = partitions_from_owner(&g, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(parts[0].central_nodes, vec![0]);
        assert_eq!(parts[0].marginal_nodes, vec![1]);
        assert_eq!(parts[1].central_nodes, vec![3]);
        assert_eq!(parts[1].marginal_nodes, vec![2]);
        assert_eq!(parts[0].remote_out[1], vec![1]);
        assert_eq!(parts[0].remote_in[1], vec![2]);

        let split = split_local_remote(&parts[0], &g);
        assert_eq!(
            split[1],
            NeighborSplit {
                node: 1,
                local: vec![0],
                remote: vec![2]
            }
        );
        assert!(split[0].remote.is_empty());
    }

    #[test]
    fn invalid_part_counts_are_rejected() {
        let g = path(3);
        assert!(matches!(
            partition_graph(&g, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            partition_graph(&g, 4, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn isolated_nodes_still_get_assigned() {
        let g = plain(7, &[(0, 1)], 1);
        let parts = partition_graph(&g, 3, 9).unwrap();
        let sizes: Vec<_> = parts.iter().map(|p| p.owned_nodes.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
    }
}
