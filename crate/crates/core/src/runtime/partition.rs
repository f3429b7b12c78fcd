use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::RuntimeError;

/// Element-to-rank assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub owner: Vec<usize>,
    pub rank_weights: Vec<f64>,
}

impl PartitionPlan {
    pub fn ranks(&self) -> usize {
        self.rank_weights.len()
    }

    pub fn elements_of(&self, rank: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&e| self.owner[e] == rank).collect()
    }

    /// max/min rank weight.
    pub fn imbalance(&self) -> f64 {
        let max = self.rank_weights.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.rank_weights.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

fn bfs_distances(adj: &[Vec<usize>], sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut q = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        q.push_back(s);
    }
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// Greedy weighted region growing on the element dual graph.
///
/// Seeds are spread by farthest-point BFS starting from element 0. Then the
/// lightest rank (lowest id on ties) absorbs the frontier element with the most
/// neighbours already in its region (lowest id on ties); a rank with an empty
/// frontier is skipped, and isolated leftovers go to the lightest rank.
pub fn partition(adjacency: &[Vec<usize>], weights: &[f64], ranks: usize) -> Result<PartitionPlan, RuntimeError> {
    let n = adjacency.len();
    if ranks == 0 {
        return Err(RuntimeError::NoRanks);
    }
    if ranks > n {
        return Err(RuntimeError::TooManyRanks { ranks, elements: n });
    }
    let mut owner = vec![usize::MAX; n];
    let mut rank_weights = vec![0.0; ranks];
    if ranks == 1 {
        owner.iter_mut().for_each(|o| *o = 0);
        rank_weights[0] = weights.iter().sum();
        return Ok(PartitionPlan { owner, rank_weights });
    }

    let mut seeds = vec![0usize];
    while seeds.len() < ranks {
        let dist = bfs_distances(adjacency, &seeds);
        let next = (0..n)
            .filter(|e| !seeds.contains(e))
            .max_by(|&a, &b| dist[a].cmp(&dist[b]).then(b.cmp(&a)))
            .unwrap();
        seeds.push(next);
    }

    let mut frontier: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); ranks];
    let assign = |e: usize, r: usize, owner: &mut Vec<usize>, frontier: &mut Vec<BTreeMap<usize, usize>>, rw: &mut Vec<f64>| {
        owner[e] = r;
        rw[r] += weights[e];
        for f in frontier.iter_mut() {
            f.remove(&e);
        }
        for &nb in &adjacency[e] {
            if owner[nb] == usize::MAX {
                *frontier[r].entry(nb).or_default() += 1;
            }
        }
    };
    for (r, &s) in seeds.iter().enumerate() {
        assign(s, r, &mut owner, &mut frontier, &mut rank_weights);
    }
    for _ in ranks..n {
        let mut order: Vec<usize> = (0..ranks).collect();
        order.sort_by(|&a, &b| rank_weights[a].total_cmp(&rank_weights[b]).then(a.cmp(&b)));
        let pick = order.iter().find_map(|&r| {
            frontier[r]
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&e, _)| (e, r))
        });
        let (e, r) = pick.unwrap_or_else(|| ((0..n).find(|&e| owner[e] == usize::MAX).unwrap(), order[0]));
        assign(e, r, &mut owner, &mut frontier, &mut rank_weights);
    }
    let rank_weights = rank_weights_snapshot(&owner, weights, ranks);
    Ok(PartitionPlan { owner, rank_weights })
}

fn rank_weights_snapshot(owner: &[usize], weights: &[f64], ranks: usize) -> Vec<f64> {
    let mut w = vec![0.0; ranks];
    for (e, &o) in owner.iter().enumerate() {
        if o != usize::MAX {
            w[o] += weights[e];
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            })
            .collect()
    }

    #[test]
    fn single_rank_takes_everything() {
        let p = partition(&path(5), &[1.0; 5], 1).unwrap();
        assert!(p.owner.iter().all(|&o| o == 0));
    }

    #[test]
    fn too_many_ranks() {
        assert!(matches!(partition(&path(2), &[1.0; 2], 3), Err(RuntimeError::TooManyRanks { .. })));
    }

    #[test]
    fn path_splits_evenly() {
        let p = partition(&path(10), &[1.0; 10], 2).unwrap();
        assert_eq!(p.rank_weights, vec![5.0, 5.0]);
        assert_eq!(p.owner, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }
}
