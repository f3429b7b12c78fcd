//! Static sequencing of patches shared by several ranks.
//!
//! Two distributed patches sharing a rank may not be solved at the same time.
//! Sequences are built by a rank pipeline: the lowest rank picks first, each
//! following rank completes the column it receives from its predecessor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Classification;
use crate::runtime::{run, Comm, RunConfig, RuntimeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("patch {patch}: rank {rank} is a participant but does not list it")]
    MissingListing { patch: usize, rank: usize },
    #[error("patch {patch}: listed on rank {rank}, which does not participate")]
    StrayListing { patch: usize, rank: usize },
    #[error("patch {patch}: distributed over fewer than two ranks")]
    NotDistributed { patch: usize },
    #[error("patch {patch}: listed twice")]
    Duplicate { patch: usize },
    #[error("patch {patch}: zero weight")]
    ZeroWeight { patch: usize },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// Selection policy for the sequencing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Variant {
    /// Construction order, first available patch.
    V0,
    /// Decreasing weight, first available patch.
    V1,
    /// Decreasing weight with the `mxwg`/`mxwl` balance steering.
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightedPatch {
    pub id: usize,
    pub weight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankPatches {
    pub distributed: Vec<WeightedPatch>,
    pub local: Vec<WeightedPatch>,
}

/// Patches seen by every rank, plus the participants of each distributed patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGraph {
    pub ranks: Vec<RankPatches>,
    pub participants: BTreeMap<usize, Vec<usize>>,
}

impl PatchGraph {
    /// Builds the graph from `(id, weight, owning ranks)` triples.
    pub fn from_owners(nranks: usize, patches: &[(usize, usize, Vec<usize>)]) -> Self {
        let mut ranks = vec![RankPatches::default(); nranks];
        let mut participants = BTreeMap::new();
        for (id, weight, owners) in patches {
            let wp = WeightedPatch { id: *id, weight: *weight };
            let mut owners = owners.clone();
            owners.sort_unstable();
            owners.dedup();
            if owners.len() > 1 {
                for &r in &owners {
                    ranks[r].distributed.push(wp);
                }
                participants.insert(*id, owners);
            } else {
                ranks[owners[0]].local.push(wp);
            }
        }
        Self { ranks, participants }
    }

    pub fn from_classification(cls: &Classification, element_owner: &[usize], nranks: usize) -> Self {
        let triples: Vec<(usize, usize, Vec<usize>)> = cls.patches.iter().map(|p| (p.id, p.weight, p.owners(element_owner))).collect();
        Self::from_owners(nranks, &triples)
    }

    pub fn nranks(&self) -> usize {
        self.ranks.len()
    }

    /// Largest number of distributed patches on one rank.
    pub fn max_distributed(&self) -> usize {
        self.ranks.iter().map(|r| r.distributed.len()).max().unwrap_or(0)
    }

    /// Checks that every distributed patch is listed by exactly its participants.
    pub fn check(&self) -> Result<(), ScheduleError> {
        let mut seen = BTreeSet::new();
        for (rank, rp) in self.ranks.iter().enumerate() {
            let mut ids = BTreeSet::new();
            for p in rp.distributed.iter().chain(&rp.local) {
                if !ids.insert(p.id) {
                    return Err(ScheduleError::Duplicate { patch: p.id });
                }
                if p.weight == 0 {
                    return Err(ScheduleError::ZeroWeight { patch: p.id });
                }
            }
            for p in &rp.local {
                if !seen.insert(p.id) {
                    return Err(ScheduleError::Duplicate { patch: p.id });
                }
            }
            for p in &rp.distributed {
                match self.participants.get(&p.id) {
                    Some(parts) if parts.contains(&rank) => {}
                    _ => return Err(ScheduleError::StrayListing { patch: p.id, rank }),
                }
            }
        }
        for (&patch, parts) in &self.participants {
            if parts.len() < 2 {
                return Err(ScheduleError::NotDistributed { patch });
            }
            if !seen.insert(patch) {
                return Err(ScheduleError::Duplicate { patch });
            }
            for &rank in parts {
                if rank >= self.ranks.len() || !self.ranks[rank].distributed.iter().any(|p| p.id == patch) {
                    return Err(ScheduleError::MissingListing { patch, rank });
                }
            }
        }
        Ok(())
    }
}

/// Result of the pipeline on one rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSchedule {
    /// Own color per sequence (`-1` when idle).
    pub colors: Vec<i64>,
    pub distributed_order: Vec<usize>,
    pub local_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// `matrix[s][r]`: patch solved by rank `r` in sequence `s`, `-1` if idle.
    pub matrix: Vec<Vec<i64>>,
    pub distributed_order: Vec<Vec<usize>>,
    pub local_order: Vec<Vec<usize>>,
}

impl Schedule {
    pub fn sequences(&self) -> usize {
        self.matrix.len()
    }

    pub fn from_ranks(ranks: Vec<RankSchedule>) -> Self {
        let nseq = ranks.iter().map(|r| r.colors.len()).max().unwrap_or(0);
        let matrix = (0..nseq).map(|s| ranks.iter().map(|r| r.colors.get(s).copied().unwrap_or(-1)).collect()).collect();
        Self {
            matrix,
            distributed_order: ranks.iter().map(|r| r.distributed_order.clone()).collect(),
            local_order: ranks.iter().map(|r| r.local_order.clone()).collect(),
        }
    }
}

const TAG_WG: u32 = 0x5c_0001;
const TAG_COL: u32 = 0x5c_0002;

fn take(list: &mut Vec<WeightedPatch>, at: usize) -> WeightedPatch {
    list.remove(at)
}

/// Local choice: the heaviest patch below `crit`, else the lightest one.
fn pick_local(local: &mut Vec<WeightedPatch>, crit: Option<usize>) -> WeightedPatch {
    let at = match crit {
        Some(c) => local.iter().position(|p| p.weight < c).unwrap_or(local.len() - 1),
        None => 0,
    };
    take(local, at)
}

/// Sequencing pipeline for the calling rank. Every rank of `comm` must call it
/// with the same graph.
pub fn sequence_rank(comm: &Comm, graph: &PatchGraph, variant: Variant) -> RankSchedule {
    let pid = comm.rank();
    let nbpid = comm.size();
    let weighted = variant == Variant::V2;
    let mut d = graph.ranks[pid].distributed.clone();
    let mut l = graph.ranks[pid].local.clone();
    match variant {
        Variant::V0 => {
            d.sort_by_key(|p| p.id);
            l.sort_by_key(|p| p.id);
        }
        Variant::V1 | Variant::V2 => {
            d.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.id.cmp(&b.id)));
            l.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.id.cmp(&b.id)));
        }
    }
    let participants = |id: usize| &graph.participants[&id];
    let mut d_o = Vec::new();
    let mut l_o = Vec::new();
    let mut colors = Vec::new();

    let mut nbe = comm.all_reduce_max_usize(d.len());
    let mut sid = 1usize;
    loop {
        let nbs = nbe;
        while sid <= nbs {
            // reverse pipeline: heaviest distributed patch on ranks ≥ pid
            let mut mxwg = 0usize;
            if weighted {
                if pid + 1 < nbpid {
                    mxwg = comm.recv(pid + 1, TAG_WG);
                }
                mxwg = mxwg.max(d.iter().map(|p| p.weight).max().unwrap_or(0));
                if pid > 0 {
                    comm.send(pid - 1, TAG_WG, mxwg);
                }
            }
            let crit_first = weighted.then_some(mxwg);
            let (col, mxwl) = if pid == 0 {
                let mut col = vec![-1i64; nbpid];
                let chosen = if !d.is_empty() {
                    let s = take(&mut d, 0);
                    for &r in participants(s.id) {
                        col[r] = s.id as i64;
                    }
                    d_o.push(s.id);
                    Some(s)
                } else if !l.is_empty() {
                    let s = pick_local(&mut l, crit_first);
                    col[0] = s.id as i64;
                    l_o.push(s.id);
                    Some(s)
                } else {
                    None
                };
                (col, chosen.map_or(0, |s| s.weight))
            } else {
                let (mut col, mut mxwl): (Vec<i64>, usize) = comm.recv(pid - 1, TAG_COL);
                if col[0] < 0 {
                    // a distributed patch is free only if no lower rank takes
                    // part and none of its ranks is already frozen
                    let free = |s: &WeightedPatch| participants(s.id).iter().all(|&r| r >= pid && col[r - pid] < 0);
                    let mut chosen = None;
                    if let Some(at) = d.iter().position(free) {
                        let s = take(&mut d, at);
                        for &r in participants(s.id) {
                            col[r - pid] = s.id as i64;
                        }
                        d_o.push(s.id);
                        chosen = Some(s);
                    } else if !l.is_empty() {
                        let s = pick_local(&mut l, weighted.then(|| mxwg.max(mxwl)));
                        col[0] = s.id as i64;
                        l_o.push(s.id);
                        chosen = Some(s);
                    }
                    mxwl = mxwl.max(chosen.map_or(0, |s| s.weight));
                } else {
                    let id = col[0] as usize;
                    let at = d.iter().position(|p| p.id == id).expect("frozen patch is listed");
                    take(&mut d, at);
                    d_o.push(id);
                }
                (col, mxwl)
            };
            if pid + 1 < nbpid {
                comm.send(pid + 1, TAG_COL, (col[1..].to_vec(), mxwl));
            }
            colors.push(col[0]);
            sid += 1;
        }
        nbe = comm.all_reduce_max_usize(nbe + d.len());
        if nbs >= nbe {
            break;
        }
    }
    l_o.extend(l.iter().map(|p| p.id));
    RankSchedule { colors, distributed_order: d_o, local_order: l_o }
}

/// Runs the pipeline on simulated ranks and merges the per-rank results.
pub fn build_schedule(graph: &PatchGraph, variant: Variant) -> Result<Schedule, ScheduleError> {
    graph.check()?;
    let ranks = run(RunConfig::new(graph.nranks()), |comm| sequence_rank(comm, graph, variant))?;
    Ok(Schedule::from_ranks(ranks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub active_patches: usize,
    pub active_distributed: usize,
    pub distributed_fraction: f64,
    pub active_ranks: usize,
    pub rank_fraction: f64,
    /// Standard deviation of the patch weights carried by the active ranks.
    pub weight_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub violations: Vec<String>,
    pub sequences: Vec<SequenceStats>,
}

/// Checks the schedule against the graph and collects per-sequence activity.
pub fn validate(schedule: &Schedule, graph: &PatchGraph) -> ScheduleReport {
    let mut violations = Vec::new();
    let mut sequences = Vec::new();
    let mut placed: BTreeMap<usize, usize> = BTreeMap::new();
    let nranks = graph.nranks();
    let weight: BTreeMap<usize, usize> = graph.ranks.iter().flat_map(|r| r.distributed.iter().chain(&r.local)).map(|p| (p.id, p.weight)).collect();
    for (s, col) in schedule.matrix.iter().enumerate() {
        if col.len() != nranks {
            violations.push(format!("sequence {s}: {} entries for {nranks} ranks", col.len()));
            continue;
        }
        let mut ids: BTreeSet<usize> = BTreeSet::new();
        let mut distributed = 0;
        for (r, &c) in col.iter().enumerate() {
            if c < 0 {
                continue;
            }
            let id = c as usize;
            if ids.insert(id) {
                if let Some(parts) = graph.participants.get(&id) {
                    distributed += 1;
                    *placed.entry(id).or_default() += 1;
                    for &q in parts {
                        if col[q] != c {
                            violations.push(format!("sequence {s}: patch {id} lacks participant {q}"));
                        }
                    }
                }
            }
            let known = graph.ranks[r].distributed.iter().chain(&graph.ranks[r].local).any(|p| p.id == id);
            if !known {
                violations.push(format!("sequence {s}: rank {r} runs foreign patch {id}"));
            }
        }
        let active_ranks = col.iter().filter(|&&c| c >= 0).count();
        let active_patches = ids.len();
        let loads: Vec<f64> = col.iter().filter(|&&c| c >= 0).map(|&c| weight.get(&(c as usize)).copied().unwrap_or(0) as f64).collect();
        let weight_spread = if loads.is_empty() {
            0.0
        } else {
            let mean = loads.iter().sum::<f64>() / loads.len() as f64;
            (loads.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / loads.len() as f64).sqrt()
        };
        sequences.push(SequenceStats {
            active_patches,
            active_distributed: distributed,
            distributed_fraction: if active_patches > 0 { distributed as f64 / active_patches as f64 } else { 0.0 },
            active_ranks,
            rank_fraction: active_ranks as f64 / nranks.max(1) as f64,
            weight_spread,
        });
    }
    for &id in graph.participants.keys() {
        match placed.get(&id).copied().unwrap_or(0) {
            1 => {}
            0 => violations.push(format!("patch {id} never scheduled")),
            n => violations.push(format!("patch {id} scheduled {n} times")),
        }
    }
    for (r, rp) in graph.ranks.iter().enumerate() {
        let Some(order) = schedule.local_order.get(r) else { continue };
        let mut got = order.clone();
        got.sort_unstable();
        let mut want: Vec<usize> = rp.local.iter().map(|p| p.id).collect();
        want.sort_unstable();
        if got != want {
            violations.push(format!("rank {r}: local order is not a permutation of its local patches"));
        }
    }
    ScheduleReport { violations, sequences }
}
