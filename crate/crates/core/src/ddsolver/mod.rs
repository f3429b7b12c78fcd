//! Non-overlapping Schur complement solver, one domain per rank.
//!
//! Each rank condenses its own elements on the dofs it shares with other
//! ranks. The boundary problem is solved by a distributed conjugate gradient
//! preconditioned by block Jacobi: the block of a rank covers the shared dofs
//! it owns, i.e. those not shared by any lower rank.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::Comm;
use crate::sparse::{pcg, CgSpace, Factor, FactorOptions, SparseError, SparseSym, TripletBuilder};
use crate::transfer::CoarseContribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdError {
    #[error("domain decomposition needs at least two ranks")]
    SingleDomain,
    #[error("rank {rank}: interior block: {source}")]
    Interior { rank: usize, source: SparseError },
    #[error("rank {rank}: preconditioner block is singular, the global matrix is ill-conditioned: {source}")]
    Preconditioner { rank: usize, source: SparseError },
    #[error("another rank failed while setting up its domain")]
    PeerFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdOptions {
    pub eps: f64,
    pub iter_max: usize,
    /// Relative threshold for pinning null pivots of the interior factor.
    pub null_pivot_rel: Option<f64>,
}

impl Default for DdOptions {
    fn default() -> Self {
        Self { eps: 1e-10, iter_max: 10_000, null_pivot_rel: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdReport {
    pub iterations: usize,
    pub crit: f64,
    pub converged: bool,
    /// Size of the global boundary problem.
    pub boundary_dofs: usize,
    /// Shared dofs owned by each rank.
    pub owned_boundary: Vec<usize>,
}

/// Dof sets of one domain; all lists hold global ids in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSets {
    pub domain: Vec<usize>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub owned: Vec<usize>,
    /// Other ranks sharing each boundary dof.
    pub sharers: BTreeMap<usize, Vec<usize>>,
    /// Owner (lowest sharing rank) of each boundary dof.
    pub owner: BTreeMap<usize, usize>,
}

/// Derives the domain sets from the dof lists of every rank.
pub fn domain_sets(rank: usize, all_domains: &[Vec<usize>]) -> DomainSets {
    let domain = all_domains[rank].clone();
    let mut holders: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, dofs) in all_domains.iter().enumerate() {
        for &d in dofs {
            holders.entry(d).or_default().push(r);
        }
    }
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let mut owned = Vec::new();
    let mut sharers = BTreeMap::new();
    let mut owner = BTreeMap::new();
    for &d in &domain {
        let h = &holders[&d];
        if h.len() == 1 {
            interior.push(d);
        } else {
            boundary.push(d);
            if h[0] == rank {
                owned.push(d);
            }
            owner.insert(d, h[0]);
            sharers.insert(d, h.iter().copied().filter(|&r| r != rank).collect());
        }
    }
    DomainSets { domain, interior, boundary, owned, sharers, owner }
}

const TAG_BLOCK: u32 = 0xdd_0001;
const TAG_RHS: u32 = 0xdd_0002;
const TAG_PUSH: u32 = 0xdd_0003;
const TAG_PULL: u32 = 0xdd_0004;

/// Condensed domain: Schur complement on the boundary plus interior factor.
struct Domain {
    sets: DomainSets,
    factor: Option<Factor>,
    /// `A_Ib` by boundary column: `(interior position, value)`.
    coupling: Vec<Vec<(usize, f64)>>,
    b_interior: Vec<f64>,
    schur: Vec<f64>,
    schur_rhs: Vec<f64>,
}

fn pos(list: &[usize], d: usize) -> usize {
    list.binary_search(&d).expect("dof in set")
}

impl Domain {
    fn build(rank: usize, sets: DomainSets, parts: &[&CoarseContribution], opts: &DdOptions) -> Result<Self, DdError> {
        let nk = sets.domain.len();
        let mut parts: Vec<&CoarseContribution> = parts.to_vec();
        parts.sort_by_key(|c| c.element);
        let mut trip = TripletBuilder::new(nk);
        let mut rhs = vec![0.0; nk];
        for c in &parts {
            let local: Vec<Option<usize>> = c.dofs.iter().map(|d| d.map(|g| pos(&sets.domain, g))).collect();
            trip.add_sym(&local, &c.matrix);
            for (l, v) in local.iter().zip(&c.rhs) {
                if let Some(i) = l {
                    rhs[*i] += v;
                }
            }
        }
        let a = trip.finalize();
        let ni = sets.interior.len();
        let nb = sets.boundary.len();
        // domain position -> (is_interior, position within its set)
        let split: Vec<(bool, usize)> = sets
            .domain
            .iter()
            .map(|&d| match sets.interior.binary_search(&d) {
                Ok(i) => (true, i),
                Err(_) => (false, pos(&sets.boundary, d)),
            })
            .collect();
        let mut a_ii = TripletBuilder::new(ni);
        let mut coupling = vec![Vec::new(); nb];
        let mut schur = vec![0.0; nb * nb];
        for (r, c, v) in a.iter() {
            match (split[r], split[c]) {
                ((true, i), (true, j)) => a_ii.add(i, j, v),
                ((true, i), (false, j)) | ((false, j), (true, i)) => coupling[j].push((i, v)),
                ((false, i), (false, j)) => {
                    schur[i * nb + j] += v;
                    if i != j {
                        schur[j * nb + i] += v;
                    }
                }
            }
        }
        let b_interior: Vec<f64> = sets.interior.iter().map(|&d| rhs[pos(&sets.domain, d)]).collect();
        let mut schur_rhs: Vec<f64> = sets.boundary.iter().map(|&d| rhs[pos(&sets.domain, d)]).collect();
        let factor = if ni > 0 {
            let fo = FactorOptions { null_pivot_rel: opts.null_pivot_rel, ..FactorOptions::default() };
            Some(Factor::with_options(&a_ii.finalize(), fo).map_err(|source| DdError::Interior { rank, source })?)
        } else {
            None
        };
        if let Some(f) = &factor {
            // S_bb −= A_bI A_II⁻¹ A_Ib, 32 right-hand sides per pass
            const BLOCK: usize = 32;
            for start in (0..nb).step_by(BLOCK) {
                let w = BLOCK.min(nb - start);
                let mut x = vec![0.0; ni * w];
                for t in 0..w {
                    for &(i, v) in &coupling[start + t] {
                        x[t * ni + i] = v;
                    }
                }
                f.solve_columns(&mut x, w);
                for (bi, col) in coupling.iter().enumerate() {
                    for t in 0..w {
                        let s: f64 = col.iter().map(|&(i, v)| v * x[t * ni + i]).sum();
                        schur[bi * nb + start + t] -= s;
                    }
                }
            }
            let y = f.solve(&b_interior);
            for (bi, col) in coupling.iter().enumerate() {
                schur_rhs[bi] -= col.iter().map(|&(i, v)| v * y[i]).sum::<f64>();
            }
        }
        Ok(Self { sets, factor, coupling, b_interior, schur, schur_rhs })
    }

    fn interior_solution(&self, xb: &[f64]) -> Vec<f64> {
        let Some(f) = &self.factor else { return Vec::new() };
        let mut rhs = self.b_interior.clone();
        for (bi, col) in self.coupling.iter().enumerate() {
            for &(i, v) in col {
                rhs[i] -= v * xb[bi];
            }
        }
        f.solve(&rhs)
    }
}

/// CG space over owned boundary dofs.
struct BoundarySpace<'c, 'a> {
    comm: &'c Comm<'a>,
    domain: &'c Domain,
    precond: Option<Factor>,
}

impl BoundarySpace<'_, '_> {
    /// Boundary values of this domain from the owners' values.
    fn pull(&self, owned: &[f64]) -> Vec<f64> {
        let s = &self.domain.sets;
        let size = self.comm.size();
        let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); size];
        for (k, &d) in s.owned.iter().enumerate() {
            for &r in &s.sharers[&d] {
                out[r].push((d, owned[k]));
            }
        }
        exchange(self.comm, out, TAG_PULL, |values| {
            let mut xb = vec![0.0; s.boundary.len()];
            for (k, &d) in s.owned.iter().enumerate() {
                xb[pos(&s.boundary, d)] = owned[k];
            }
            for (d, v) in values.into_iter().flatten() {
                xb[pos(&s.boundary, d)] = v;
            }
            xb
        })
    }

    /// Owner-side sums of boundary contributions, added in rank order.
    fn push(&self, local: &[f64]) -> Vec<f64> {
        push_to_owners(self.comm, &self.domain.sets, local, TAG_PUSH)
    }
}

/// Sends `out[r]` to every other rank `r` and hands the received lists (in
/// rank order, own slot empty) to `merge`.
fn exchange<T: Send + Clone + 'static, R>(comm: &Comm, mut out: Vec<Vec<T>>, tag: u32, merge: impl FnOnce(Vec<Vec<T>>) -> R) -> R {
    let me = comm.rank();
    for r in 0..comm.size() {
        if r != me {
            comm.send(r, tag, std::mem::take(&mut out[r]));
        }
    }
    let received: Vec<Vec<T>> = (0..comm.size()).map(|r| if r == me { Vec::new() } else { comm.recv(r, tag) }).collect();
    merge(received)
}

fn push_to_owners(comm: &Comm, s: &DomainSets, local: &[f64], tag: u32) -> Vec<f64> {
    let me = comm.rank();
    let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); comm.size()];
    for (bi, &d) in s.boundary.iter().enumerate() {
        let o = s.owner[&d];
        if o != me {
            out[o].push((d, local[bi]));
        }
    }
    exchange(comm, out, tag, |received| {
        let mut y = vec![0.0; s.owned.len()];
        // contributions summed in ascending rank order, own rank included
        for r in 0..comm.size() {
            if r == me {
                for (k, &d) in s.owned.iter().enumerate() {
                    y[k] += local[pos(&s.boundary, d)];
                }
            } else {
                for &(d, v) in &received[r] {
                    y[pos(&s.owned, d)] += v;
                }
            }
        }
        y
    })
}

impl CgSpace for BoundarySpace<'_, '_> {
    fn dot(&mut self, x: &[f64], y: &[f64]) -> f64 {
        self.comm.reduce_sum(x.iter().zip(y).map(|(a, b)| a * b).sum())
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let xb = self.pull(x);
        let nb = xb.len();
        let s = &self.domain.schur;
        let local: Vec<f64> = (0..nb).map(|i| (0..nb).map(|j| s[i * nb + j] * xb[j]).sum()).collect();
        y.copy_from_slice(&self.push(&local));
    }

    fn precondition(&mut self, r: &[f64], z: &mut [f64]) {
        match &self.precond {
            Some(f) => z.copy_from_slice(&f.solve(r)),
            None => z.copy_from_slice(r),
        }
    }
}

/// Solves the system formed by the contributions of all ranks; each rank
/// passes its own. Returns the full solution on every rank.
pub fn dd_solve(comm: &Comm, dim: usize, parts: &[&CoarseContribution], warm: Option<&[f64]>, opts: &DdOptions) -> Result<(Vec<f64>, DdReport), DdError> {
    if comm.size() < 2 {
        return Err(DdError::SingleDomain);
    }
    let rank = comm.rank();
    let mut dofs: Vec<usize> = parts.iter().flat_map(|c| c.dofs.iter().flatten().copied()).collect();
    dofs.sort_unstable();
    dofs.dedup();
    let all = comm.all_gather(dofs);
    let sets = domain_sets(rank, &all);
    let built = Domain::build(rank, sets, parts, opts);
    let failed = comm.all_reduce_max_usize(usize::from(built.is_err()));
    let domain = match built {
        Ok(d) if failed == 0 => d,
        Ok(_) => return Err(DdError::PeerFailure),
        Err(e) => return Err(e),
    };
    let s = &domain.sets;
    let nb = s.boundary.len();

    // M_jj: Schur blocks on owned dofs, summed at the owner in rank order
    let mut out: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); comm.size()];
    for i in 0..nb {
        let oi = s.owner[&s.boundary[i]];
        for j in 0..nb {
            if oi != rank && s.owner[&s.boundary[j]] == oi {
                out[oi].push((s.boundary[i], s.boundary[j], domain.schur[i * nb + j]));
            }
        }
    }
    let nj = s.owned.len();
    let block = exchange(comm, out, TAG_BLOCK, |received| {
        let mut m = vec![0.0; nj * nj];
        for r in 0..comm.size() {
            if r == rank {
                for (a, &da) in s.owned.iter().enumerate() {
                    let ia = pos(&s.boundary, da);
                    for (b, &db) in s.owned.iter().enumerate() {
                        m[a * nj + b] += domain.schur[ia * nb + pos(&s.boundary, db)];
                    }
                }
            } else {
                for &(di, dj, v) in &received[r] {
                    m[pos(&s.owned, di) * nj + pos(&s.owned, dj)] += v;
                }
            }
        }
        m
    });
    let precond = match nj {
        0 => Ok(None),
        _ => {
            let fo = FactorOptions { null_pivot_rel: opts.null_pivot_rel, ..FactorOptions::default() };
            Factor::with_options(&SparseSym::from_dense(nj, &block), fo).map(Some).map_err(|source| DdError::Preconditioner { rank, source })
        }
    };
    let failed = comm.all_reduce_max_usize(usize::from(precond.is_err()));
    let precond = match precond {
        Ok(_) if failed != 0 => return Err(DdError::PeerFailure),
        p => p?,
    };
    let rhs = push_to_owners(comm, s, &domain.schur_rhs, TAG_RHS);
    let mut x: Vec<f64> = match warm {
        Some(w) => s.owned.iter().map(|&d| w[d]).collect(),
        None => vec![0.0; nj],
    };
    let mut space = BoundarySpace { comm, domain: &domain, precond };
    let cg = pcg(&mut space, &mut x, &rhs, opts.eps, opts.iter_max);
    let xb = space.pull(&x);
    let xi = domain.interior_solution(&xb);

    let mut mine: Vec<(usize, f64)> = s.owned.iter().copied().zip(x.iter().copied()).collect();
    mine.extend(s.interior.iter().copied().zip(xi));
    let gathered = comm.all_gather(mine);
    let mut u = vec![0.0; dim];
    for (d, v) in gathered.into_iter().flatten() {
        u[d] = v;
    }
    let owned_boundary = comm.all_gather(nj);
    let boundary_dofs = owned_boundary.iter().sum();
    Ok((u, DdReport { iterations: cg.iterations, crit: cg.crit, converged: cg.converged, boundary_dofs, owned_boundary }))
}

/// Dense Schur complement of one domain, for inspection.
pub fn condensed_boundary(rank: usize, all_domains: &[Vec<usize>], parts: &[&CoarseContribution], opts: &DdOptions) -> Result<(Vec<usize>, Vec<f64>), DdError> {
    let sets = domain_sets(rank, all_domains);
    let d = Domain::build(rank, sets, parts, opts)?;
    Ok((d.sets.boundary.clone(), d.schur))
}
