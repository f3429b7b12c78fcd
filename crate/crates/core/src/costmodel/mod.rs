//! Analytic flop model of the two-scale solver on an octree-refined cube of
//! trilinear hexahedra, compared with one direct solve of the fine problem.
//!
//! Sparse direct solves are modeled by a dense equivalent dimension
//! `n_f = sqrt(SR·n²)`: factorization costs `n_f³`, one back/forward
//! substitution `2·n_f²`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("coarse level {coarse} exceeds target level {target}")]
    Levels { coarse: u32, target: u32 },
    #[error("at least one iteration is needed")]
    Iterations,
    #[error("sparse ratio {0} is outside (0, 1]")]
    SparseRatio(f64),
    #[error("full-rank solve count must be at least 1")]
    FullRankSolves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Target level `L`.
    pub level: u32,
    /// Coarse level `L_c`.
    pub coarse_level: u32,
    /// Two-scale iterations `N_l`.
    pub iterations: u32,
    pub sr_coarse: f64,
    pub sr_patch: f64,
    /// Number of direct solves charged to the full-rank solver; the global
    /// matrix is given the coarse sparse ratio.
    pub full_rank_solves: u32,
}

impl CostParams {
    pub fn new(level: u32, coarse_level: u32, iterations: u32, sr: f64) -> Self {
        Self { level, coarse_level, iterations, sr_coarse: sr, sr_patch: sr, full_rank_solves: 1 }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if self.coarse_level > self.level {
            return Err(CostError::Levels { coarse: self.coarse_level, target: self.level });
        }
        if self.iterations == 0 {
            return Err(CostError::Iterations);
        }
        for sr in [self.sr_coarse, self.sr_patch] {
            if !(sr > 0.0 && sr <= 1.0) {
                return Err(CostError::SparseRatio(sr));
            }
        }
        if self.full_rank_solves == 0 {
            return Err(CostError::FullRankSolves);
        }
        Ok(())
    }
}

/// Classical dofs of the cube at level `l`: `3·(2^l + 1)³`.
pub fn nb_dof(l: u32) -> u64 {
    3 * (side(l)).pow(3)
}

fn side(l: u32) -> u64 {
    (1u64 << l) + 1
}

pub fn dense_dim(n: f64, sr: f64) -> f64 {
    (sr * n * n).sqrt()
}

pub fn count_fact(n: f64, sr: f64) -> f64 {
    dense_dim(n, sr).powi(3)
}

pub fn count_bf(n: f64, sr: f64) -> f64 {
    2.0 * dense_dim(n, sr).powi(2)
}

pub fn count_resolve(n: f64, sr: f64) -> f64 {
    count_fact(n, sr) + count_bf(n, sr)
}

/// Patch families of the cube, by the position of the enriched vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatchKind {
    Corner,
    Edge,
    Face,
    Volume,
}

impl PatchKind {
    pub const ALL: [PatchKind; 4] = [PatchKind::Corner, PatchKind::Edge, PatchKind::Face, PatchKind::Volume];

    /// Number of patches of this kind at coarse level `lc`.
    pub fn count(self, lc: u32) -> u64 {
        let m = (1u64 << lc) - 1;
        match self {
            PatchKind::Corner => 8,
            PatchKind::Edge => 12 * m,
            PatchKind::Face => 6 * m * m,
            PatchKind::Volume => m * m * m,
        }
    }

    /// Dofs of one patch of this kind, all nodes of its closed support included.
    pub fn dofs(self, lc: u32, l: u32) -> u64 {
        let n = side(l - lc);
        3 * match self {
            PatchKind::Corner => n * n * n,
            PatchKind::Edge => 2 * n * n * n - n * n,
            PatchKind::Face => 4 * n * n * n - 4 * n * n + n,
            PatchKind::Volume => 8 * n * n * n - 12 * n * n + 6 * n - 1,
        }
    }
}

/// One factorization and `iterations` substitutions.
pub fn cost_one_patch(dofs: f64, iterations: u32, sr: f64) -> f64 {
    count_fact(dofs, sr) + f64::from(iterations) * count_bf(dofs, sr)
}

pub fn cost_patch(p: &CostParams) -> f64 {
    PatchKind::ALL
        .iter()
        .map(|k| k.count(p.coarse_level) as f64 * cost_one_patch(k.dofs(p.coarse_level, p.level) as f64, p.iterations, p.sr_patch))
        .sum()
}

/// The enriched coarse problem has twice the classical dofs and is solved
/// from scratch every iteration.
pub fn cost_coarse(p: &CostParams) -> f64 {
    f64::from(p.iterations) * count_resolve(2.0 * nb_dof(p.coarse_level) as f64, p.sr_coarse)
}

pub fn cost_ts(p: &CostParams) -> Result<f64, CostError> {
    p.validate()?;
    Ok(cost_patch(p) + cost_coarse(p))
}

pub fn cost_full_rank(p: &CostParams) -> Result<f64, CostError> {
    p.validate()?;
    Ok(f64::from(p.full_rank_solves) * count_resolve(nb_dof(p.level) as f64, p.sr_coarse))
}

/// Full-rank cost over two-scale cost; above 1 the two-scale solver is cheaper.
pub fn ratio(p: &CostParams) -> Result<f64, CostError> {
    Ok(cost_full_rank(p)? / cost_ts(p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalLevel {
    pub coarse_level: u32,
    pub cost: f64,
    /// The minimum lies strictly between 0 and the target level.
    pub interior: bool,
    /// The optimum is three levels below the target.
    pub jump_of_three: bool,
}

/// Coarse level minimizing the two-scale cost for target level `template.level`.
pub fn optimal_coarse_level(template: &CostParams) -> Result<OptimalLevel, CostError> {
    let mut best: Option<(u32, f64)> = None;
    for lc in 0..=template.level {
        let c = cost_ts(&CostParams { coarse_level: lc, ..*template })?;
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((lc, c));
        }
    }
    let (coarse_level, cost) = best.expect("level range is never empty");
    Ok(OptimalLevel {
        coarse_level,
        cost,
        interior: coarse_level > 0 && coarse_level < template.level,
        jump_of_three: template.level - coarse_level == 3,
    })
}

/// CSV grid over every `(L, L_c)` with `L` in `levels` and `L_c ≤ L`.
pub fn sweep_csv(levels: std::ops::RangeInclusive<u32>, template: &CostParams) -> Result<String, CostError> {
    let mut s = String::from("level,coarse_level,cost_patch,cost_coarse,cost_ts,cost_full_rank,ratio\n");
    for l in levels {
        for lc in 0..=l {
            let p = CostParams { level: l, coarse_level: lc, ..*template };
            let ts = cost_ts(&p)?;
            let fr = cost_full_rank(&p)?;
            let _ = writeln!(s, "{l},{lc},{:e},{:e},{ts:e},{fr:e},{:e}", cost_patch(&p), cost_coarse(&p), fr / ts);
        }
    }
    Ok(s)
}
