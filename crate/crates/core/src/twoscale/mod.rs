//! Two-scale solver: patch problems on the fine mesh feed enrichment
//! functions to a coarse enriched problem, whose solution drives the patch
//! boundaries of the next iteration.

mod patch;
mod rank;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddsolver::DdError;
use crate::elasticity::{ElasticityError, LoadSet, Material};
use crate::mesh::{classify, BoundaryConditions, Classification, DofPartition, MeshError, NestedMesh};
use crate::runtime::{partition, run, RunConfig, RuntimeError};
use crate::scheduler::{build_schedule, PatchGraph, Schedule, ScheduleError, Variant};
use crate::sparse::SparseError;
use crate::transfer::TransferError;

pub use patch::PatchSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Elasticity(#[from] ElasticityError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Dd(#[from] DdError),
    #[error("patch {patch} (node {node}) cannot be factorized: {source}")]
    SingularPatch { patch: usize, node: usize, source: SparseError },
    #[error("coarse problem: {0}")]
    Coarse(SparseError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("warm start has {got} values, expected {expected}")]
    WarmStart { expected: usize, got: usize },
    #[error("element owner table covers {got} elements, mesh has {expected}")]
    Owners { expected: usize, got: usize },
}

/// Solution strategy for the coarse problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoarseStrategy {
    /// Factorize and solve every iteration.
    Direct,
    /// Switch to conjugate gradient preconditioned by the last factorization
    /// once the residual is small enough.
    Iterative,
    /// Schur complement domain decomposition, one domain per rank.
    DomainDecomposition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoarseKind {
    Direct,
    Iterative,
    DomainDecomposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsConfig {
    pub eps: f64,
    pub max_iterations: usize,
    pub strategy: CoarseStrategy,
    /// Ranks taking part in the direct coarse solve.
    pub nbp_max: usize,
    /// The iterative coarse solver starts once `resi < eps · switch_factor`.
    pub switch_factor: f64,
    /// ... and once this many iterations have been completed.
    pub switch_after: usize,
    /// Conjugate gradient iteration count that triggers a new factorization.
    pub refresh_above: usize,
    /// Conjugate gradient tolerance relative to `eps`.
    pub cg_eps_factor: f64,
    pub cg_iter_max: usize,
    /// Stop after this many consecutive increases above `stagnation_factor`
    /// times the smallest residual seen.
    pub stagnation_window: usize,
    pub stagnation_factor: f64,
    pub variant: Variant,
    /// Relative threshold for pinning null pivots of the coarse factorization.
    pub null_pivot_rel: f64,
    /// Keep the fine field of every iteration in the outcome.
    pub record_iterates: bool,
}

impl Default for TsConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_iterations: 100,
            strategy: CoarseStrategy::Direct,
            nbp_max: 1,
            switch_factor: 1e4,
            switch_after: 2,
            refresh_above: 13,
            cg_eps_factor: 1e-2,
            cg_iter_max: 1000,
            stagnation_window: 5,
            stagnation_factor: 10.0,
            variant: Variant::V2,
            null_pivot_rel: 1e-10,
            record_iterates: false,
        }
    }
}

impl TsConfig {
    pub fn validate(&self) -> Result<(), TsError> {
        if !(self.eps > 0.0) {
            return Err(TsError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.nbp_max == 0 {
            return Err(TsError::Config("nbp_max must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(TsError::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Field of a previous computation on the same reference mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    /// Values on the free reference dofs.
    pub fine: Vec<f64>,
    /// Coarse free vector, used as the first iterate of iterative coarse solves.
    pub coarse: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    Stagnated,
    /// No load: the solution is zero.
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub resi: f64,
    pub coarse: CoarseKind,
    pub cg_iterations: usize,
    pub seconds: f64,
    pub patch_flops: u64,
    pub product_flops: u64,
    pub coarse_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsOutcome {
    pub termination: Termination,
    pub records: Vec<IterationRecord>,
    /// `‖B_r‖`.
    pub b_norm: f64,
    /// Element products and patch factorizations done before the loop.
    pub init_flops: u64,
    pub coarse: Vec<f64>,
    /// Final field on the free reference dofs.
    pub fine: Vec<f64>,
    /// Fine field after each iteration, when requested.
    pub iterates: Vec<Vec<f64>>,
    pub schedule: Schedule,
}

impl TsOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Converged | Termination::Trivial)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.resi).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,resi,coarse,cg_iterations,seconds,patch_flops,product_flops,coarse_flops\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{:?},{},{:.6},{},{},{}",
                r.iteration, r.resi, r.coarse, r.cg_iterations, r.seconds, r.patch_flops, r.product_flops, r.coarse_flops
            );
        }
        s
    }
}

/// Mesh, boundary conditions, material and loads with the derived dof sets.
#[derive(Clone)]
pub struct Problem {
    pub mesh: NestedMesh,
    pub cls: Classification,
    pub dofs: DofPartition,
    pub bc: BoundaryConditions,
    pub material: Material,
    pub loads: LoadSet,
}

impl Problem {
    pub fn new(mesh: NestedMesh, bc: BoundaryConditions, material: Material, loads: LoadSet) -> Result<Self, TsError> {
        loads.validate(&bc)?;
        let cls = classify(&mesh);
        let dofs = DofPartition::build(&mesh, &cls, &bc)?;
        Ok(Self { mesh, cls, dofs, bc, material, loads })
    }

    /// Same problem with another material and load set.
    pub fn with_data(&self, material: Material, loads: LoadSet) -> Result<Self, TsError> {
        loads.validate(&self.bc)?;
        Ok(Self { material, loads, ..self.clone() })
    }

    /// Weighted partition of the macro elements (weight = micro element count).
    pub fn partition(&self, ranks: usize) -> Result<Vec<usize>, TsError> {
        let coarse = self.mesh.coarse();
        let weights: Vec<f64> = (0..coarse.tets.len()).map(|e| self.mesh.macro_micro(e).len() as f64).collect();
        Ok(partition(&coarse.dual_graph(), &weights, ranks)?.owner)
    }

    pub fn patch_graph(&self, owner: &[usize], ranks: usize) -> PatchGraph {
        PatchGraph::from_classification(&self.cls, owner, ranks)
    }

    /// Patch system of patch `p`, assembled on one process.
    pub fn patch_system(&self, p: usize) -> Result<PatchSystem, TsError> {
        let patch = &self.cls.patches[p];
        let systems = patch
            .elements
            .iter()
            .map(|&e| crate::elasticity::assemble_macro(&self.mesh, e, &self.material, &self.loads))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<_> = systems.iter().collect();
        PatchSystem::assemble(p, &self.dofs.patches[p], &refs).map_err(|source| TsError::SingularPatch { patch: p, node: patch.node, source })
    }

    fn check_owner(&self, owner: &[usize]) -> Result<usize, TsError> {
        let n = self.mesh.macro_count();
        if owner.len() != n {
            return Err(TsError::Owners { expected: n, got: owner.len() });
        }
        Ok(owner.iter().max().map_or(1, |m| m + 1))
    }
}

/// Runs the solver on `ranks` simulated ranks with the default partition.
pub fn ts_solve(problem: &Problem, ranks: usize, config: &TsConfig, warm: Option<&WarmStart>) -> Result<TsOutcome, TsError> {
    let owner = problem.partition(ranks)?;
    ts_solve_partitioned(problem, &owner, config, warm)
}

/// Runs the solver with an explicit element-to-rank map.
pub fn ts_solve_partitioned(problem: &Problem, owner: &[usize], config: &TsConfig, warm: Option<&WarmStart>) -> Result<TsOutcome, TsError> {
    config.validate()?;
    let ranks = problem.check_owner(owner)?;
    if let Some(w) = warm {
        let n = problem.dofs.reference_free.len();
        if w.fine.len() != n {
            return Err(TsError::WarmStart { expected: n, got: w.fine.len() });
        }
        if let Some(c) = &w.coarse {
            if c.len() != problem.dofs.free_count() {
                return Err(TsError::WarmStart { expected: problem.dofs.free_count(), got: c.len() });
            }
        }
    }
    let schedule = build_schedule(&problem.patch_graph(owner, ranks), config.variant)?;
    let results = run(RunConfig::new(ranks), |comm| rank::solve(comm, problem, owner, &schedule, config, warm))?;
    let mut out = None;
    for r in results {
        if let Some(o) = r? {
            out = Some(o);
        }
    }
    Ok(out.expect("rank 0 returns the outcome"))
}

/// `(resi, ‖B_r‖)` of a fine field given on the free reference dofs,
/// accumulated over `owner`'s ranks exactly as inside the solver.
pub fn residual_on_ranks(problem: &Problem, owner: &[usize], fine: &[f64]) -> Result<(f64, f64), TsError> {
    let ranks = problem.check_owner(owner)?;
    let results = run(RunConfig::new(ranks), |comm| rank::residual_only(comm, problem, owner, fine))?;
    results.into_iter().next().expect("rank 0")
}
