//! Case construction and run orchestration behind the command line.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cases::{ConeDamage, CubicField, Microstructure};
use super::metrics::{continuous_errors, energy, interpolated_errors, nodal_interpolant, ErrorReport};
use super::reference::ReferenceSystem;
use crate::ddsolver::{dd_solve, DdError, DdOptions};
use crate::elasticity::{assemble_macro, ElasticityError, LoadSet, Material, VectorField};
use crate::mesh::{BoundaryConditions, CoarseMesh, MeshError, NestedMesh, Point};
use crate::runtime::{run, RunConfig, RuntimeError};
use crate::scheduler::validate;
use crate::sparse::SparseError;
use crate::transfer::CoarseContribution;
use crate::twoscale::{ts_solve, CoarseStrategy, Problem, Termination, TsConfig, TsError, TsOutcome, WarmStart};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Elasticity(#[from] ElasticityError),
    #[error(transparent)]
    TwoScale(#[from] TsError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Dd(#[from] DdError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("invalid case: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum CaseKind {
    CubicPlate,
    MicroStructure,
    ConeBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum SolverKind {
    /// Two-scale, direct coarse solves.
    Ts,
    /// Two-scale, coarse solves switching to preconditioned conjugate gradient.
    Tsi,
    /// Two-scale, domain decomposition for the coarse problem.
    Tsdd,
    /// Domain decomposition on the reference problem.
    Dd,
    /// Direct solve of the reference problem.
    Fr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case: CaseKind,
    /// Coarse cells of the box along each axis; every cell holds six tetrahedra.
    pub cells: [usize; 3],
    /// Refinement depth of the solution patchwork.
    pub levels: u32,
    pub eps: f64,
    pub max_iterations: usize,
    pub solver: SolverKind,
    pub ranks: usize,
    /// Run the unperturbed problem first and restart from its field.
    pub warm_start: bool,
    /// Relative random change of every region modulus, percent.
    pub perturb_percent: f64,
    pub seed: u64,
    pub planes: usize,
    pub young_min: f64,
    pub young_max: f64,
    pub cone_top: f64,
    /// Upper bound applied to the cone damage so no element loses all stiffness.
    pub damage_cap: f64,
}

impl CaseSpec {
    fn base(case: CaseKind, cells: [usize; 3]) -> Self {
        Self {
            case,
            cells,
            levels: 2,
            eps: 1e-7,
            max_iterations: 200,
            solver: SolverKind::Ts,
            ranks: 1,
            warm_start: false,
            perturb_percent: 0.0,
            seed: 7,
            planes: 16,
            young_min: 36.5,
            young_max: 3650.0,
            cone_top: -400.0,
            damage_cap: 0.9,
        }
    }

    /// Plate `[0,2]×[0,1]×[0,0.5]`, every coarse element refined.
    pub fn cubic() -> Self {
        Self::base(CaseKind::CubicPlate, [4, 2, 1])
    }

    /// Cube `[0,2]³` cut by planes, every coarse element refined.
    pub fn micro() -> Self {
        Self::base(CaseKind::MicroStructure, [3, 3, 3])
    }

    /// Box around the upper part of the damage cone; only elements touching
    /// the cone band are refined.
    pub fn cone() -> Self {
        Self::base(CaseKind::ConeBox, [4, 2, 4])
    }

    pub fn preset(case: CaseKind) -> Self {
        match case {
            CaseKind::CubicPlate => Self::cubic(),
            CaseKind::MicroStructure => Self::micro(),
            CaseKind::ConeBox => Self::cone(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.levels == 0 {
            return Err(BenchError::Spec("the solution patchwork needs at least one level".into()));
        }
        if self.ranks == 0 {
            return Err(BenchError::Spec("at least one rank is needed".into()));
        }
        if matches!(self.solver, SolverKind::Dd | SolverKind::Tsdd) && self.ranks < 2 {
            return Err(BenchError::Spec("domain decomposition needs at least two ranks".into()));
        }
        if self.cells.contains(&0) {
            return Err(BenchError::Spec("every axis needs at least one cell".into()));
        }
        if !(0.0..1.0).contains(&self.damage_cap) {
            return Err(BenchError::Spec(format!("damage cap {} outside [0, 1)", self.damage_cap)));
        }
        Ok(())
    }
}

/// Problem of a case and, for the cubic plate, its exact solution.
pub struct BuiltCase {
    pub problem: Problem,
    pub exact: Option<CubicField>,
}

fn outward_normal(tag: u32) -> [f64; 3] {
    let mut n = [0.0; 3];
    let axis = ((tag - 1) / 2) as usize;
    n[axis] = if tag % 2 == 1 { -1.0 } else { 1.0 };
    n
}

/// Box vertex `(i, j, k)` of a mesh with `cells` cells.
fn box_vertex(cells: [usize; 3], i: usize, j: usize, k: usize) -> usize {
    i + (cells[0] + 1) * (j + (cells[1] + 1) * k)
}

/// Three point constraints removing the rigid motions of a box: the origin
/// fully, the end of the x edge in y and z, the end of the y edge in z.
fn rigid_pins(bc: BoundaryConditions, cells: [usize; 3]) -> BoundaryConditions {
    bc.pin(box_vertex(cells, 0, 0, 0), [true; 3])
        .pin(box_vertex(cells, cells[0], 0, 0), [false, true, true])
        .pin(box_vertex(cells, 0, cells[1], 0), [false, false, true])
}

/// Random factor in `[1 − p, 1 + p]` shared by every point of a region.
fn perturbation(seed: u64, code: u64, percent: f64) -> f64 {
    if percent == 0.0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ code.rotate_left(17));
    1.0 + percent / 100.0 * rng.gen_range(-1.0..=1.0)
}

fn micro_material(spec: &CaseSpec, percent: f64) -> Result<Material, ElasticityError> {
    let ms = Microstructure::new(spec.planes, spec.young_min, spec.young_max);
    let seed = spec.seed;
    Ok(Material::new(spec.young_min, 0.2)?.with_young_field(Arc::new(move |x| ms.young(x) * perturbation(seed, ms.region_code(x), percent))))
}

fn cone_refines(cone: &ConeDamage, p: &[Point; 4]) -> bool {
    // sample vertices, edge points and the centroid
    let mut hit = false;
    for a in 0..4 {
        for b in a..4 {
            for t in [0.0, 0.25, 0.5, 0.75] {
                let q = [0, 1, 2].map(|d| (1.0 - t) * p[a][d] + t * p[b][d]);
                hit |= cone.in_envelope(q);
            }
        }
    }
    hit || cone.in_envelope([0, 1, 2].map(|d| p.iter().map(|v| v[d]).sum::<f64>() / 4.0))
}

/// Builds the problem of `spec`, with the modulus perturbation applied when
/// `perturbed` is set.
pub fn build_case(spec: &CaseSpec, perturbed: bool) -> Result<BuiltCase, BenchError> {
    spec.validate()?;
    let percent = if perturbed { spec.perturb_percent } else { 0.0 };
    match spec.case {
        CaseKind::CubicPlate => {
            let field = CubicField::default();
            let coarse = CoarseMesh::boxed([0.0; 3], [field.length, 1.0, 0.5], spec.cells);
            let mesh = NestedMesh::new(coarse).refine(|_| true, spec.levels)?;
            let mut bc = BoundaryConditions::default();
            let mut loads = LoadSet::default().with_body(Arc::new(move |x| field.body_force(x))).with_degrees(2, 3);
            for tag in 1..=6 {
                bc = bc.neumann(tag);
                let n = outward_normal(tag);
                let t: VectorField = Arc::new(move |x| field.traction(x, n));
                loads = loads.with_traction(tag, t);
            }
            let material = Material::new(field.young, field.poisson)?;
            let problem = Problem::new(mesh, rigid_pins(bc, spec.cells), material, loads)?;
            Ok(BuiltCase { problem, exact: Some(field) })
        }
        CaseKind::MicroStructure => {
            let coarse = CoarseMesh::boxed([0.0; 3], [2.0; 3], spec.cells);
            let mesh = NestedMesh::new(coarse).refine(|_| true, spec.levels)?;
            let mut bc = BoundaryConditions::default();
            let mut loads = LoadSet::default();
            for tag in 1..=6 {
                bc = bc.neumann(tag);
                let n = outward_normal(tag);
                loads = loads.with_traction(tag, Arc::new(move |_| n.map(|v| -v)));
            }
            let problem = Problem::new(mesh, rigid_pins(bc, spec.cells), micro_material(spec, percent)?, loads)?;
            Ok(BuiltCase { problem, exact: None })
        }
        CaseKind::ConeBox => {
            let cone = ConeDamage { top: spec.cone_top, ..ConeDamage::default() };
            let coarse = CoarseMesh::boxed([-200.0, -560.0, -200.0], [200.0, -340.0, 200.0], spec.cells);
            let marks: Vec<bool> = (0..coarse.tets.len()).map(|e| cone_refines(&cone, &coarse.element_points(e))).collect();
            let mesh = NestedMesh::new(coarse).refine(|e| marks[e], spec.levels)?;
            let bc = BoundaryConditions::default().clamp(3, [true; 3]).neumann(4);
            let loads = LoadSet::default().with_traction(4, Arc::new(|_| [0.0, 1.0, 0.0]));
            let cap = spec.damage_cap;
            let material = Material::new(26.4, 0.193)?.with_damage(Arc::new(move |x| cone.damage(x).min(cap)));
            let problem = Problem::new(mesh, bc, material, loads)?;
            Ok(BuiltCase { problem, exact: None })
        }
    }
}

/// Reference problem solved by domain decomposition, one domain per rank,
/// macro elements distributed by the default partition.
pub fn reference_dd(problem: &Problem, ranks: usize, eps: f64, warm: Option<&[f64]>) -> Result<(Vec<f64>, usize), BenchError> {
    let owner = problem.partition(ranks)?;
    let dim = problem.dofs.reference_free.len();
    let out = run(RunConfig::new(ranks), |comm| -> Result<(Vec<f64>, usize), BenchError> {
        let mut parts = Vec::new();
        for e in (0..problem.mesh.macro_count()).filter(|&e| owner[e] == comm.rank()) {
            let sys = assemble_macro(&problem.mesh, e, &problem.material, &problem.loads)?;
            let dofs = sys.nodes.iter().flat_map(|&n| [0, 1, 2].map(|c| problem.dofs.reference_index[3 * n + c])).collect();
            parts.push(CoarseContribution { element: e, dofs, matrix: sys.matrix.to_dense(), rhs: sys.rhs });
        }
        let refs: Vec<&CoarseContribution> = parts.iter().collect();
        let (u, report) = dd_solve(comm, dim, &refs, warm, &DdOptions { eps, ..DdOptions::default() })?;
        Ok((u, report.iterations))
    })?;
    out.into_iter().next().expect("rank 0")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub final_resi: f64,
    pub history: Vec<f64>,
    /// `‖u − u_R‖_E / ‖u_R‖_E`.
    pub reference_error: f64,
    pub flops: u64,
    pub sequences: usize,
    pub mean_distributed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spec: CaseSpec,
    pub reference_dofs: usize,
    pub coarse_dofs: usize,
    pub macro_elements: usize,
    pub micro_elements: usize,
    pub enriched_nodes: usize,
    pub hanging_nodes: usize,
    /// Unperturbed run the warm start comes from.
    pub initial: Option<SolveSummary>,
    pub solve: SolveSummary,
    /// Energy errors against the exact field, continuous form.
    pub errors: Option<ErrorReport>,
    /// Same with the exact field replaced by its nodal interpolant.
    pub interpolated_errors: Option<ErrorReport>,
}

impl RunSummary {
    /// Residual history as `iteration,resi` lines.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,resi\n");
        for (i, r) in self.solve.history.iter().enumerate() {
            let _ = writeln!(s, "{},{r:e}", i + 1);
        }
        s
    }
}

/// Final result of a case run together with the fields for post-processing.
pub struct CaseRun {
    pub summary: RunSummary,
    pub problem: Problem,
    pub reference: ReferenceSystem,
    /// Reference solution on the free reference dofs.
    pub reference_solution: Vec<f64>,
    /// Solution of the selected solver on the free reference dofs.
    pub solution: Vec<f64>,
    pub outcome: Option<TsOutcome>,
}

fn ts_config(spec: &CaseSpec) -> TsConfig {
    let strategy = match spec.solver {
        SolverKind::Tsi => CoarseStrategy::Iterative,
        SolverKind::Tsdd => CoarseStrategy::DomainDecomposition,
        _ => CoarseStrategy::Direct,
    };
    TsConfig { eps: spec.eps, max_iterations: spec.max_iterations, strategy, ..TsConfig::default() }
}

fn relative_gap(r: &ReferenceSystem, u: &[f64], reference: &[f64]) -> f64 {
    let d: Vec<f64> = u.iter().zip(reference).map(|(a, b)| a - b).collect();
    (r.energy(&d).max(0.0) / r.energy(reference)).sqrt()
}

fn summarize(out: &TsOutcome, problem: &Problem, ranks: usize, r: &ReferenceSystem, reference: &[f64]) -> Result<SolveSummary, BenchError> {
    let graph = problem.patch_graph(&problem.partition(ranks)?, ranks);
    let seq = validate(&out.schedule, &graph).sequences;
    Ok(SolveSummary {
        iterations: out.iterations(),
        termination: Some(out.termination),
        final_resi: out.history().last().copied().unwrap_or(0.0),
        history: out.history(),
        reference_error: relative_gap(r, &out.fine, reference),
        flops: out.init_flops + out.records.iter().map(|x| x.patch_flops + x.product_flops + x.coarse_flops).sum::<u64>(),
        sequences: out.schedule.sequences(),
        mean_distributed_fraction: if seq.is_empty() { 0.0 } else { seq.iter().map(|s| s.distributed_fraction).sum::<f64>() / seq.len() as f64 },
    })
}

fn direct_summary(history: f64, reference_error: f64) -> SolveSummary {
    SolveSummary {
        iterations: 1,
        termination: None,
        final_resi: history,
        history: vec![history],
        reference_error,
        flops: 0,
        sequences: 0,
        mean_distributed_fraction: 0.0,
    }
}

fn solve_once(spec: &CaseSpec, problem: &Problem, r: &ReferenceSystem, reference: &[f64], warm: Option<&WarmStart>) -> Result<(Vec<f64>, SolveSummary, Option<TsOutcome>), BenchError> {
    match spec.solver {
        SolverKind::Fr => Ok((reference.to_vec(), direct_summary(r.relative_residual(reference), 0.0), None)),
        SolverKind::Dd => {
            let (u, iterations) = reference_dd(problem, spec.ranks, spec.eps, warm.map(|w| w.fine.as_slice()))?;
            let mut s = direct_summary(r.relative_residual(&u), relative_gap(r, &u, reference));
            s.iterations = iterations;
            Ok((u, s, None))
        }
        _ => {
            let out = ts_solve(problem, spec.ranks, &ts_config(spec), warm)?;
            let s = summarize(&out, problem, spec.ranks, r, reference)?;
            Ok((out.fine.clone(), s, Some(out)))
        }
    }
}

/// Builds and solves a case, checking the result against the reference solution.
pub fn run_case(spec: &CaseSpec) -> Result<CaseRun, BenchError> {
    spec.validate()?;
    let perturbed = spec.perturb_percent != 0.0;
    let mut initial = None;
    let mut warm = None;
    if spec.warm_start {
        let base = build_case(spec, false)?;
        let r = ReferenceSystem::assemble(&base.problem.mesh, &base.problem.dofs, &base.problem.material, &base.problem.loads)?;
        let u = r.solve()?;
        let (fine, summary, outcome) = solve_once(spec, &base.problem, &r, &u, None)?;
        warm = Some(WarmStart { fine, coarse: outcome.map(|o| o.coarse) });
        initial = Some(summary);
    }
    let built = build_case(spec, perturbed)?;
    let problem = built.problem;
    let r = ReferenceSystem::assemble(&problem.mesh, &problem.dofs, &problem.material, &problem.loads)?;
    let reference_solution = r.solve()?;
    let (solution, solve, outcome) = solve_once(spec, &problem, &r, &reference_solution, warm.as_ref())?;

    let (mut errors, mut interpolated) = (None, None);
    if let Some(field) = built.exact {
        let ts = r.expand(&problem.mesh, &solution);
        let rf = r.expand(&problem.mesh, &reference_solution);
        errors = Some(continuous_errors(&problem.mesh, &problem.material, &ts, &rf, &|x| field.gradient(x), 4)?);
        let c = nodal_interpolant(&problem.mesh, &|x| field.displacement(x));
        interpolated = Some(interpolated_errors(&problem.mesh, &problem.material, &ts, &rf, &c)?);
    }
    let summary = RunSummary {
        spec: spec.clone(),
        reference_dofs: r.dim(),
        coarse_dofs: problem.dofs.free_count(),
        macro_elements: problem.mesh.macro_count(),
        micro_elements: problem.mesh.micro().len(),
        enriched_nodes: problem.cls.enriched.len(),
        hanging_nodes: problem.mesh.hanging().len(),
        initial,
        solve,
        errors,
        interpolated_errors: interpolated,
    };
    Ok(CaseRun { summary, problem, reference: r, reference_solution, solution, outcome })
}

/// `node x y z ux uy uz` table of a nodal field.
pub fn field_table(mesh: &NestedMesh, full: &[f64]) -> String {
    let mut s = String::from("node x y z ux uy uz\n");
    for (n, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(s, "{n} {:e} {:e} {:e} {:e} {:e} {:e}", p[0], p[1], p[2], full[3 * n], full[3 * n + 1], full[3 * n + 2]);
    }
    s
}

/// `‖u‖²_E` of a solution given on the free reference dofs.
pub fn solution_energy(run: &CaseRun, u: &[f64]) -> Result<f64, BenchError> {
    Ok(energy(&run.problem.mesh, &run.problem.material, &run.reference.expand(&run.problem.mesh, u))?)
}
