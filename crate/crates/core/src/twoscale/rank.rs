//! The solver as run by one rank.

use std::collections::BTreeMap;
use std::time::Instant;

use super::{CoarseKind, CoarseStrategy, IterationRecord, PatchSystem, Problem, Termination, TsConfig, TsError, TsOutcome, WarmStart};
use crate::ddsolver::{dd_solve, DdOptions};
use crate::elasticity::{assemble_macro, MacroSystem};
use crate::runtime::Comm;
use crate::scheduler::Schedule;
use crate::sparse::{pcg, DoubleSum, Factor, FactorOptions, LocalSpace, SparseSym, TripletBuilder};
use crate::transfer::{add_contributions, assemble_coarse, classical_products, enrichment_products, plain_contribution, CoarseContribution, ElementProducts, ElementTransfer};

const TAG_KEYED: u32 = 0x75_0001;

/// Returns the first error of any rank on every rank.
fn agree<T>(comm: &Comm, r: Result<T, TsError>) -> Result<T, TsError> {
    let errs = comm.all_gather(r.as_ref().err().cloned());
    match r {
        Err(e) => Err(e),
        Ok(v) => match errs.into_iter().flatten().next() {
            Some(e) => Err(e),
            None => Ok(v),
        },
    }
}

/// `Σ_dof (Σ_elements v)²` over included dofs. Each dof is summed by its
/// owner in element order, so the value does not depend on the rank count.
fn keyed_square_sum(comm: &Comm, parts: Vec<(usize, usize, f64)>, owner_of: &[usize]) -> f64 {
    let me = comm.rank();
    let mut out: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); comm.size()];
    for t in parts {
        out[owner_of[t.1 / 3]].push(t);
    }
    let mut mine = std::mem::take(&mut out[me]);
    for (r, o) in out.into_iter().enumerate() {
        if r != me {
            comm.send(r, TAG_KEYED, o);
        }
    }
    for r in 0..comm.size() {
        if r != me {
            mine.extend(comm.recv::<Vec<(usize, usize, f64)>>(r, TAG_KEYED));
        }
    }
    mine.sort_by_key(|a| (a.1, a.0));
    let mut terms = Vec::new();
    let mut i = 0;
    while i < mine.len() {
        let dof = mine[i].1;
        let mut s = DoubleSum::default();
        while i < mine.len() && mine[i].1 == dof {
            s.add(mine[i].2);
            i += 1;
        }
        let s = s.value();
        terms.push((dof as u64, s * s));
    }
    comm.sum_keyed(terms)
}

/// Tables shared by all procedures of one rank.
struct Ctx<'p> {
    pb: &'p Problem,
    me: usize,
    elements: Vec<usize>,
    systems: BTreeMap<usize, MacroSystem>,
    /// Lowest rank holding the node among all elements / solution-patchwork elements.
    node_owner: Vec<usize>,
    sp_node_owner: Vec<usize>,
    /// Coarse vertices between the solution patchwork and the rest.
    frontier: Vec<bool>,
}

impl<'p> Ctx<'p> {
    fn new(comm: &Comm, pb: &'p Problem, owner: &[usize]) -> Result<Self, TsError> {
        let me = comm.rank();
        let nm = pb.mesh.macro_count();
        let elements: Vec<usize> = (0..nm).filter(|&e| owner[e] == me).collect();
        let systems: Result<BTreeMap<usize, MacroSystem>, TsError> =
            elements.iter().map(|&e| Ok((e, assemble_macro(&pb.mesh, e, &pb.material, &pb.loads)?))).collect();
        let systems = agree(comm, systems)?;
        let nn = pb.mesh.nodes().len();
        let mut node_owner = vec![usize::MAX; nn];
        let mut sp_node_owner = vec![usize::MAX; nn];
        for e in 0..nm {
            for n in pb.mesh.macro_nodes(e) {
                node_owner[n] = node_owner[n].min(owner[e]);
                if pb.cls.sp[e] {
                    sp_node_owner[n] = sp_node_owner[n].min(owner[e]);
                }
            }
        }
        let mut frontier = vec![false; nn];
        for &v in &pb.dofs.interface_nodes {
            frontier[v] = true;
        }
        Ok(Self { pb, me, elements, systems, node_owner, sp_node_owner, frontier })
    }

    fn is_free(&self, dof: usize) -> bool {
        self.pb.dofs.reference_index[dof].is_some()
    }

    fn b_norm(&self, comm: &Comm) -> f64 {
        let mut parts = Vec::new();
        for (&e, sys) in &self.systems {
            for (k, &b) in sys.rhs.iter().enumerate() {
                let dof = 3 * sys.nodes[k / 3] + k % 3;
                if self.is_free(dof) {
                    parts.push((e, dof, b));
                }
            }
        }
        keyed_square_sum(comm, parts, &self.node_owner).sqrt()
    }

    /// `‖A_FF u_F − B_F‖` over solution-patchwork rows; rows on the frontier,
    /// Dirichlet rows and rows outside the patchwork are left out.
    fn residual_norm(&self, comm: &Comm, fields: &BTreeMap<usize, Vec<f64>>) -> f64 {
        let mut parts = Vec::new();
        for (&e, u) in fields {
            let sys = &self.systems[&e];
            let res = sys.matrix.residual_compensated(u, &sys.rhs);
            for (k, r) in res.into_iter().enumerate() {
                let node = sys.nodes[k / 3];
                let dof = 3 * node + k % 3;
                if self.is_free(dof) && !self.frontier[node] {
                    let (hi, lo) = r.parts();
                    parts.push((e, dof, hi));
                    parts.push((e, dof, lo));
                }
            }
        }
        keyed_square_sum(comm, parts, &self.sp_node_owner).sqrt()
    }

    /// Element values taken from a vector on the free reference dofs.
    fn restrict(&self, e: usize, fine: &[f64]) -> Vec<f64> {
        let sys = &self.systems[&e];
        (0..sys.dim()).map(|k| self.pb.dofs.reference_index[3 * sys.nodes[k / 3] + k % 3].map_or(0.0, |r| fine[r])).collect()
    }

    /// Fine field on the free reference dofs, assembled on rank 0.
    fn gather_fine(&self, comm: &Comm, fields: &BTreeMap<usize, Vec<f64>>, coarse: &[f64]) -> Option<Vec<f64>> {
        let dofs = &self.pb.dofs;
        let mut mine: Vec<(usize, f64)> = Vec::new();
        for (&e, u) in fields {
            let sys = &self.systems[&e];
            for (k, &v) in u.iter().enumerate() {
                if let Some(r) = dofs.reference_index[3 * sys.nodes[k / 3] + k % 3] {
                    mine.push((r, v));
                }
            }
        }
        let all = comm.gather_to(0, mine)?;
        let mut fine = vec![0.0; dofs.reference_free.len()];
        for &d in &dofs.nsp_reference_free {
            let g = dofs.free_index[d].expect("h dofs are coarse free dofs");
            fine[dofs.reference_index[d].expect("free")] = coarse[g];
        }
        for (r, v) in all.into_iter().flatten() {
            fine[r] = v;
        }
        Some(fine)
    }
}

/// Residual of a given field, for checking the accumulation.
pub(super) fn residual_only(comm: &Comm, pb: &Problem, owner: &[usize], fine: &[f64]) -> Result<(f64, f64), TsError> {
    let ctx = Ctx::new(comm, pb, owner)?;
    let b_norm = ctx.b_norm(comm);
    let fields: BTreeMap<usize, Vec<f64>> = ctx.elements.iter().filter(|&&e| pb.cls.sp[e]).map(|&e| (e, ctx.restrict(e, fine))).collect();
    let r = ctx.residual_norm(comm, &fields);
    Ok((if b_norm > 0.0 { r / b_norm } else { 0.0 }, b_norm))
}

struct SpElement {
    transfer: ElementTransfer,
    products: ElementProducts,
}

/// Two-level gather of coarse contributions to rank 0 through the first
/// `nbp_max` ranks.
struct CoarseGather<'a> {
    group: Comm<'a>,
    retained: Option<Comm<'a>>,
}

impl<'a> CoarseGather<'a> {
    fn new(comm: &Comm<'a>, nbp_max: usize) -> Self {
        let nbp = nbp_max.min(comm.size());
        let me = comm.rank();
        let group = comm.split_by_color(Some((me % nbp) as u64), me).expect("every rank joins a group");
        let retained = comm.split_by_color((me < nbp).then_some(0), me);
        Self { group, retained }
    }

    fn gather(&self, parts: Vec<CoarseContribution>) -> Option<Vec<CoarseContribution>> {
        let level1 = self.group.gather_to(0, parts).map(|v| v.into_iter().flatten().collect::<Vec<_>>());
        let retained = self.retained.as_ref()?;
        retained.gather_to(0, level1.expect("retained ranks lead their group")).map(|v| v.into_iter().flatten().collect())
    }
}

/// Rank 0 state of the direct and iterative coarse solvers.
struct CoarseSolver {
    base: SparseSym,
    base_rhs: Vec<f64>,
    factor: Option<Factor>,
    refresh: bool,
}

/// Unit diagonal for rows without any contribution (enrichment dofs whose
/// functions vanish); their right-hand side is zero.
fn pin_empty_rows(m: SparseSym) -> SparseSym {
    let diag = m.diagonal();
    if diag.iter().all(|&d| d != 0.0) {
        return m;
    }
    let mut t = TripletBuilder::with_capacity(m.dim(), m.nnz() + diag.len());
    for (r, c, v) in m.iter() {
        t.add(r, c, v);
    }
    for (i, &d) in diag.iter().enumerate() {
        if d == 0.0 {
            t.add(i, i, 1.0);
        }
    }
    t.finalize()
}

struct CoarseStep {
    solution: Vec<f64>,
    kind: CoarseKind,
    cg_iterations: usize,
    flops: u64,
}

impl CoarseSolver {
    fn factorize(m: &SparseSym, null_pivot_rel: f64) -> Result<Factor, TsError> {
        Factor::with_options(m, FactorOptions { null_pivot_rel: Some(null_pivot_rel), ..FactorOptions::default() }).map_err(TsError::Coarse)
    }

    fn unenriched(&self, classical: usize, null_pivot_rel: f64) -> Result<Vec<f64>, TsError> {
        let keep: Vec<usize> = (0..classical).collect();
        let a = pin_empty_rows(self.base.principal(&keep));
        let f = Self::factorize(&a, null_pivot_rel)?;
        let mut u = f.solve(&self.base_rhs[..classical]);
        u.resize(self.base.dim(), 0.0);
        Ok(u)
    }

    fn step(&mut self, parts: Vec<CoarseContribution>, prev: &[f64], iterative_allowed: bool, cfg: &TsConfig) -> Result<CoarseStep, TsError> {
        let (a, b) = add_contributions(&self.base, &self.base_rhs, parts.iter().collect());
        let a = pin_empty_rows(a);
        if iterative_allowed && !self.refresh {
            if let Some(f) = &self.factor {
                let before = f.solve_flops();
                let mut x = prev.to_vec();
                let report = pcg(&mut LocalSpace { matrix: &a, preconditioner: Some(f) }, &mut x, &b, cfg.eps * cfg.cg_eps_factor, cfg.cg_iter_max);
                if report.converged {
                    self.refresh = report.iterations > cfg.refresh_above;
                    let flops = f.solve_flops() - before + (report.iterations * 2 * a.nnz() * 2) as u64;
                    return Ok(CoarseStep { solution: x, kind: CoarseKind::Iterative, cg_iterations: report.iterations, flops });
                }
            }
        }
        let f = Self::factorize(&a, cfg.null_pivot_rel)?;
        let solution = f.solve(&b);
        let flops = f.factor_flops() + f.solve_flops();
        self.factor = Some(f);
        self.refresh = false;
        Ok(CoarseStep { solution, kind: CoarseKind::Direct, cg_iterations: 0, flops })
    }
}

fn enriched_pins(comm: &Comm, parts: &[CoarseContribution], first_enriched: usize, dim: usize) -> Vec<CoarseContribution> {
    let mut diag = vec![0.0; dim - first_enriched];
    for c in parts {
        let m = c.dofs.len();
        for (a, d) in c.dofs.iter().enumerate() {
            if let Some(g) = d {
                if *g >= first_enriched {
                    diag[g - first_enriched] += c.matrix[a * m + a].abs();
                }
            }
        }
    }
    let diag = comm.reduce_sum_vec(diag);
    if comm.rank() != 0 {
        return Vec::new();
    }
    diag.iter()
        .enumerate()
        .filter(|(_, &d)| d == 0.0)
        .map(|(i, _)| CoarseContribution { element: usize::MAX, dofs: vec![Some(first_enriched + i)], matrix: vec![1.0], rhs: vec![0.0] })
        .collect()
}

pub(super) fn solve(comm: &Comm, pb: &Problem, owner: &[usize], schedule: &Schedule, cfg: &TsConfig, warm: Option<&WarmStart>) -> Result<Option<TsOutcome>, TsError> {
    let started = Instant::now();
    let ctx = Ctx::new(comm, pb, owner)?;
    let me = ctx.me;
    let dofs = &pb.dofs;
    let dim = dofs.free_count();
    let classical = dofs.nsp_classical.len() + dofs.sp_classical.len();

    // element blocks
    let mut sp: BTreeMap<usize, SpElement> = BTreeMap::new();
    let mut constant: Vec<CoarseContribution> = Vec::new();
    let mut init_flops = 0u64;
    for (&e, sys) in &ctx.systems {
        if pb.cls.sp[e] {
            let transfer = ElementTransfer::new(&pb.mesh, &pb.cls, dofs, sys);
            let products = classical_products(sys, &transfer);
            init_flops += products.flops;
            constant.push(products.contribution.clone());
            sp.insert(e, SpElement { transfer, products });
        } else {
            constant.push(plain_contribution(sys, dofs));
        }
    }

    // one communicator per sequence for the distributed patch run there
    let is_distributed = |p: usize| pb.cls.patches[p].is_distributed(owner);
    let mut sequences: Vec<Option<(usize, Comm)>> = Vec::with_capacity(schedule.sequences());
    for col in &schedule.matrix {
        let color = (col[me] >= 0 && is_distributed(col[me] as usize)).then(|| col[me] as usize);
        let sub = comm.split_by_color(color.map(|p| p as u64), me);
        if let Some(p) = color {
            assert!(pb.cls.patches[p].owners(owner).contains(&me), "rank {me} scheduled on foreign patch {p}");
        }
        sequences.push(color.zip(sub));
    }
    let local_order = &schedule.local_order[me];

    // patch systems, held by the lowest participating rank
    let mut patch_systems: BTreeMap<usize, PatchSystem> = BTreeMap::new();
    let mut setup: Result<(), TsError> = Ok(());
    let build = |p: usize, members: Vec<&MacroSystem>| {
        PatchSystem::assemble(p, &dofs.patches[p], &members).map_err(|source| TsError::SingularPatch { patch: p, node: pb.cls.patches[p].node, source })
    };
    for (p, pc) in sequences.iter().flatten() {
        let mine: Vec<MacroSystem> = pb.cls.patches[*p].elements.iter().filter_map(|e| ctx.systems.get(e).cloned()).collect();
        if let Some(all) = pc.gather_to(0, mine) {
            let flat: Vec<MacroSystem> = all.into_iter().flatten().collect();
            match build(*p, flat.iter().collect()) {
                Ok(s) => {
                    patch_systems.insert(*p, s);
                }
                Err(e) => setup = Err(e),
            }
        }
    }
    for &p in local_order {
        let members: Vec<&MacroSystem> = pb.cls.patches[p].elements.iter().map(|e| &ctx.systems[e]).collect();
        match build(p, members) {
            Ok(s) => {
                patch_systems.insert(p, s);
            }
            Err(e) => setup = Err(e),
        }
    }
    agree(comm, setup)?;
    init_flops += patch_systems.values().map(|s| s.factor_flops()).sum::<u64>();

    let b_norm = ctx.b_norm(comm);
    if b_norm == 0.0 {
        return Ok((me == 0).then(|| TsOutcome {
            termination: Termination::Trivial,
            records: Vec::new(),
            b_norm,
            init_flops: 0,
            coarse: vec![0.0; dim],
            fine: vec![0.0; dofs.reference_free.len()],
            iterates: Vec::new(),
            schedule: schedule.clone(),
        }));
    }

    // constant coarse part
    let use_dd = cfg.strategy == CoarseStrategy::DomainDecomposition;
    let dd_opts = DdOptions { eps: cfg.eps * cfg.cg_eps_factor, iter_max: cfg.cg_iter_max, null_pivot_rel: Some(cfg.null_pivot_rel) };
    let gather = (!use_dd).then(|| CoarseGather::new(comm, cfg.nbp_max));
    let mut solver: Option<CoarseSolver> = None;
    if let Some(g) = &gather {
        if let Some(all) = g.gather(constant.clone()) {
            let (base, base_rhs) = assemble_coarse(dim, all.iter().collect());
            solver = Some(CoarseSolver { base, base_rhs, factor: None, refresh: false });
        }
    }

    // first coarse field and fine field
    let mut coarse: Vec<f64> = match (warm.and_then(|w| w.coarse.clone()), use_dd) {
        (Some(c), _) => c,
        (None, true) => dd_solve(comm, dim, &constant.iter().collect::<Vec<_>>(), None, &dd_opts)?.0,
        (None, false) => {
            let r = solver.as_ref().map(|s| s.unenriched(classical, cfg.null_pivot_rel)).transpose();
            let r = agree(comm, r)?;
            comm.broadcast(0, r)
        }
    };
    let mut fields: BTreeMap<usize, Vec<f64>> = match warm {
        Some(w) => sp.keys().map(|&e| (e, ctx.restrict(e, &w.fine))).collect(),
        None => sp.iter().map(|(&e, s)| (e, s.transfer.interpolate(&coarse))).collect(),
    };

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut iterates = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut min_resi = f64::INFINITY;
    let mut rising = 0usize;
    let mut patch_flops_seen: u64 = patch_systems.values().map(|s| s.solve_flops()).sum();
    let init_flops = comm.reduce_sum(init_flops as f64) as u64;
    let mut last_time = started;

    for iteration in 1..=cfg.max_iterations {
        // fine scale
        let mut patch_values: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let interface_of = |p: usize| -> Vec<(usize, f64)> {
            let pd = &dofs.patches[p];
            let mut out = Vec::new();
            for e in &pb.cls.patches[p].elements {
                let (Some(sys), Some(u)) = (ctx.systems.get(e), fields.get(e)) else { continue };
                for &d in &pd.interface {
                    if let Some(i) = sys.local(d / 3) {
                        out.push((d, u[3 * i + d % 3]));
                    }
                }
            }
            out
        };
        let solve_patch = |p: usize, pieces: Vec<(usize, f64)>| -> Vec<f64> {
            let pd = &dofs.patches[p];
            let mut ud = vec![0.0; pd.interface.len()];
            for (d, v) in pieces {
                ud[pd.interface.binary_search(&d).expect("interface dof")] = v;
            }
            patch_systems[&p].solve(&ud)
        };
        for (p, pc) in sequences.iter().flatten() {
            let values = pc.gather_to(0, interface_of(*p)).map(|all| solve_patch(*p, all.into_iter().flatten().collect()));
            patch_values.insert(*p, pc.broadcast(0, values));
        }
        for &p in local_order {
            patch_values.insert(p, solve_patch(p, interface_of(p)));
        }

        // macro problem update
        let mut parts = Vec::new();
        let mut product_flops = 0u64;
        let mut update: Result<(), TsError> = Ok(());
        for (&e, s) in sp.iter_mut() {
            let sys = &ctx.systems[&e];
            s.transfer.invalidate();
            let covering: Vec<usize> = s.transfer.enrichment.iter().map(|b| b.patch).collect();
            for p in covering {
                let all = &dofs.patches[p].all;
                let values = &patch_values[&p];
                let local: Vec<[f64; 3]> = sys.nodes.iter().map(|&n| [0, 1, 2].map(|c| values[all.binary_search(&(3 * n + c)).expect("element node in patch")])).collect();
                if let Err(err) = s.transfer.update_enrichment(p, &local) {
                    update = Err(err.into());
                }
            }
            match enrichment_products(sys, &s.transfer, &s.products.pfk) {
                Ok((c, f)) => {
                    parts.push(c);
                    product_flops += f;
                }
                Err(err) => update = Err(err.into()),
            }
        }
        agree(comm, update)?;

        // coarse scale
        let last_resi = records.last().map(|r| r.resi);
        let iterative_allowed = cfg.strategy == CoarseStrategy::Iterative
            && iteration > cfg.switch_after
            && last_resi.is_some_and(|r| r < cfg.eps * cfg.switch_factor);
        let step = if use_dd {
            let mut local = constant.clone();
            local.extend(parts.iter().cloned());
            local.extend(enriched_pins(comm, &parts, classical, dim));
            let (solution, report) = dd_solve(comm, dim, &local.iter().collect::<Vec<_>>(), Some(&coarse), &dd_opts)?;
            CoarseStep { solution, kind: CoarseKind::DomainDecomposition, cg_iterations: report.iterations, flops: 0 }
        } else {
            let gathered = gather.as_ref().expect("direct path").gather(parts);
            let r = match (solver.as_mut(), gathered) {
                (Some(s), Some(all)) => Some(s.step(all, &coarse, iterative_allowed, cfg)).transpose(),
                _ => Ok(None),
            };
            let r = agree(comm, r)?;
            let shared = comm.broadcast(0, r.map(|s| (s.solution, s.kind, s.cg_iterations, s.flops)));
            CoarseStep { solution: shared.0, kind: shared.1, cg_iterations: shared.2, flops: shared.3 }
        };
        coarse = step.solution;

        // fine field and residual
        for (&e, s) in &sp {
            fields.insert(e, s.transfer.interpolate(&coarse));
        }
        let resi = ctx.residual_norm(comm, &fields) / b_norm;

        let patch_flops_now: u64 = patch_systems.values().map(|s| s.solve_flops()).sum();
        let patch_flops = comm.reduce_sum((patch_flops_now - patch_flops_seen) as f64) as u64;
        patch_flops_seen = patch_flops_now;
        let product_flops = comm.reduce_sum(product_flops as f64) as u64;
        let now = Instant::now();
        records.push(IterationRecord {
            iteration,
            resi,
            coarse: step.kind,
            cg_iterations: step.cg_iterations,
            seconds: (now - last_time).as_secs_f64(),
            patch_flops,
            product_flops,
            coarse_flops: step.flops,
        });
        last_time = now;
        if cfg.record_iterates {
            if let Some(f) = ctx.gather_fine(comm, &fields, &coarse) {
                iterates.push(f);
            }
        }

        if resi < cfg.eps {
            termination = Termination::Converged;
            break;
        }
        if resi > cfg.stagnation_factor * min_resi && records.len() > 1 && resi > records[records.len() - 2].resi {
            rising += 1;
        } else {
            rising = 0;
        }
        min_resi = min_resi.min(resi);
        if rising >= cfg.stagnation_window {
            termination = Termination::Stagnated;
            break;
        }
    }

    let fine = ctx.gather_fine(comm, &fields, &coarse);
    Ok(fine.map(|fine| TsOutcome { termination, records, b_norm, init_flops, coarse, fine, iterates, schedule: schedule.clone() }))
}
