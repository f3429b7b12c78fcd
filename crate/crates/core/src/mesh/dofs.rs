use std::collections::{BTreeMap, HashMap};

use super::{Classification, MeshError, NestedMesh, FACES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceCondition {
    /// Zero displacement on the flagged components.
    Dirichlet([bool; 3]),
    Neumann,
    Free,
}

/// Boundary labels plus point constraints on coarse vertices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    pub faces: BTreeMap<u32, FaceCondition>,
    pub vertex_constraints: Vec<(usize, [bool; 3])>,
}

impl BoundaryConditions {
    pub fn clamp(mut self, tag: u32, components: [bool; 3]) -> Self {
        self.faces.insert(tag, FaceCondition::Dirichlet(components));
        self
    }

    pub fn neumann(mut self, tag: u32) -> Self {
        self.faces.insert(tag, FaceCondition::Neumann);
        self
    }

    pub fn pin(mut self, vertex: usize, components: [bool; 3]) -> Self {
        self.vertex_constraints.push((vertex, components));
        self
    }

    pub fn is_neumann(&self, tag: u32) -> bool {
        matches!(self.faces.get(&tag), Some(FaceCondition::Neumann))
    }
}

/// Dof sets of one patch problem, as reference dof ids `3·node + component`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchDofs {
    pub all: Vec<usize>,
    pub constrained: Vec<usize>,
    pub dirichlet: Vec<usize>,
    /// Values imposed from the current fine field on the patch boundary.
    pub interface: Vec<usize>,
    pub free: Vec<usize>,
}

/// Every value set of the method as sorted index lists.
///
/// Coarse dof ids: classical `3·vertex + c`, enriched `3·nv + 3·i + c` for the
/// `i`-th enriched vertex. Reference dof ids: `3·node + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DofPartition {
    pub coarse_vertices: usize,
    pub global: Vec<usize>,
    pub dirichlet: Vec<usize>,
    pub classical: Vec<usize>,
    pub free: Vec<usize>,
    pub classical_free: Vec<usize>,
    pub enriched: Vec<usize>,
    pub sp_free: Vec<usize>,
    pub sp_classical: Vec<usize>,
    pub nsp_classical: Vec<usize>,
    /// Position of each coarse dof in the free ordering (NSP classical, SP
    /// classical, enriched).
    pub free_index: Vec<Option<usize>>,

    pub reference: Vec<usize>,
    pub constrained: Vec<usize>,
    pub unconstrained: Vec<usize>,
    pub reference_dirichlet: Vec<usize>,
    pub sp_reference: Vec<usize>,
    pub nsp_reference: Vec<usize>,
    pub reference_free: Vec<usize>,
    pub sp_reference_free: Vec<usize>,
    pub nsp_reference_free: Vec<usize>,
    /// Position of each reference dof in `reference_free`.
    pub reference_index: Vec<Option<usize>>,
    /// Per-node Dirichlet mask on the reference level.
    pub fixed: Vec<[bool; 3]>,
    /// Coarse vertices shared by SP and NSP elements.
    pub interface_nodes: Vec<usize>,
    pub patches: Vec<PatchDofs>,
}

fn dofs_of(nodes: impl IntoIterator<Item = usize>, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut v: Vec<usize> = nodes.into_iter().flat_map(|n| [3 * n, 3 * n + 1, 3 * n + 2]).filter(|&d| keep(d)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn index_of(list: &[usize], size: usize) -> Vec<Option<usize>> {
    let mut m = vec![None; size];
    for (i, &d) in list.iter().enumerate() {
        m[d] = Some(i);
    }
    m
}

fn minus(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| b.binary_search(x).is_err()).collect()
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| b.binary_search(x).is_ok()).collect()
}

/// Per-node Dirichlet mask: a fine node is fixed on a component when it lies
/// on a Dirichlet face of a macro element or is a pinned coarse vertex.
pub fn dirichlet_mask(mesh: &NestedMesh, bc: &BoundaryConditions) -> Vec<[bool; 3]> {
    let coarse = mesh.coarse();
    let mut fixed = vec![[false; 3]; mesh.nodes().len()];
    let mut tagged: HashMap<[usize; 3], [bool; 3]> = HashMap::new();
    for f in &coarse.boundary {
        if let Some(FaceCondition::Dirichlet(mask)) = bc.faces.get(&f.tag) {
            let mut k = f.nodes;
            k.sort_unstable();
            let slot = tagged.entry(k).or_insert([false; 3]);
            for c in 0..3 {
                slot[c] |= mask[c];
            }
        }
    }
    for (e, t) in coarse.tets.iter().enumerate() {
        for (i, f) in FACES.iter().enumerate() {
            let mut k = [t[f[0]], t[f[1]], t[f[2]]];
            k.sort_unstable();
            let Some(mask) = tagged.get(&k) else { continue };
            let nodes = mesh.macro_nodes(e);
            for (n, l) in nodes.iter().zip(mesh.barycentric(e, &nodes)) {
                if l[i] == 0.0 {
                    for c in 0..3 {
                        fixed[*n][c] |= mask[c];
                    }
                }
            }
        }
    }
    for &(v, mask) in &bc.vertex_constraints {
        for c in 0..3 {
            fixed[v][c] |= mask[c];
        }
    }
    fixed
}

impl DofPartition {
    pub fn build(mesh: &NestedMesh, cls: &Classification, bc: &BoundaryConditions) -> Result<Self, MeshError> {
        let coarse = mesh.coarse();
        let nv = coarse.vertices.len();
        let fixed = dirichlet_mask(mesh, bc);
        if let Some(h) = mesh.hanging().iter().find(|h| fixed[h.node].iter().any(|&f| f)) {
            return Err(MeshError::DirichletOnHanging(h.node));
        }
        let is_fixed = |d: usize| fixed[d / 3][d % 3];

        // coarse level
        let mut touches_sp = vec![false; nv];
        let mut touches_nsp = vec![false; nv];
        for (e, t) in coarse.tets.iter().enumerate() {
            for &v in t {
                if cls.sp[e] {
                    touches_sp[v] = true;
                } else {
                    touches_nsp[v] = true;
                }
            }
        }
        let classical: Vec<usize> = (0..3 * nv).collect();
        let enriched: Vec<usize> = (3 * nv..3 * nv + 3 * cls.enriched.len()).collect();
        let global = union(&classical, &enriched);
        let dirichlet: Vec<usize> = classical.iter().copied().filter(|&d| is_fixed(d)).collect();
        let classical_free = minus(&classical, &dirichlet);
        let sp_classical: Vec<usize> = classical_free.iter().copied().filter(|&d| touches_sp[d / 3]).collect();
        let nsp_classical = minus(&classical_free, &sp_classical);
        let free = union(&classical_free, &enriched);
        let sp_free = union(&sp_classical, &enriched);
        let order: Vec<usize> = nsp_classical.iter().chain(&sp_classical).chain(&enriched).copied().collect();
        let free_index = index_of(&order, global.len());

        // reference level
        let active = mesh.active_nodes();
        let nn = mesh.nodes().len();
        let reference = dofs_of((0..nn).filter(|&n| active[n]), |_| true);
        let constrained = dofs_of(mesh.hanging().iter().map(|h| h.node), |_| true);
        let unconstrained = minus(&reference, &constrained);
        let reference_dirichlet: Vec<usize> = unconstrained.iter().copied().filter(|&d| is_fixed(d)).collect();
        let mut on_sp = vec![false; nn];
        for e in cls.sp_elements() {
            for n in mesh.macro_nodes(e) {
                on_sp[n] = true;
            }
        }
        let sp_reference: Vec<usize> = unconstrained.iter().copied().filter(|&d| on_sp[d / 3]).collect();
        let nsp_reference = minus(&unconstrained, &sp_reference);
        let sp_reference_free = minus(&sp_reference, &reference_dirichlet);
        let nsp_reference_free = minus(&nsp_reference, &reference_dirichlet);
        let reference_free = union(&nsp_reference_free, &sp_reference_free);
        let reference_index = index_of(&reference_free, 3 * nn);
        let interface_nodes = (0..nv).filter(|&v| touches_sp[v] && touches_nsp[v]).collect();

        // patch level
        let mut node_macros = vec![Vec::new(); nn];
        for e in 0..coarse.tets.len() {
            for n in mesh.macro_nodes(e) {
                node_macros[n].push(e);
            }
        }
        let mut patches = Vec::with_capacity(cls.patches.len());
        for p in &cls.patches {
            let mut nodes: Vec<usize> = p.elements.iter().flat_map(|&e| mesh.macro_nodes(e)).collect();
            nodes.sort_unstable();
            nodes.dedup();
            let outside = |n: usize| node_macros[n].iter().any(|e| p.elements.binary_search(e).is_err());
            let all = dofs_of(nodes.iter().copied(), |_| true);
            let constrained_p = intersect(&all, &constrained);
            let dirichlet_p = intersect(&all, &reference_dirichlet);
            let interface: Vec<usize> = minus(&minus(&all, &constrained_p), &dirichlet_p).into_iter().filter(|&d| outside(d / 3)).collect();
            let free_p = minus(&minus(&minus(&all, &constrained_p), &dirichlet_p), &interface);
            patches.push(PatchDofs { all, constrained: constrained_p, dirichlet: dirichlet_p, interface, free: free_p });
        }

        Ok(Self {
            coarse_vertices: nv,
            global,
            dirichlet,
            classical,
            free,
            classical_free,
            enriched,
            sp_free,
            sp_classical,
            nsp_classical,
            free_index,
            reference,
            constrained,
            unconstrained,
            reference_dirichlet,
            sp_reference,
            nsp_reference,
            reference_free,
            sp_reference_free,
            nsp_reference_free,
            reference_index,
            fixed,
            interface_nodes,
            patches,
        })
    }

    /// Number of free coarse dofs.
    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    /// Violated set relations, empty when the partition is consistent.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                out.push(what.to_string());
            }
        };
        let disjoint = |a: &[usize], b: &[usize]| intersect(a, b).is_empty();
        check(union(&self.dirichlet, &self.free) == self.global && disjoint(&self.dirichlet, &self.free), "G = D + g");
        check(union(&self.dirichlet, &self.classical_free) == self.classical, "C = D + c");
        check(union(&self.classical_free, &self.enriched) == self.free && disjoint(&self.classical_free, &self.enriched), "g = c + e");
        check(minus(&self.global, &self.classical) == self.enriched, "e = G \\ C");
        check(union(&self.nsp_classical, &self.sp_classical) == self.classical_free && disjoint(&self.nsp_classical, &self.sp_classical), "c = h + k");
        check(union(&self.sp_classical, &self.enriched) == self.sp_free, "m = k + e");
        check(union(&self.unconstrained, &self.constrained) == self.reference && disjoint(&self.unconstrained, &self.constrained), "R = M + L");
        check(disjoint(&self.constrained, &self.reference_dirichlet), "L and DR disjoint");
        check(union(&self.reference_free, &self.reference_dirichlet) == self.unconstrained && disjoint(&self.reference_free, &self.reference_dirichlet), "M = r + DR");
        check(union(&self.sp_reference, &self.nsp_reference) == self.unconstrained && disjoint(&self.sp_reference, &self.nsp_reference), "M = F + H");
        check(union(&self.nsp_reference_free, &self.sp_reference_free) == self.reference_free && disjoint(&self.nsp_reference_free, &self.sp_reference_free), "r = h + f");
        check(intersect(&self.dirichlet, &self.reference_dirichlet) == self.dirichlet, "D in DR");
        check(self.nsp_reference_free == self.nsp_classical, "h identical on both levels");
        for (i, p) in self.patches.iter().enumerate() {
            let parts = [&p.constrained, &p.dirichlet, &p.interface, &p.free];
            let total: usize = parts.iter().map(|s| s.len()).sum();
            let mut all = Vec::new();
            for s in parts {
                all = union(&all, s);
            }
            check(all == p.all && total == p.all.len(), &format!("patch {i}: Q = L + DP + d + q"));
            check(intersect(&p.interface, &self.sp_reference_free) == p.interface, &format!("patch {i}: d in f"));
        }
        out
    }
}
