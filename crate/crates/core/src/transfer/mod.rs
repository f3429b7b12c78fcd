//! Interpolation from the coarse enriched space to the fine nodes of every
//! solution-patchwork element, and assembly of the algebraic coarse system.

use thiserror::Error;

use crate::elasticity::MacroSystem;
use crate::mesh::{Classification, DofPartition, NestedMesh};
use crate::sparse::{SparseSym, TripletBuilder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("macro element {element}: no current solution for patch {patch}")]
    StalePatch { element: usize, patch: usize },
    #[error("macro element {element}: patch {patch} does not cover it")]
    ForeignPatch { element: usize, patch: usize },
    #[error("macro element {element}: {got} nodal values for {expected} nodes")]
    Length { element: usize, expected: usize, got: usize },
}

/// Enrichment columns of one patch restricted to one element.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentBlock {
    pub patch: usize,
    /// Local vertex index (0..4) of the enriched node in the macro element.
    pub vertex: usize,
    /// Coarse free indices of the three enrichment components.
    pub columns: [usize; 3],
    /// `N^p(x_m)·(u^p(x_m) − u^p(x_p))` per element node and component.
    pub values: Vec<[f64; 3]>,
    pub current: bool,
}

/// Interpolation blocks `T_Fk` and `T_Fe` of one solution-patchwork element.
///
/// Rows follow the local dof order of the element's [`MacroSystem`]; rows of
/// Dirichlet dofs are zero in both blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementTransfer {
    pub macro_id: usize,
    pub vertices: [usize; 4],
    pub nodes: Vec<usize>,
    /// Coarse hat values at each element node.
    pub bary: Vec<[f64; 4]>,
    /// `false` on Dirichlet rows.
    pub free_rows: Vec<bool>,
    /// Coarse free index of column `3·a + c`, `None` for Dirichlet dofs.
    pub classical_columns: [Option<usize>; 12],
    pub enrichment: Vec<EnrichmentBlock>,
}

impl ElementTransfer {
    pub fn new(mesh: &NestedMesh, cls: &Classification, dofs: &DofPartition, system: &MacroSystem) -> Self {
        let e = system.macro_id;
        let vertices = mesh.coarse().tets[e];
        let bary = mesh.barycentric(e, &system.nodes);
        let free_rows = system.nodes.iter().flat_map(|&n| dofs.fixed[n].map(|f| !f)).collect();
        let mut classical_columns = [None; 12];
        for (a, &v) in vertices.iter().enumerate() {
            for c in 0..3 {
                classical_columns[3 * a + c] = dofs.free_index[3 * v + c];
            }
        }
        let nv = dofs.coarse_vertices;
        let enrichment = cls
            .patches_of(mesh, e)
            .into_iter()
            .map(|p| {
                let node = cls.patches[p].node;
                let vertex = vertices.iter().position(|&v| v == node).expect("patch node is a vertex");
                let columns = [0, 1, 2].map(|c| dofs.free_index[3 * nv + 3 * p + c].expect("enrichment dofs are free"));
                EnrichmentBlock { patch: p, vertex, columns, values: vec![[0.0; 3]; system.nodes.len()], current: false }
            })
            .collect();
        Self { macro_id: e, vertices, nodes: system.nodes.clone(), bary, free_rows, classical_columns, enrichment }
    }

    pub fn rows(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn enriched_columns(&self) -> Vec<usize> {
        self.enrichment.iter().flat_map(|b| b.columns).collect()
    }

    /// All coarse free indices touched by this element: classical then enriched.
    pub fn columns(&self) -> Vec<Option<usize>> {
        self.classical_columns.iter().copied().chain(self.enriched_columns().into_iter().map(Some)).collect()
    }

    /// Dense row-major `T_Fk` (rows × 12).
    pub fn tfk(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.rows() * 12];
        for (i, l) in self.bary.iter().enumerate() {
            for c in 0..3 {
                let r = 3 * i + c;
                if !self.free_rows[r] {
                    continue;
                }
                for a in 0..4 {
                    if self.classical_columns[3 * a + c].is_some() {
                        t[r * 12 + 3 * a + c] = l[a];
                    }
                }
            }
        }
        t
    }

    /// Dense row-major `T_Fe` (rows × 3·patches).
    pub fn tfe(&self) -> Vec<f64> {
        let nc = 3 * self.enrichment.len();
        let mut t = vec![0.0; self.rows() * nc];
        for (j, b) in self.enrichment.iter().enumerate() {
            for (i, v) in b.values.iter().enumerate() {
                for c in 0..3 {
                    if self.free_rows[3 * i + c] {
                        t[(3 * i + c) * nc + 3 * j + c] = v[c];
                    }
                }
            }
        }
        t
    }

    /// Replaces the enrichment columns of `patch` from the patch solution
    /// sampled at the element nodes (zero where the patch imposes values).
    pub fn update_enrichment(&mut self, patch: usize, local: &[[f64; 3]]) -> Result<(), TransferError> {
        let element = self.macro_id;
        if local.len() != self.nodes.len() {
            return Err(TransferError::Length { element, expected: self.nodes.len(), got: local.len() });
        }
        let block = self.enrichment.iter_mut().find(|b| b.patch == patch).ok_or(TransferError::ForeignPatch { element, patch })?;
        let a = block.vertex;
        let at = self.nodes.binary_search(&self.vertices[a]).expect("vertex is an element node");
        let shift = local[at];
        for (i, (v, l)) in block.values.iter_mut().zip(&self.bary).enumerate() {
            for c in 0..3 {
                v[c] = if self.free_rows[3 * i + c] { l[a] * (local[i][c] - shift[c]) } else { 0.0 };
            }
        }
        block.current = true;
        Ok(())
    }

    /// Marks every enrichment block as awaiting a new patch solution.
    pub fn invalidate(&mut self) {
        for b in &mut self.enrichment {
            b.current = false;
        }
    }

    pub fn ensure_current(&self) -> Result<(), TransferError> {
        match self.enrichment.iter().find(|b| !b.current) {
            Some(b) => Err(TransferError::StalePatch { element: self.macro_id, patch: b.patch }),
            None => Ok(()),
        }
    }

    /// Fine values `u_F = T_Fk U_k + T_Fe U_e` from the coarse free vector.
    pub fn interpolate(&self, coarse: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.rows()];
        for (i, l) in self.bary.iter().enumerate() {
            for c in 0..3 {
                let r = 3 * i + c;
                if !self.free_rows[r] {
                    continue;
                }
                let mut s = 0.0;
                for a in 0..4 {
                    if let Some(g) = self.classical_columns[3 * a + c] {
                        s += l[a] * coarse[g];
                    }
                }
                for b in &self.enrichment {
                    s += b.values[i][c] * coarse[b.columns[c]];
                }
                u[r] = s;
            }
        }
        u
    }
}

/// Symmetric dense block over a list of coarse free indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseContribution {
    pub element: usize,
    pub dofs: Vec<Option<usize>>,
    /// Row-major `dofs.len()²`.
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Constant products of a solution-patchwork element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementProducts {
    /// `P_Fk = A_FF T_Fk`, rows × 12.
    pub pfk: Vec<f64>,
    pub contribution: CoarseContribution,
    pub flops: u64,
}

fn transpose_times(rows: usize, lhs: &[f64], lc: usize, rhs: &[f64], rc: usize) -> Vec<f64> {
    let mut out = vec![0.0; lc * rc];
    for r in 0..rows {
        for i in 0..lc {
            let a = lhs[r * lc + i];
            if a == 0.0 {
                continue;
            }
            for j in 0..rc {
                out[i * rc + j] += a * rhs[r * rc + j];
            }
        }
    }
    out
}

fn product_flops(system: &MacroSystem, rows: usize, cols: usize) -> u64 {
    (4 * system.matrix.nnz() * cols + 2 * rows * cols * cols) as u64
}

/// `T_Fkᵀ A_FF T_Fk` and `T_Fkᵀ B_F`, computed once.
pub fn classical_products(system: &MacroSystem, tr: &ElementTransfer) -> ElementProducts {
    let n = tr.rows();
    let tfk = tr.tfk();
    let pfk = system.matrix.mul_dense(&tfk, 12);
    let matrix = transpose_times(n, &tfk, 12, &pfk, 12);
    let rhs = transpose_times(n, &tfk, 12, &system.rhs, 1);
    let flops = product_flops(system, n, 12);
    ElementProducts { pfk, contribution: CoarseContribution { element: tr.macro_id, dofs: tr.classical_columns.to_vec(), matrix, rhs }, flops }
}

/// Enrichment-dependent blocks `(e,e)`, `(e,k)` and `T_Feᵀ B_F` as one
/// contribution over `[classical, enriched]` with a zero `(k,k)` block.
pub fn enrichment_products(system: &MacroSystem, tr: &ElementTransfer, pfk: &[f64]) -> Result<(CoarseContribution, u64), TransferError> {
    tr.ensure_current()?;
    let n = tr.rows();
    let ne = 3 * tr.enrichment.len();
    let tfe = tr.tfe();
    let w = system.matrix.mul_dense(&tfe, ne);
    let aee = transpose_times(n, &tfe, ne, &w, ne);
    let aek = transpose_times(n, &tfe, ne, pfk, 12);
    let be = transpose_times(n, &tfe, ne, &system.rhs, 1);
    let m = 12 + ne;
    let mut matrix = vec![0.0; m * m];
    for i in 0..ne {
        for j in 0..12 {
            matrix[(12 + i) * m + j] = aek[i * 12 + j];
            matrix[j * m + 12 + i] = aek[i * 12 + j];
        }
        for j in 0..ne {
            matrix[(12 + i) * m + 12 + j] = aee[i * ne + j];
        }
    }
    let mut rhs = vec![0.0; m];
    rhs[12..].copy_from_slice(&be);
    let flops = product_flops(system, n, ne) + (2 * n * ne * 12) as u64;
    Ok((CoarseContribution { element: tr.macro_id, dofs: tr.columns(), matrix, rhs }, flops))
}

/// Full coarse element block of an element outside the solution patchwork.
pub fn plain_contribution(system: &MacroSystem, dofs: &DofPartition) -> CoarseContribution {
    let map: Vec<Option<usize>> = system.nodes.iter().flat_map(|&v| [0, 1, 2].map(|c| dofs.free_index[3 * v + c])).collect();
    CoarseContribution { element: system.macro_id, dofs: map, matrix: system.matrix.to_dense(), rhs: system.rhs.clone() }
}

/// Sums contributions in ascending element order, so the result does not
/// depend on the order in which they were produced.
pub fn assemble_coarse(dim: usize, mut parts: Vec<&CoarseContribution>) -> (SparseSym, Vec<f64>) {
    parts.sort_by_key(|c| c.element);
    let mut trip = TripletBuilder::with_capacity(dim, parts.iter().map(|c| c.dofs.len() * c.dofs.len()).sum());
    let mut rhs = vec![0.0; dim];
    for c in parts {
        trip.add_sym(&c.dofs, &c.matrix);
        for (d, v) in c.dofs.iter().zip(&c.rhs) {
            if let Some(g) = d {
                rhs[*g] += v;
            }
        }
    }
    (trip.finalize(), rhs)
}

/// Copy of the constant system with the enrichment contributions added in
/// ascending element order.
pub fn add_contributions(base: &SparseSym, base_rhs: &[f64], mut parts: Vec<&CoarseContribution>) -> (SparseSym, Vec<f64>) {
    parts.sort_by_key(|c| c.element);
    let n = base.dim();
    let mut trip = TripletBuilder::with_capacity(n, base.nnz() + parts.iter().map(|c| c.dofs.len() * c.dofs.len()).sum::<usize>());
    for (r, c, v) in base.iter() {
        trip.add(r, c, v);
    }
    let mut rhs = base_rhs.to_vec();
    for c in parts {
        trip.add_sym(&c.dofs, &c.matrix);
        for (d, v) in c.dofs.iter().zip(&c.rhs) {
            if let Some(g) = d {
                rhs[*g] += v;
            }
        }
    }
    (trip.finalize(), rhs)
}

/// Entries of the `(h, e)` block; zero by construction.
pub fn nsp_enriched_coupling(matrix: &SparseSym, dofs: &DofPartition) -> usize {
    let h = dofs.nsp_classical.len();
    let e0 = h + dofs.sp_classical.len();
    matrix.iter().filter(|&(r, c, v)| v != 0.0 && ((r >= e0 && c < h) || (c >= e0 && r < h))).count()
}
