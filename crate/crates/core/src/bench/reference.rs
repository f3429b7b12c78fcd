//! Monolithic reference system assembled micro element by micro element.

use crate::elasticity::{element_body_load, face_traction_load, micro_stiffness, boundary_micro_faces, node_expansion, ElasticityError, LoadSet, Material};
use crate::mesh::{DofPartition, NestedMesh, FACES};
use crate::sparse::{Factor, SparseError, SparseSym, TripletBuilder};

/// `A_rr u_r = B_r` over the free reference dofs, Dirichlet values zero.
#[derive(Debug, Clone)]
pub struct ReferenceSystem {
    pub matrix: SparseSym,
    pub rhs: Vec<f64>,
    /// Reference dof `3·node + c` of every row.
    pub dofs: Vec<usize>,
    /// Reference dof → row.
    pub index: Vec<Option<usize>>,
    node_count: usize,
}

impl ReferenceSystem {
    pub fn assemble(mesh: &NestedMesh, dofs: &DofPartition, material: &Material, loads: &LoadSet) -> Result<Self, ElasticityError> {
        let n = dofs.reference_free.len();
        let index = dofs.reference_index.clone();
        let mut trip = TripletBuilder::with_capacity(n, mesh.micro().len() * 78);
        let mut rhs = vec![0.0; n];
        let mut faces: Vec<Vec<(usize, u32)>> = vec![Vec::new(); mesh.micro().len()];
        for e in 0..mesh.macro_count() {
            for (m, lf, tag) in boundary_micro_faces(mesh, e) {
                if loads.tractions.contains_key(&tag) {
                    faces[m].push((lf, tag));
                }
            }
        }
        for (m, t) in mesh.micro().iter().enumerate() {
            let k = micro_stiffness(mesh, m, material)?;
            let p = t.nodes.map(|v| mesh.nodes()[v]);
            let exp: Vec<Vec<(usize, f64)>> = t.nodes.iter().map(|&v| node_expansion(mesh, v)).collect();
            let row = |node: usize, c: usize| index[3 * node + c];
            for a in 0..4 {
                for b in 0..4 {
                    for &(qa, wa) in &exp[a] {
                        for &(qb, wb) in &exp[b] {
                            for i in 0..3 {
                                for j in 0..3 {
                                    if let (Some(r), Some(c)) = (row(qa, i), row(qb, j)) {
                                        if r >= c {
                                            trip.add(r, c, wa * wb * k[(3 * a + i) * 12 + 3 * b + j]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let mut b = [0.0; 12];
            if let Some(f) = &loads.body {
                b = element_body_load(&p, f.as_ref(), loads.volume_degree);
            }
            for &(lf, tag) in &faces[m] {
                let fv = FACES[lf];
                let tb = face_traction_load(&[p[fv[0]], p[fv[1]], p[fv[2]]], loads.tractions[&tag].as_ref(), loads.face_degree);
                for (s, &a) in fv.iter().enumerate() {
                    for c in 0..3 {
                        b[3 * a + c] += tb[3 * s + c];
                    }
                }
            }
            for a in 0..4 {
                for &(q, w) in &exp[a] {
                    for c in 0..3 {
                        if let Some(r) = row(q, c) {
                            rhs[r] += w * b[3 * a + c];
                        }
                    }
                }
            }
        }
        Ok(Self { matrix: trip.finalize(), rhs, dofs: dofs.reference_free.clone(), index, node_count: mesh.nodes().len() })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn solve(&self) -> Result<Vec<f64>, SparseError> {
        Ok(Factor::new(&self.matrix)?.solve(&self.rhs))
    }

    /// Nodal field (`3·nodes` values) from free values: Dirichlet values zero,
    /// hanging values interpolated.
    pub fn expand(&self, mesh: &NestedMesh, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; 3 * self.node_count];
        for (r, &d) in self.dofs.iter().enumerate() {
            full[d] = u[r];
        }
        for h in mesh.hanging() {
            for c in 0..3 {
                full[3 * h.node + c] = h.weights[0] * full[3 * h.parents[0] + c] + h.weights[1] * full[3 * h.parents[1] + c];
            }
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.dofs.iter().map(|&d| full[d]).collect()
    }

    /// `‖A u − B‖ / ‖B‖` on free values.
    pub fn relative_residual(&self, u: &[f64]) -> f64 {
        let au = self.matrix.mul(u);
        let num: f64 = au.iter().zip(&self.rhs).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = self.rhs.iter().map(|b| b * b).sum();
        (num / den).sqrt()
    }

    /// Energy `uᵀ A u` of a free-value vector.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.matrix.quad_form(u)
    }
}
