use crate::elasticity::MacroSystem;
use crate::mesh::PatchDofs;
use crate::sparse::{Factor, SparseError, TripletBuilder};

/// Fine-scale problem of one patch: free dofs `q` driven by imposed values on
/// the patch interface `d`; Dirichlet values are zero.
#[derive(Debug, Clone)]
pub struct PatchSystem {
    pub id: usize,
    pub dofs: PatchDofs,
    factor: Factor,
    /// `D_qd = −A_qd` as `(q position, d position, value)`.
    coupling: Vec<(usize, usize, f64)>,
    /// Load on `q` with the Dirichlet term folded in.
    base_rhs: Vec<f64>,
}

fn position(list: &[usize], d: usize) -> Option<usize> {
    list.binary_search(&d).ok()
}

impl PatchSystem {
    /// Sums the member element systems and factorizes `A_qq`.
    pub fn assemble(id: usize, dofs: &PatchDofs, members: &[&MacroSystem]) -> Result<Self, SparseError> {
        let nq = dofs.free.len();
        let mut members = members.to_vec();
        members.sort_by_key(|s| s.macro_id);
        let mut trip = TripletBuilder::new(nq);
        let mut coupling = Vec::new();
        let mut base_rhs = vec![0.0; nq];
        for sys in members {
            let dof_of = |k: usize| 3 * sys.nodes[k / 3] + k % 3;
            for (r, c, v) in sys.matrix.iter() {
                let (gr, gc) = (dof_of(r), dof_of(c));
                match (position(&dofs.free, gr), position(&dofs.free, gc)) {
                    (Some(i), Some(j)) => trip.add(i.max(j), i.min(j), v),
                    (Some(i), None) => {
                        if let Some(j) = position(&dofs.interface, gc) {
                            coupling.push((i, j, -v));
                        }
                    }
                    (None, Some(j)) => {
                        if let Some(i) = position(&dofs.interface, gr) {
                            coupling.push((j, i, -v));
                        }
                    }
                    (None, None) => {}
                }
            }
            for (k, &b) in sys.rhs.iter().enumerate() {
                if let Some(i) = position(&dofs.free, dof_of(k)) {
                    base_rhs[i] += b;
                }
            }
        }
        let factor = Factor::new(&trip.finalize())?;
        Ok(Self { id, dofs: dofs.clone(), factor, coupling, base_rhs })
    }

    pub fn free_dim(&self) -> usize {
        self.dofs.free.len()
    }

    /// Solves with interface values `u_d` (ordered as `dofs.interface`) and
    /// returns values on `dofs.all`: solution on `q`, `u_d` on `d`, zero elsewhere.
    pub fn solve(&self, interface: &[f64]) -> Vec<f64> {
        let mut b = self.base_rhs.clone();
        for &(i, j, v) in &self.coupling {
            b[i] += v * interface[j];
        }
        self.factor.solve_in_place(&mut b);
        let mut out = vec![0.0; self.dofs.all.len()];
        for (k, &d) in self.dofs.free.iter().enumerate() {
            out[position(&self.dofs.all, d).expect("q in patch")] = b[k];
        }
        for (k, &d) in self.dofs.interface.iter().enumerate() {
            out[position(&self.dofs.all, d).expect("d in patch")] = interface[k];
        }
        out
    }

    pub fn solve_flops(&self) -> u64 {
        self.factor.solve_flops()
    }

    pub fn factor_flops(&self) -> u64 {
        self.factor.factor_flops()
    }
}
