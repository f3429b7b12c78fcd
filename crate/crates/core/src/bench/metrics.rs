//! Energy norms on the reference mesh and the relative errors between the
//! two-scale, reference and exact fields.

use serde::{Deserialize, Serialize};

use crate::elasticity::quadrature::tet_rule;
use crate::elasticity::{barycentric_point, centroid, element_strain, hooke, ElasticityError, Material};
use crate::mesh::{NestedMesh, Point};

fn element_values(field: &[f64], nodes: [usize; 4]) -> [f64; 12] {
    let mut u = [0.0; 12];
    for (a, &n) in nodes.iter().enumerate() {
        u[3 * a..3 * a + 3].copy_from_slice(&field[3 * n..3 * n + 3]);
    }
    u
}

fn contract(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| a[i][j] * b[i][j]).sum()
}

/// `‖u‖²_E` of a nodal field (`3·nodes` values) over every micro element.
pub fn energy(mesh: &NestedMesh, material: &Material, field: &[f64]) -> Result<f64, ElasticityError> {
    let mut s = 0.0;
    for t in mesh.micro() {
        let p = t.nodes.map(|v| mesh.nodes()[v]);
        let (lambda, mu) = material.lame_at(centroid(&p))?;
        let eps = element_strain(&p, &element_values(field, t.nodes))?;
        s += contract(&hooke(lambda, mu, &eps), &eps) * crate::elasticity::shape_gradients(&p)?.1;
    }
    Ok(s)
}

/// `‖u_h − u‖²_E` against a field known through its gradient, integrated
/// with a rule exact to `degree`. `None` stands for `u_h = 0`.
pub fn energy_to_exact(
    mesh: &NestedMesh,
    material: &Material,
    field: Option<&[f64]>,
    gradient: &dyn Fn(Point) -> [[f64; 3]; 3],
    degree: usize,
) -> Result<f64, ElasticityError> {
    let rule = tet_rule(degree);
    let mut s = 0.0;
    for t in mesh.micro() {
        let p = t.nodes.map(|v| mesh.nodes()[v]);
        let (lambda, mu) = material.lame_at(centroid(&p))?;
        let volume = crate::elasticity::shape_gradients(&p)?.1;
        let eh = match field {
            Some(f) => element_strain(&p, &element_values(f, t.nodes))?,
            None => [[0.0; 3]; 3],
        };
        for &(l, w) in &rule {
            let g = gradient(barycentric_point(&p, l));
            let mut d = eh;
            for i in 0..3 {
                for j in 0..3 {
                    d[i][j] -= 0.5 * (g[i][j] + g[j][i]);
                }
            }
            s += w * volume * contract(&hooke(lambda, mu, &d), &d);
        }
    }
    Ok(s)
}

/// Relative energy errors of a two-scale field `ts` against the reference
/// field `r` and the exact field `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖ts − c‖ / ‖c‖`.
    pub ts_exact: f64,
    /// `‖ts − r‖ / ‖r‖`.
    pub ts_reference: f64,
    /// `‖r − c‖ / ‖c‖`.
    pub reference_exact: f64,
    /// `|‖ts − c‖² − ‖ts − r‖² − ‖r − c‖²| / ‖ts − c‖²`, zero when `ts = r = c`.
    pub identity_defect: f64,
    /// `‖r‖² / ‖c‖²`.
    pub energy_ratio: f64,
}

impl ErrorReport {
    /// From squared norms `‖ts − c‖²`, `‖ts − r‖²`, `‖r − c‖²`, `‖c‖²`, `‖r‖²`.
    pub fn from_squares(ts_c: f64, ts_r: f64, r_c: f64, c: f64, r: f64) -> Self {
        let defect = (ts_c - ts_r - r_c).abs();
        Self {
            ts_exact: (ts_c / c).sqrt(),
            ts_reference: (ts_r / r).sqrt(),
            reference_exact: (r_c / c).sqrt(),
            identity_defect: if ts_c > 0.0 { defect / ts_c } else { defect },
            energy_ratio: r / c,
        }
    }

    /// Upper bound on `(E(ts,c) − E(r,c)) / E(r,c)` once `E(ts,r) ≤ E(r,c)/10`.
    pub fn gap_bound(&self) -> f64 {
        (1.0 + self.energy_ratio / 100.0).sqrt() - 1.0
    }

    pub fn relative_gap(&self) -> f64 {
        (self.ts_exact - self.reference_exact) / self.reference_exact
    }
}

/// Norms of nodal fields `ts` and `r` against the exact field, the exact
/// field entering through its gradient.
pub fn continuous_errors(
    mesh: &NestedMesh,
    material: &Material,
    ts: &[f64],
    r: &[f64],
    gradient: &dyn Fn(Point) -> [[f64; 3]; 3],
    degree: usize,
) -> Result<ErrorReport, ElasticityError> {
    let diff: Vec<f64> = ts.iter().zip(r).map(|(a, b)| a - b).collect();
    Ok(ErrorReport::from_squares(
        energy_to_exact(mesh, material, Some(ts), gradient, degree)?,
        energy(mesh, material, &diff)?,
        energy_to_exact(mesh, material, Some(r), gradient, degree)?,
        energy_to_exact(mesh, material, None, gradient, degree)?,
        energy(mesh, material, r)?,
    ))
}

/// Same with the exact field replaced by its nodal interpolant `c`.
pub fn interpolated_errors(mesh: &NestedMesh, material: &Material, ts: &[f64], r: &[f64], c: &[f64]) -> Result<ErrorReport, ElasticityError> {
    let sub = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    Ok(ErrorReport::from_squares(
        energy(mesh, material, &sub(ts, c))?,
        energy(mesh, material, &sub(ts, r))?,
        energy(mesh, material, &sub(r, c))?,
        energy(mesh, material, c)?,
        energy(mesh, material, r)?,
    ))
}

/// Nodal values of a vector field at every mesh node.
pub fn nodal_interpolant(mesh: &NestedMesh, f: &dyn Fn(Point) -> [f64; 3]) -> Vec<f64> {
    mesh.nodes().iter().flat_map(|&p| f(p)).collect()
}
