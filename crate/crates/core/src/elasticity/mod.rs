//! Linear elasticity on P1 tetrahedra: element stiffness with an optional
//! damage field, consistent loads and per-macro-element assembly with
//! hanging-node elimination.

pub mod quadrature;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{signed_volume, BoundaryConditions, FaceCondition, NestedMesh, Point, FACES};
use crate::sparse::{SparseSym, TripletBuilder};

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point) -> [f64; 3] + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElasticityError {
    #[error("Young's modulus must be positive, got {0}")]
    InvalidYoung(f64),
    #[error("Poisson ratio must lie in [0, 0.5), got {0}")]
    InvalidPoisson(f64),
    #[error("damage {0} outside [0, 1]")]
    InvalidDamage(f64),
    #[error("tetrahedron has non-positive volume {0:e}")]
    NonPositiveVolume(f64),
    #[error("micro element {micro} of macro element {macro_id} is inverted")]
    Inverted { macro_id: usize, micro: usize },
    #[error("traction prescribed on Dirichlet tag {0}")]
    TractionOnDirichlet(u32),
}

/// Isotropic material, optionally heterogeneous and damaged. Fields are
/// sampled once per micro element at its centroid.
#[derive(Clone)]
pub struct Material {
    young: f64,
    poisson: f64,
    young_field: Option<ScalarField>,
    damage: Option<ScalarField>,
}

impl fmt::Debug for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Material")
            .field("young", &self.young)
            .field("poisson", &self.poisson)
            .field("young_field", &self.young_field.is_some())
            .field("damage", &self.damage.is_some())
            .finish()
    }
}

impl Material {
    pub fn new(young: f64, poisson: f64) -> Result<Self, ElasticityError> {
        if !(young > 0.0) {
            return Err(ElasticityError::InvalidYoung(young));
        }
        if !(0.0..0.5).contains(&poisson) {
            return Err(ElasticityError::InvalidPoisson(poisson));
        }
        Ok(Self { young, poisson, young_field: None, damage: None })
    }

    /// Replaces the constant modulus by a spatial field.
    pub fn with_young_field(mut self, field: ScalarField) -> Self {
        self.young_field = Some(field);
        self
    }

    pub fn with_damage(mut self, field: ScalarField) -> Self {
        self.damage = Some(field);
        self
    }

    pub fn poisson(&self) -> f64 {
        self.poisson
    }

    pub fn young_at(&self, x: Point) -> f64 {
        self.young_field.as_ref().map_or(self.young, |f| f(x))
    }

    pub fn damage_at(&self, x: Point) -> f64 {
        self.damage.as_ref().map_or(0.0, |f| f(x))
    }

    /// Effective Lamé coefficients `(λ, μ)` including the `(1 − d)` factor.
    pub fn lame_at(&self, x: Point) -> Result<(f64, f64), ElasticityError> {
        let e = self.young_at(x);
        if !(e > 0.0) {
            return Err(ElasticityError::InvalidYoung(e));
        }
        let d = self.damage_at(x);
        if !(0.0..=1.0).contains(&d) {
            return Err(ElasticityError::InvalidDamage(d));
        }
        let nu = self.poisson;
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        Ok(((1.0 - d) * lambda, (1.0 - d) * mu))
    }
}

/// Volume load, tractions per boundary tag and the quadrature degrees used
/// to integrate them against the hat functions.
#[derive(Clone)]
pub struct LoadSet {
    pub body: Option<VectorField>,
    pub tractions: BTreeMap<u32, VectorField>,
    pub volume_degree: usize,
    pub face_degree: usize,
}

impl Default for LoadSet {
    fn default() -> Self {
        Self { body: None, tractions: BTreeMap::new(), volume_degree: 1, face_degree: 2 }
    }
}

impl fmt::Debug for LoadSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadSet")
            .field("body", &self.body.is_some())
            .field("tractions", &self.tractions.keys().collect::<Vec<_>>())
            .field("volume_degree", &self.volume_degree)
            .field("face_degree", &self.face_degree)
            .finish()
    }
}

impl LoadSet {
    pub fn with_body(mut self, f: VectorField) -> Self {
        self.body = Some(f);
        self
    }

    pub fn with_traction(mut self, tag: u32, t: VectorField) -> Self {
        self.tractions.insert(tag, t);
        self
    }

    pub fn with_degrees(mut self, volume: usize, face: usize) -> Self {
        self.volume_degree = volume;
        self.face_degree = face;
        self
    }

    /// Every load multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let body = self.body.clone().map(|f| -> VectorField { Arc::new(move |x| f(x).map(|v| s * v)) });
        let tractions = self
            .tractions
            .iter()
            .map(|(&k, f)| {
                let f = f.clone();
                let g: VectorField = Arc::new(move |x| f(x).map(|v| s * v));
                (k, g)
            })
            .collect();
        Self { body, tractions, ..*self }
    }

    pub fn validate(&self, bc: &BoundaryConditions) -> Result<(), ElasticityError> {
        for tag in self.tractions.keys() {
            if matches!(bc.faces.get(tag), Some(FaceCondition::Dirichlet(_))) {
                return Err(ElasticityError::TractionOnDirichlet(*tag));
            }
        }
        Ok(())
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Gradients of the four barycentric hats and the volume.
pub fn shape_gradients(p: &[Point; 4]) -> Result<([Point; 4], f64), ElasticityError> {
    let vol = signed_volume(p[0], p[1], p[2], p[3]);
    if !(vol > 0.0) {
        return Err(ElasticityError::NonPositiveVolume(vol));
    }
    let (a, b, c) = (sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0]));
    let det = 6.0 * vol;
    // rows of the inverse Jacobian are the cofactor columns over det
    let g1 = [(b[1] * c[2] - b[2] * c[1]) / det, (b[2] * c[0] - b[0] * c[2]) / det, (b[0] * c[1] - b[1] * c[0]) / det];
    let g2 = [(c[1] * a[2] - c[2] * a[1]) / det, (c[2] * a[0] - c[0] * a[2]) / det, (c[0] * a[1] - c[1] * a[0]) / det];
    let g3 = [(a[1] * b[2] - a[2] * b[1]) / det, (a[2] * b[0] - a[0] * b[2]) / det, (a[0] * b[1] - a[1] * b[0]) / det];
    let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
    Ok(([g0, g1, g2, g3], vol))
}

/// 12×12 row-major stiffness, dof `3·a + i` for vertex `a`, component `i`.
pub fn element_stiffness(p: &[Point; 4], lambda: f64, mu: f64) -> Result<[f64; 144], ElasticityError> {
    let (g, vol) = shape_gradients(p)?;
    let mut k = [0.0; 144];
    for a in 0..4 {
        for b in 0..4 {
            let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1] + g[a][2] * g[b][2];
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = lambda * g[a][i] * g[b][j] + mu * g[a][j] * g[b][i];
                    if i == j {
                        v += mu * gg;
                    }
                    k[(3 * a + i) * 12 + 3 * b + j] = vol * v;
                }
            }
        }
    }
    Ok(k)
}

pub fn barycentric_point(p: &[Point; 4], l: [f64; 4]) -> Point {
    [0, 1, 2].map(|d| l[0] * p[0][d] + l[1] * p[1][d] + l[2] * p[2][d] + l[3] * p[3][d])
}

pub fn centroid(p: &[Point; 4]) -> Point {
    barycentric_point(p, [0.25; 4])
}

/// `∫ f·N` over the tetrahedron.
pub fn element_body_load(p: &[Point; 4], f: &dyn Fn(Point) -> [f64; 3], degree: usize) -> [f64; 12] {
    let vol = signed_volume(p[0], p[1], p[2], p[3]);
    let mut b = [0.0; 12];
    for (l, w) in quadrature::tet_rule(degree) {
        let v = f(barycentric_point(p, l));
        for a in 0..4 {
            for c in 0..3 {
                b[3 * a + c] += vol * w * l[a] * v[c];
            }
        }
    }
    b
}

pub fn triangle_area(p: &[Point; 3]) -> f64 {
    let (a, b) = (sub(p[1], p[0]), sub(p[2], p[0]));
    let n = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// `∫ t·N` over a triangle, dof `3·a + i`.
pub fn face_traction_load(p: &[Point; 3], t: &dyn Fn(Point) -> [f64; 3], degree: usize) -> [f64; 9] {
    let area = triangle_area(p);
    let mut b = [0.0; 9];
    for (l, w) in quadrature::triangle_rule(degree) {
        let x = [0, 1, 2].map(|d| l[0] * p[0][d] + l[1] * p[1][d] + l[2] * p[2][d]);
        let v = t(x);
        for a in 0..3 {
            for c in 0..3 {
                b[3 * a + c] += area * w * l[a] * v[c];
            }
        }
    }
    b
}

/// Constant strain of a P1 displacement, symmetric 3×3.
pub fn element_strain(p: &[Point; 4], u: &[f64; 12]) -> Result<[[f64; 3]; 3], ElasticityError> {
    let (g, _) = shape_gradients(p)?;
    let mut grad = [[0.0; 3]; 3];
    for a in 0..4 {
        for i in 0..3 {
            for j in 0..3 {
                grad[i][j] += u[3 * a + i] * g[a][j];
            }
        }
    }
    Ok([0, 1, 2].map(|i| [0, 1, 2].map(|j| 0.5 * (grad[i][j] + grad[j][i]))))
}

pub fn hooke(lambda: f64, mu: f64, eps: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let tr = eps[0][0] + eps[1][1] + eps[2][2];
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| 2.0 * mu * eps[i][j] + if i == j { lambda * tr } else { 0.0 }))
}

/// Reference-level system of one macro element: hanging values eliminated,
/// Dirichlet rows kept.
#[derive(Debug, Clone)]
pub struct MacroSystem {
    pub macro_id: usize,
    /// Sorted non-hanging nodes; local dof `3·i + c` belongs to `nodes[i]`.
    pub nodes: Vec<usize>,
    pub matrix: SparseSym,
    pub rhs: Vec<f64>,
}

impl MacroSystem {
    pub fn local(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn dim(&self) -> usize {
        3 * self.nodes.len()
    }
}

/// Stiffness of one micro element, material sampled at its centroid.
pub fn micro_stiffness(mesh: &NestedMesh, micro: usize, material: &Material) -> Result<[f64; 144], ElasticityError> {
    let t = &mesh.micro()[micro];
    let p = t.nodes.map(|v| mesh.nodes()[v]);
    let (lambda, mu) = material.lame_at(centroid(&p))?;
    element_stiffness(&p, lambda, mu).map_err(|_| ElasticityError::Inverted { macro_id: t.macro_id, micro })
}

/// Linear combination of kept nodes representing a node.
pub fn node_expansion(mesh: &NestedMesh, node: usize) -> Vec<(usize, f64)> {
    match mesh.hanging_node(node) {
        Some(h) => vec![(h.parents[0], h.weights[0]), (h.parents[1], h.weights[1])],
        None => vec![(node, 1.0)],
    }
}

/// Faces of micro elements lying on tagged coarse boundary faces of macro `e`:
/// `(micro, local face, tag)`.
pub fn boundary_micro_faces(mesh: &NestedMesh, e: usize) -> Vec<(usize, usize, u32)> {
    let coarse = mesh.coarse();
    let tet = coarse.tets[e];
    let mut tagged: Vec<(usize, u32)> = Vec::new();
    for f in &coarse.boundary {
        if f.nodes.iter().all(|v| tet.contains(v)) {
            let opposite = (0..4).find(|&i| !f.nodes.contains(&tet[i])).expect("face of the element");
            tagged.push((opposite, f.tag));
        }
    }
    if tagged.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for &m in mesh.macro_micro(e) {
        let nodes = mesh.micro()[m].nodes;
        let bary = mesh.barycentric(e, &nodes);
        for (lf, f) in FACES.iter().enumerate() {
            for &(opp, tag) in &tagged {
                if f.iter().all(|&i| bary[i][opp] == 0.0) {
                    out.push((m, lf, tag));
                }
            }
        }
    }
    out
}

/// Assembles the macro-element system in leaf order.
pub fn assemble_macro(mesh: &NestedMesh, e: usize, material: &Material, loads: &LoadSet) -> Result<MacroSystem, ElasticityError> {
    assemble_macro_in_order(mesh, e, material, loads, mesh.macro_micro(e))
}

/// Same as [`assemble_macro`] with an explicit micro element order.
pub fn assemble_macro_in_order(mesh: &NestedMesh, e: usize, material: &Material, loads: &LoadSet, order: &[usize]) -> Result<MacroSystem, ElasticityError> {
    let nodes: Vec<usize> = mesh.macro_nodes(e).into_iter().filter(|&n| !mesh.is_hanging(n)).collect();
    let n = 3 * nodes.len();
    let local = |v: usize| nodes.binary_search(&v).expect("parent outside macro element");
    let mut trip = TripletBuilder::with_capacity(n, order.len() * 78);
    let mut rhs = vec![0.0; n];
    let mut faces_of: BTreeMap<usize, Vec<(usize, u32)>> = BTreeMap::new();
    for (m, lf, tag) in boundary_micro_faces(mesh, e) {
        if loads.tractions.contains_key(&tag) {
            faces_of.entry(m).or_default().push((lf, tag));
        }
    }
    for &m in order {
        let t = &mesh.micro()[m];
        let k = micro_stiffness(mesh, m, material)?;
        let p = t.nodes.map(|v| mesh.nodes()[v]);
        let exp: Vec<Vec<(usize, f64)>> = t.nodes.iter().map(|&v| node_expansion(mesh, v).into_iter().map(|(q, w)| (local(q), w)).collect()).collect();
        for a in 0..4 {
            for b in 0..4 {
                for &(qa, wa) in &exp[a] {
                    for &(qb, wb) in &exp[b] {
                        for i in 0..3 {
                            for j in 0..3 {
                                let (r, c) = (3 * qa + i, 3 * qb + j);
                                if r >= c {
                                    let v = wa * wb * k[(3 * a + i) * 12 + 3 * b + j];
                                    if v != 0.0 || r == c {
                                        trip.add(r, c, v);
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
        if let Some(fs) = faces_of.get(&m) {
            for &(lf, tag) in fs {
                let fv = FACES[lf];
                let fp = [p[fv[0]], p[fv[1]], p[fv[2]]];
                let tb = face_traction_load(&fp, loads.tractions[&tag].as_ref(), loads.face_degree);
                for (s, &a) in fv.iter().enumerate() {
                    for c in 0..3 {
                        b[3 * a + c] += tb[3 * s + c];
                    }
                }
            }
        }
        for a in 0..4 {
            for &(q, w) in &exp[a] {
                for c in 0..3 {
                    rhs[3 * q + c] += w * b[3 * a + c];
                }
            }
        }
    }
    Ok(MacroSystem { macro_id: e, nodes, matrix: trip.finalize(), rhs })
}
