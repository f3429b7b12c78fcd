//! Coarse tetrahedral meshes, nested refinement with hanging nodes, the
//! enriched patchwork classification and the dof value sets.

mod classify;
mod dofs;
mod io;
mod refine;

pub use classify::{classify, Classification, Patch};
pub use dofs::{dirichlet_mask, BoundaryConditions, DofPartition, FaceCondition, PatchDofs};
pub use io::{read_ascii, write_ascii};
pub use refine::{HangingNode, MicroTet, NestedMesh, NodeOrigin};

use thiserror::Error;

pub type Point = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("element {0} has zero volume")]
    Degenerate(usize),
    #[error("element {element} references vertex {vertex} out of range")]
    BadVertex { element: usize, vertex: usize },
    #[error("boundary face {0:?} is not a face of any element")]
    OrphanFace([usize; 3]),
    #[error("mesh is already refined")]
    AlreadyRefined,
    #[error("selector marks no element")]
    EmptySelection,
    #[error("refinement needs at least one level")]
    NoLevels,
    #[error("Dirichlet condition on hanging node {0} is not supported")]
    DirichletOnHanging(usize),
    #[error("boundary tag {0} is both Dirichlet and Neumann")]
    ConflictingTag(u32),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub nodes: [usize; 3],
    pub tag: u32,
}

/// Conforming coarse mesh; every tetrahedron is stored positively oriented.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMesh {
    pub vertices: Vec<Point>,
    pub tets: Vec<[usize; 4]>,
    pub boundary: Vec<BoundaryFace>,
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot3(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    dot3(sub(a, b), sub(a, b)).sqrt()
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
pub fn signed_volume(a: Point, b: Point, c: Point, d: Point) -> f64 {
    dot3(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

fn diameter(p: &[Point; 4]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            m = m.max(dist(p[i], p[j]));
        }
    }
    m
}

pub(crate) fn is_degenerate(p: &[Point; 4]) -> bool {
    let h = diameter(p);
    signed_volume(p[0], p[1], p[2], p[3]).abs() <= 1e-12 * h * h * h
}

/// Local faces of a tetrahedron, `FACES[i]` being opposite vertex `i`.
pub const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
pub const EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

impl CoarseMesh {
    /// Validates the mesh and flips negatively oriented tetrahedra.
    pub fn new(vertices: Vec<Point>, mut tets: Vec<[usize; 4]>, boundary: Vec<BoundaryFace>) -> Result<Self, MeshError> {
        for (e, t) in tets.iter_mut().enumerate() {
            if let Some(&v) = t.iter().find(|&&v| v >= vertices.len()) {
                return Err(MeshError::BadVertex { element: e, vertex: v });
            }
            let p = t.map(|v| vertices[v]);
            if is_degenerate(&p) {
                return Err(MeshError::Degenerate(e));
            }
            if signed_volume(p[0], p[1], p[2], p[3]) < 0.0 {
                t.swap(2, 3);
            }
        }
        let mesh = Self { vertices, tets, boundary };
        let faces = mesh.face_map();
        for f in &mesh.boundary {
            let mut k = f.nodes;
            k.sort_unstable();
            if !faces.contains_key(&k) {
                return Err(MeshError::OrphanFace(f.nodes));
            }
        }
        Ok(mesh)
    }

    /// Sorted face → incident elements.
    pub fn face_map(&self) -> std::collections::HashMap<[usize; 3], Vec<usize>> {
        let mut m: std::collections::HashMap<[usize; 3], Vec<usize>> = std::collections::HashMap::new();
        for (e, t) in self.tets.iter().enumerate() {
            for f in FACES {
                let mut k = [t[f[0]], t[f[1]], t[f[2]]];
                k.sort_unstable();
                m.entry(k).or_default().push(e);
            }
        }
        m
    }

    /// Face-adjacency lists of elements.
    pub fn dual_graph(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.tets.len()];
        for (_, es) in self.face_map() {
            if es.len() == 2 {
                adj[es[0]].push(es[1]);
                adj[es[1]].push(es[0]);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        adj
    }

    /// Elements incident to each vertex.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.vertices.len()];
        for (e, t) in self.tets.iter().enumerate() {
            for &v in t {
                m[v].push(e);
            }
        }
        m
    }

    pub fn element_points(&self, e: usize) -> [Point; 4] {
        self.tets[e].map(|v| self.vertices[v])
    }

    /// Structured box split into `nx·ny·nz` cells of six tetrahedra each.
    ///
    /// Boundary tags: 1/2 for x-min/x-max, 3/4 for y, 5/6 for z.
    pub fn boxed(lo: Point, hi: Point, n: [usize; 3]) -> Self {
        let [nx, ny, nz] = n;
        let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    vertices.push([
                        lo[0] + (hi[0] - lo[0]) * i as f64 / nx as f64,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / ny as f64,
                        lo[2] + (hi[2] - lo[2]) * k as f64 / nz as f64,
                    ]);
                }
            }
        }
        // Kuhn subdivision along the main diagonal of each cell
        const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut tets = Vec::with_capacity(6 * nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    for path in PATHS {
                        let mut c = [i, j, k];
                        let mut t = [id(c[0], c[1], c[2]); 4];
                        for (s, &axis) in path.iter().enumerate() {
                            c[axis] += 1;
                            t[s + 1] = id(c[0], c[1], c[2]);
                        }
                        let p = t.map(|v| vertices[v]);
                        if signed_volume(p[0], p[1], p[2], p[3]) < 0.0 {
                            t.swap(2, 3);
                        }
                        tets.push(t);
                    }
                }
            }
        }
        let mut mesh = Self { vertices, tets, boundary: Vec::new() };
        let mut boundary = Vec::new();
        let mut faces: Vec<([usize; 3], usize)> = mesh.face_map().into_iter().filter(|(_, es)| es.len() == 1).map(|(f, es)| (f, es[0])).collect();
        faces.sort_unstable();
        for (f, _) in faces {
            let p = f.map(|v| mesh.vertices[v]);
            let tag = (0..3)
                .find_map(|axis| {
                    if p.iter().all(|q| q[axis] == lo[axis]) {
                        Some(2 * axis as u32 + 1)
                    } else if p.iter().all(|q| q[axis] == hi[axis]) {
                        Some(2 * axis as u32 + 2)
                    } else {
                        None
                    }
                })
                .expect("boundary face off the box surface");
            boundary.push(BoundaryFace { nodes: f, tag });
        }
        mesh.boundary = boundary;
        mesh
    }
}
