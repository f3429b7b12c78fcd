#![allow(dead_code)]

pub mod octree;

use std::sync::Arc;

use glsolve::elasticity::{LoadSet, Material};
use glsolve::mesh::{BoundaryConditions, CoarseMesh, NestedMesh};
use glsolve::twoscale::Problem;

/// Unit cube split in `n³` cells, macros with centroid in `region` refined `levels` times.
pub fn cube_mesh(n: usize, levels: u32, region: impl Fn([f64; 3]) -> bool) -> NestedMesh {
    let coarse = CoarseMesh::boxed([0.0; 3], [1.0; 3], [n, n, n]);
    let marks: Vec<bool> = (0..coarse.tets.len())
        .map(|e| {
            let p = coarse.element_points(e);
            region([0, 1, 2].map(|d| (p[0][d] + p[1][d] + p[2][d] + p[3][d]) / 4.0))
        })
        .collect();
    NestedMesh::new(coarse).refine(|e| marks[e], levels).unwrap()
}

/// Cantilever-like problem: clamped at x = 0, bending traction at x = 1,
/// body force; refinement away from the clamped face.
pub fn bending_problem(n: usize, levels: u32) -> Problem {
    let mesh = cube_mesh(n, levels, |c| c[0] > 0.5 && c[1] > 0.3);
    let bc = BoundaryConditions::default().clamp(1, [true; 3]).neumann(2);
    let loads = LoadSet::default()
        .with_traction(2, Arc::new(|x: [f64; 3]| [0.2 * x[1], 0.0, -1.0 - x[1] * x[2]]))
        .with_body(Arc::new(|x: [f64; 3]| [0.0, 0.1 * x[0], -0.5]))
        .with_degrees(2, 3);
    Problem::new(mesh, bc, Material::new(100.0, 0.3).unwrap(), loads).unwrap()
}

/// Uniaxial tension with an affine exact solution.
pub fn tension_problem(n: usize, levels: u32) -> Problem {
    let mesh = cube_mesh(n, levels, |c| c[0] > 0.5);
    // coarse vertex ids of the box: i + (n+1)·(j + (n+1)·k)
    let v = |i: usize, j: usize, k: usize| i + (n + 1) * (j + (n + 1) * k);
    let bc = BoundaryConditions::default()
        .clamp(1, [true, false, false])
        .pin(v(0, 0, 0), [true; 3])
        .pin(v(0, n, 0), [true, false, true])
        .pin(v(0, 0, n), [true, true, false]);
    let loads = LoadSet::default().with_traction(2, Arc::new(|_| [1.0, 0.0, 0.0]));
    Problem::new(mesh, bc, Material::new(10.0, 0.25).unwrap(), loads).unwrap()
}
