use std::collections::BTreeSet;

use glsolve::mesh::{classify, BoundaryConditions, CoarseMesh, DofPartition, MeshError, NestedMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn centroid(m: &CoarseMesh, e: usize) -> [f64; 3] {
    let p = m.element_points(e);
    [0, 1, 2].map(|d| (p[0][d] + p[1][d] + p[2][d] + p[3][d]) / 4.0)
}

fn lattice_key(p: [f64; 3], scale: f64) -> [i64; 3] {
    p.map(|x| {
        let v = x * scale;
        assert!((v - v.round()).abs() < 1e-9, "node off the lattice: {p:?}");
        v.round() as i64
    })
}

#[test]
fn uniform_box_nodes_fill_the_lattice() {
    for levels in 1..=3u32 {
        let coarse = CoarseMesh::boxed([0.0; 3], [1.0, 2.0, 1.0], [1, 2, 1]);
        let mesh = NestedMesh::new(coarse).refine(|_| true, levels).unwrap();
        let s = (1u64 << levels) as f64;
        let active = mesh.active_nodes();
        let found: BTreeSet<[i64; 3]> = (0..mesh.nodes().len()).filter(|&n| active[n]).map(|n| lattice_key(mesh.nodes()[n], s)).collect();
        let mut expected = BTreeSet::new();
        let n = 1i64 << levels;
        for i in 0..=n {
            for j in 0..=2 * n {
                for k in 0..=n {
                    expected.insert([i, j, k]);
                }
            }
        }
        assert_eq!(found, expected, "level {levels}");
        assert_eq!(mesh.micro().len(), 12 * 8usize.pow(levels));
        assert!(mesh.hanging().is_empty());
    }
}

fn on_open_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> bool {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab.iter().map(|x| x * x).sum::<f64>();
    let t = (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2;
    if t <= 1e-12 || t >= 1.0 - 1e-12 {
        return false;
    }
    let d2: f64 = (0..3).map(|i| (ap[i] - t * ab[i]).powi(2)).sum();
    d2 <= 1e-24 * len2
}

fn local_mesh(levels: u32) -> NestedMesh {
    let coarse = CoarseMesh::boxed([0.0; 3], [1.0; 3], [3, 3, 2]);
    let sel: Vec<bool> = (0..coarse.tets.len()).map(|e| {
        let c = centroid(&coarse, e);
        c[0] < 0.4 && c[1] < 0.5
    }).collect();
    NestedMesh::new(coarse).refine(|e| sel[e], levels).unwrap()
}

#[test]
fn at_most_one_node_inside_any_edge() {
    for levels in 1..=3 {
        let mesh = local_mesh(levels);
        let active = mesh.active_nodes();
        let act: Vec<usize> = (0..mesh.nodes().len()).filter(|&n| active[n]).collect();
        let mut edges = BTreeSet::new();
        for t in mesh.micro() {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.insert((t.nodes[i].min(t.nodes[j]), t.nodes[i].max(t.nodes[j])));
                }
            }
        }
        for &(a, b) in &edges {
            let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
            let inside = act.iter().filter(|&&n| on_open_segment(mesh.nodes()[n], pa, pb)).count();
            assert!(inside <= 1, "edge ({a},{b}) carries {inside} nodes at level {levels}");
            if inside == 1 {
                assert!(!mesh.is_macro_refined(mesh.micro().iter().find(|t| t.nodes.contains(&a) && t.nodes.contains(&b)).unwrap().macro_id));
            }
        }
        for h in mesh.hanging() {
            let m = (0..3).map(|d| 0.5 * (mesh.nodes()[h.parents[0]][d] + mesh.nodes()[h.parents[1]][d])).collect::<Vec<_>>();
            assert_eq!(m, mesh.nodes()[h.node].to_vec());
            assert_eq!(h.weights.iter().sum::<f64>(), 1.0);
            assert!(h.parents.iter().all(|&p| p < mesh.coarse().vertices.len()));
        }
    }
}

#[test]
fn micro_elements_tile_their_macro_element() {
    let mesh = local_mesh(2);
    for e in 0..mesh.macro_count() {
        let p = mesh.coarse().element_points(e);
        let whole = glsolve::mesh::signed_volume(p[0], p[1], p[2], p[3]);
        let parts: f64 = mesh
            .macro_micro(e)
            .iter()
            .map(|&t| {
                let q = mesh.micro()[t].nodes.map(|v| mesh.nodes()[v]);
                let v = glsolve::mesh::signed_volume(q[0], q[1], q[2], q[3]);
                assert!(v > 0.0);
                v
            })
            .sum();
        assert!((parts - whole).abs() <= 1e-14 * whole.abs().max(1.0));
        for &t in mesh.macro_micro(e) {
            let nodes = mesh.micro()[t].nodes.to_vec();
            for l in mesh.barycentric(e, &nodes) {
                assert!(l.iter().all(|&x| x >= 0.0));
            }
        }
    }
}

/// Chain of ten tetrahedra on the moment curve, consecutive ones sharing a face.
fn chain() -> CoarseMesh {
    let v: Vec<[f64; 3]> = (0..13).map(|i| {
        let t = i as f64;
        [t, t * t / 10.0, t * t * t / 100.0]
    }).collect();
    let tets = (0..10).map(|i| [i, i + 1, i + 2, i + 3]).collect();
    CoarseMesh::new(v, tets, vec![]).unwrap()
}

#[test]
fn chain_classification_matches_hand_count() {
    let mesh = NestedMesh::new(chain()).refine(|e| e == 4, 1).unwrap();
    let cls = classify(&mesh);
    assert_eq!(cls.enriched, vec![4, 5, 6, 7]);
    assert_eq!(cls.sp_elements(), vec![1, 2, 3, 4, 5, 6, 7]);
    assert_eq!(cls.nsp_elements(), vec![0, 8, 9]);
    let p5 = &cls.patches[1];
    assert_eq!(p5.node, 5);
    assert_eq!(p5.elements, vec![2, 3, 4, 5]);
    assert_eq!(p5.weight, 8 + 3);
    // every edge of element 4 except (4, 7) is shared with an unrefined neighbour
    assert_eq!(mesh.hanging().len(), 5);

    let mesh2 = NestedMesh::new(chain()).refine(|e| e == 4, 2).unwrap();
    let cls2 = classify(&mesh2);
    let refined: Vec<usize> = (0..10).filter(|&e| cls2.refined[e]).collect();
    assert_eq!(refined, vec![2, 3, 4, 5, 6]);
    assert_eq!(cls2.enriched, (2..=9).collect::<Vec<_>>());
    assert!(cls2.nsp_elements().is_empty());
}

#[test]
fn patch_support_matches_incidence_scan() {
    let mesh = local_mesh(2);
    let cls = classify(&mesh);
    let coarse = mesh.coarse();
    for p in &cls.patches {
        let scan: Vec<usize> = (0..coarse.tets.len()).filter(|&e| coarse.tets[e].contains(&p.node)).collect();
        assert_eq!(p.elements, scan);
        assert!(p.weight > 0);
        assert!(p.elements.iter().all(|&e| cls.sp[e]));
    }
    assert_eq!(classify(&mesh), cls);
}

#[test]
fn full_and_empty_refinement() {
    let coarse = CoarseMesh::boxed([0.0; 3], [1.0; 3], [2, 2, 2]);
    let none = classify(&NestedMesh::new(coarse.clone()));
    assert!(none.enriched.is_empty() && none.sp_elements().is_empty());
    let full = NestedMesh::new(coarse).refine(|_| true, 1).unwrap();
    let cls = classify(&full);
    assert_eq!(cls.enriched.len(), 27);
    assert!(cls.nsp_elements().is_empty());
    let dofs = DofPartition::build(&full, &cls, &BoundaryConditions::default()).unwrap();
    assert!(dofs.dirichlet.is_empty() && dofs.constrained.is_empty());
    assert_eq!(dofs.reference_free, dofs.reference);
    assert!(dofs.violations().is_empty());
}

#[test]
fn interior_patch_has_all_interior_nodes_free() {
    let coarse = CoarseMesh::boxed([0.0; 3], [1.0; 3], [2, 2, 2]);
    let mesh = NestedMesh::new(coarse).refine(|_| true, 2).unwrap();
    let cls = classify(&mesh);
    let dofs = DofPartition::build(&mesh, &cls, &BoundaryConditions::default()).unwrap();
    let centre = cls.patches.iter().position(|p| mesh.nodes()[p.node] == [0.5, 0.5, 0.5]).unwrap();
    let patch = &cls.patches[centre];
    let coarse = mesh.coarse();
    // faces shared between the star and an element outside it
    let faces = coarse.face_map();
    let mut count = std::collections::HashMap::new();
    for &e in &patch.elements {
        let t = coarse.tets[e];
        for skip in 0..4 {
            let mut f: Vec<usize> = (0..4).filter(|&i| i != skip).map(|i| t[i]).collect();
            f.sort_unstable();
            *count.entry(f).or_insert(0) += 1;
        }
    }
    let boundary: Vec<[[f64; 3]; 3]> = count
        .into_iter()
        .filter(|(f, c)| *c == 1 && faces[&[f[0], f[1], f[2]]].len() == 2)
        .map(|(f, _)| [coarse.vertices[f[0]], coarse.vertices[f[1]], coarse.vertices[f[2]]])
        .collect();
    let active = mesh.active_nodes();
    let interior = (0..mesh.nodes().len())
        .filter(|&n| active[n])
        .filter(|&n| {
            let x = mesh.nodes()[n];
            let inside = patch.elements.iter().any(|&e| in_tet(x, coarse.element_points(e)));
            inside && !boundary.iter().any(|f| on_triangle(x, *f))
        })
        .count();
    assert_eq!(dofs.patches[centre].free.len(), 3 * interior);
    assert!(!dofs.patches[centre].interface.is_empty());
}

fn in_tet(x: [f64; 3], p: [[f64; 3]; 4]) -> bool {
    use glsolve::mesh::signed_volume as v;
    let total = v(p[0], p[1], p[2], p[3]);
    let parts = [v(x, p[1], p[2], p[3]), v(p[0], x, p[2], p[3]), v(p[0], p[1], x, p[3]), v(p[0], p[1], p[2], x)];
    parts.iter().all(|&w| w >= -1e-14 * total.abs())
}

fn on_triangle(x: [f64; 3], f: [[f64; 3]; 3]) -> bool {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let n = cross(sub(f[1], f[0]), sub(f[2], f[0]));
    if dot(n, sub(x, f[0])).abs() > 1e-12 * dot(n, n).sqrt() {
        return false;
    }
    (0..3).all(|i| dot(cross(sub(f[(i + 1) % 3], f[i]), sub(x, f[i])), n) >= -1e-14)
}

#[test]
fn random_partitions_satisfy_set_relations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..12 {
        let n = [rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..3)];
        let coarse = CoarseMesh::boxed([0.0; 3], [1.0, 1.5, 0.7], n);
        let ne = coarse.tets.len();
        let mut sel: Vec<bool> = (0..ne).map(|_| rng.gen_bool(0.3)).collect();
        sel[rng.gen_range(0..ne)] = true;
        let levels = rng.gen_range(1..3);
        let mesh = NestedMesh::new(coarse).refine(|e| sel[e], levels).unwrap();
        let cls = classify(&mesh);
        let mut bc = BoundaryConditions::default().neumann(2);
        if rng.gen_bool(0.5) {
            bc = bc.clamp(1, [true, rng.gen_bool(0.5), true]);
        }
        match DofPartition::build(&mesh, &cls, &bc) {
            Ok(d) => {
                assert!(d.violations().is_empty(), "{:?}", d.violations());
                assert_eq!(d.free.len(), d.classical_free.len() + d.enriched.len());
                assert_eq!(d.reference_free.len(), d.nsp_reference_free.len() + d.sp_reference_free.len());
                assert_eq!(d.unconstrained.len(), d.reference.len() - d.constrained.len());
            }
            Err(MeshError::DirichletOnHanging(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn dirichlet_on_hanging_node_is_rejected() {
    let coarse = CoarseMesh::boxed([0.0; 3], [1.0; 3], [2, 2, 1]);
    let sel: Vec<bool> = (0..coarse.tets.len()).map(|e| {
        let c = centroid(&coarse, e);
        c[0] < 0.5 && c[1] < 0.5
    }).collect();
    let mesh = NestedMesh::new(coarse).refine(|e| sel[e], 1).unwrap();
    let cls = classify(&mesh);
    let bc = BoundaryConditions::default().clamp(1, [true; 3]);
    assert!(matches!(DofPartition::build(&mesh, &cls, &bc), Err(MeshError::DirichletOnHanging(_))));
}
