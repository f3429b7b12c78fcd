//! Brute-force octree enumeration of patch kinds and dof counts.

use std::collections::{BTreeMap, BTreeSet};

use glsolve::costmodel::PatchKind;

type Node = [u64; 3];

/// Octree of the unit cube refined uniformly `l` times: leaf cells as
/// integer corner boxes on a `2^l` lattice, obtained by splitting cells.
fn octree_cells(l: u32) -> Vec<(Node, u64)> {
    let mut cells = vec![([0u64; 3], 1u64 << l)];
    for _ in 0..l {
        cells = cells
            .into_iter()
            .flat_map(|(o, h)| {
                let h2 = h / 2;
                (0..8).map(move |c| ([o[0] + (c & 1) * h2, o[1] + (c >> 1 & 1) * h2, o[2] + (c >> 2 & 1) * h2], h2))
            })
            .collect();
    }
    cells
}

fn cell_nodes(o: Node, h: u64) -> impl Iterator<Item = Node> {
    (0..8u64).map(move |c| [o[0] + (c & 1) * h, o[1] + (c >> 1 & 1) * h, o[2] + (c >> 2 & 1) * h])
}

/// Per kind: patch count and the set of dof counts observed, from explicit
/// cells of both levels.
pub fn enumerate(lc: u32, l: u32) -> (u64, BTreeMap<PatchKind, (u64, BTreeSet<u64>)>) {
    let fine = octree_cells(l);
    let all: BTreeSet<Node> = fine.iter().flat_map(|&(o, h)| cell_nodes(o, h)).collect();
    let scale = 1u64 << (l - lc);
    let top = 1u64 << l;
    let coarse = octree_cells(lc);
    let mut support: BTreeMap<Node, Vec<(Node, u64)>> = BTreeMap::new();
    for &(o, h) in &coarse {
        let (o, h) = (o.map(|v| v * scale), h * scale);
        for v in cell_nodes(o, h) {
            support.entry(v).or_default().push((o, h));
        }
    }
    let mut out: BTreeMap<PatchKind, (u64, BTreeSet<u64>)> = BTreeMap::new();
    for (v, cells) in support {
        let on_boundary = v.iter().filter(|&&c| c == 0 || c == top).count();
        let kind = match on_boundary {
            3 => PatchKind::Corner,
            2 => PatchKind::Edge,
            1 => PatchKind::Face,
            _ => PatchKind::Volume,
        };
        let inside = |n: &Node| cells.iter().any(|(o, h)| (0..3).all(|d| n[d] >= o[d] && n[d] <= o[d] + h));
        let dofs = 3 * all.iter().filter(|n| inside(n)).count() as u64;
        let e = out.entry(kind).or_default();
        e.0 += 1;
        e.1.insert(dofs);
    }
    (3 * all.len() as u64, out)
}
