use std::collections::{HashMap, HashSet};

use super::{dist, is_degenerate, signed_volume, CoarseMesh, MeshError, Point, EDGES, FACES};

/// How a node came to exist; barycentric coordinates are derived from it exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeOrigin {
    Vertex(usize),
    Midpoint(usize, usize),
    Centroid([usize; 4]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroTet {
    pub nodes: [usize; 4],
    pub macro_id: usize,
    pub depth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HangingNode {
    pub node: usize,
    pub parents: [usize; 2],
    pub weights: [f64; 2],
}

/// Coarse mesh plus the leaf micro elements embedded in every macro element.
///
/// Coarse vertices keep their ids as nodes `0..nv`.
#[derive(Debug, Clone)]
pub struct NestedMesh {
    coarse: CoarseMesh,
    nodes: Vec<Point>,
    origin: Vec<NodeOrigin>,
    micro: Vec<MicroTet>,
    macro_micro: Vec<Vec<usize>>,
    hanging: Vec<HangingNode>,
    hanging_of: HashMap<usize, usize>,
    midpoints: HashMap<(usize, usize), usize>,
    refined: bool,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

struct Builder {
    nodes: Vec<Point>,
    origin: Vec<NodeOrigin>,
    midpoints: HashMap<(usize, usize), usize>,
}

impl Builder {
    fn mid(&mut self, a: usize, b: usize) -> usize {
        let k = key(a, b);
        if let Some(&m) = self.midpoints.get(&k) {
            return m;
        }
        let (p, q) = (self.nodes[k.0], self.nodes[k.1]);
        let id = self.nodes.len();
        self.nodes.push([(p[0] + q[0]) * 0.5, (p[1] + q[1]) * 0.5, (p[2] + q[2]) * 0.5]);
        self.origin.push(NodeOrigin::Midpoint(k.0, k.1));
        self.midpoints.insert(k, id);
        id
    }

    fn centroid(&mut self, t: [usize; 4]) -> usize {
        let mut c = [0.0; 3];
        for &v in &t {
            for d in 0..3 {
                c[d] += self.nodes[v][d];
            }
        }
        let id = self.nodes.len();
        self.nodes.push(c.map(|x| x * 0.25));
        self.origin.push(NodeOrigin::Centroid(t));
        id
    }

    fn oriented(&self, mut t: [usize; 4], macro_id: usize, depth: u32) -> Result<MicroTet, MeshError> {
        let p = t.map(|v| self.nodes[v]);
        if is_degenerate(&p) {
            return Err(MeshError::Degenerate(macro_id));
        }
        if signed_volume(p[0], p[1], p[2], p[3]) < 0.0 {
            t.swap(2, 3);
        }
        Ok(MicroTet { nodes: t, macro_id, depth })
    }

    /// Regular 8-way split; the inner octahedron is cut along its shortest
    /// diagonal, ties going to the diagonal with the lowest node id.
    fn red(&mut self, t: &MicroTet) -> Result<Vec<MicroTet>, MeshError> {
        let v = t.nodes;
        let m = |s: &mut Self, i: usize, j: usize| s.mid(v[i], v[j]);
        let m01 = m(self, 0, 1);
        let m02 = m(self, 0, 2);
        let m03 = m(self, 0, 3);
        let m12 = m(self, 1, 2);
        let m13 = m(self, 1, 3);
        let m23 = m(self, 2, 3);
        let d = t.depth + 1;
        let mut out = vec![
            self.oriented([v[0], m01, m02, m03], t.macro_id, d)?,
            self.oriented([m01, v[1], m12, m13], t.macro_id, d)?,
            self.oriented([m02, m12, v[2], m23], t.macro_id, d)?,
            self.oriented([m03, m13, m23, v[3]], t.macro_id, d)?,
        ];
        // (diagonal, equator cycle)
        let options = [
            ((m01, m23), [m02, m03, m13, m12]),
            ((m02, m13), [m01, m03, m23, m12]),
            ((m03, m12), [m01, m02, m23, m13]),
        ];
        let len = |(a, b): (usize, usize)| dist(self.nodes[a], self.nodes[b]);
        let mut best = 0;
        for k in 1..3 {
            let (lb, lk) = (len(options[best].0), len(options[k].0));
            let tol = 1e-12 * lb.max(lk);
            let lower = |(a, b): (usize, usize)| a.min(b);
            if lk < lb - tol || ((lk - lb).abs() <= tol && lower(options[k].0) < lower(options[best].0)) {
                best = k;
            }
        }
        let ((p, q), eq) = options[best];
        for i in 0..4 {
            out.push(self.oriented([p, q, eq[i], eq[(i + 1) % 4]], t.macro_id, d)?);
        }
        Ok(out)
    }

    /// Conforming split of a tetrahedron carrying edge midpoints: every face is
    /// triangulated from its own midpoints and coned to the centroid.
    fn close(&mut self, t: &MicroTet) -> Result<Vec<MicroTet>, MeshError> {
        let c = self.centroid(t.nodes);
        let mut out = Vec::new();
        for f in FACES {
            let tri = [t.nodes[f[0]], t.nodes[f[1]], t.nodes[f[2]]];
            for s in self.triangulate(tri) {
                out.push(self.oriented([s[0], s[1], s[2], c], t.macro_id, t.depth + 1)?);
            }
        }
        Ok(out)
    }

    fn triangulate(&self, f: [usize; 3]) -> Vec<[usize; 3]> {
        let mid = |a: usize, b: usize| self.midpoints.get(&key(a, b)).copied();
        let ms = [mid(f[0], f[1]), mid(f[1], f[2]), mid(f[2], f[0])];
        let count = ms.iter().filter(|m| m.is_some()).count();
        match count {
            0 => vec![f],
            3 => {
                let (a, b, c) = (f[0], f[1], f[2]);
                let (mab, mbc, mca) = (ms[0].unwrap(), ms[1].unwrap(), ms[2].unwrap());
                vec![[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]]
            }
            1 => {
                let k = ms.iter().position(|m| m.is_some()).unwrap();
                let (p, q, r) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let m = ms[k].unwrap();
                vec![[p, m, r], [m, q, r]]
            }
            _ => {
                // the edge without midpoint is (r, p); midpoints on (p, q) and (q, r)
                let k = ms.iter().position(|m| m.is_none()).unwrap();
                let (r, p, q) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let m1 = ms[(k + 1) % 3].unwrap();
                let m2 = ms[(k + 2) % 3].unwrap();
                let mut tris = vec![[m1, q, m2]];
                if p.min(m2) < m1.min(r) {
                    tris.push([p, m1, m2]);
                    tris.push([p, m2, r]);
                } else {
                    tris.push([p, m1, r]);
                    tris.push([m1, m2, r]);
                }
                tris
            }
        }
    }
}

impl NestedMesh {
    /// Unrefined nesting: one micro element per macro element.
    pub fn new(coarse: CoarseMesh) -> Self {
        let nodes = coarse.vertices.clone();
        let origin = (0..nodes.len()).map(NodeOrigin::Vertex).collect();
        let micro: Vec<MicroTet> = coarse
            .tets
            .iter()
            .enumerate()
            .map(|(e, &t)| MicroTet { nodes: t, macro_id: e, depth: 0 })
            .collect();
        let macro_micro = (0..micro.len()).map(|e| vec![e]).collect();
        Self {
            coarse,
            nodes,
            origin,
            micro,
            macro_micro,
            hanging: Vec::new(),
            hanging_of: HashMap::new(),
            midpoints: HashMap::new(),
            refined: false,
        }
    }

    /// Refines the selected macro elements `levels` times.
    ///
    /// Neighbours are split as well whenever leaving them untouched would put a
    /// node on one of their faces other than their own edge midpoints. After the
    /// last level, leaves of refined macro elements that still carry edge
    /// midpoints are closed conformingly, so hanging nodes survive only on edges
    /// of unrefined macro elements.
    pub fn refine<F: Fn(usize) -> bool>(self, selector: F, levels: u32) -> Result<Self, MeshError> {
        if self.refined {
            return Err(MeshError::AlreadyRefined);
        }
        if levels == 0 {
            return Err(MeshError::NoLevels);
        }
        let nmacro = self.coarse.tets.len();
        if !(0..nmacro).any(&selector) {
            return Err(MeshError::EmptySelection);
        }
        let mut b = Builder { nodes: self.nodes, origin: self.origin, midpoints: self.midpoints };
        let mut leaves = self.micro;

        for _ in 0..levels {
            let mut marked: Vec<bool> = leaves.iter().map(|t| selector(t.macro_id)).collect();
            let mut split_edges: HashSet<(usize, usize)> = HashSet::new();
            for (t, _) in leaves.iter().zip(&marked).filter(|(_, &m)| m) {
                for e in EDGES {
                    split_edges.insert(key(t.nodes[e[0]], t.nodes[e[1]]));
                }
            }
            loop {
                let mut changed = false;
                for (i, t) in leaves.iter().enumerate() {
                    if marked[i] || !violates(t, &b.midpoints, &split_edges) {
                        continue;
                    }
                    marked[i] = true;
                    changed = true;
                    for e in EDGES {
                        split_edges.insert(key(t.nodes[e[0]], t.nodes[e[1]]));
                    }
                }
                if !changed {
                    break;
                }
            }
            let mut next = Vec::with_capacity(leaves.len() * 2);
            for (t, m) in leaves.iter().zip(&marked) {
                if *m {
                    next.extend(b.red(t)?);
                } else {
                    next.push(*t);
                }
            }
            leaves = next;
        }

        let mut count = vec![0usize; nmacro];
        for t in &leaves {
            count[t.macro_id] += 1;
        }
        let mut closed = Vec::with_capacity(leaves.len());
        for t in &leaves {
            let mids = EDGES.iter().filter(|e| b.midpoints.contains_key(&key(t.nodes[e[0]], t.nodes[e[1]]))).count();
            if count[t.macro_id] > 1 && mids == 6 {
                closed.extend(b.red(t)?);
            } else if count[t.macro_id] > 1 && mids > 0 {
                closed.extend(b.close(t)?);
            } else {
                closed.push(*t);
            }
        }
        closed.sort_by_key(|t| t.macro_id);
        let mut macro_micro = vec![Vec::new(); nmacro];
        for (i, t) in closed.iter().enumerate() {
            macro_micro[t.macro_id].push(i);
        }

        let mut hanging = Vec::new();
        let mut hanging_of = HashMap::new();
        for t in &closed {
            for e in EDGES {
                let k = key(t.nodes[e[0]], t.nodes[e[1]]);
                if let Some(&m) = b.midpoints.get(&k) {
                    if let std::collections::hash_map::Entry::Vacant(slot) = hanging_of.entry(m) {
                        slot.insert(usize::MAX);
                        hanging.push(HangingNode { node: m, parents: [k.0, k.1], weights: [0.5, 0.5] });
                    }
                }
            }
        }
        hanging.sort_by_key(|h| h.node);
        for (i, h) in hanging.iter().enumerate() {
            hanging_of.insert(h.node, i);
        }
        Ok(Self {
            coarse: self.coarse,
            nodes: b.nodes,
            origin: b.origin,
            micro: closed,
            macro_micro,
            hanging,
            hanging_of,
            midpoints: b.midpoints,
            refined: true,
        })
    }

    pub fn coarse(&self) -> &CoarseMesh {
        &self.coarse
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn origin(&self, node: usize) -> NodeOrigin {
        self.origin[node]
    }

    pub fn micro(&self) -> &[MicroTet] {
        &self.micro
    }

    pub fn macro_micro(&self, e: usize) -> &[usize] {
        &self.macro_micro[e]
    }

    pub fn macro_count(&self) -> usize {
        self.coarse.tets.len()
    }

    pub fn is_macro_refined(&self, e: usize) -> bool {
        self.macro_micro[e].len() > 1
    }

    pub fn hanging(&self) -> &[HangingNode] {
        &self.hanging
    }

    pub fn hanging_node(&self, node: usize) -> Option<&HangingNode> {
        self.hanging_of.get(&node).map(|&i| &self.hanging[i])
    }

    pub fn is_hanging(&self, node: usize) -> bool {
        self.hanging_of.contains_key(&node)
    }

    /// Sorted nodes of the leaves of macro element `e`.
    pub fn macro_nodes(&self, e: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.macro_micro[e].iter().flat_map(|&t| self.micro[t].nodes).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Nodes in use by at least one leaf.
    pub fn active_nodes(&self) -> Vec<bool> {
        let mut used = vec![false; self.nodes.len()];
        for t in &self.micro {
            for &v in &t.nodes {
                used[v] = true;
            }
        }
        used
    }

    /// Exact barycentric coordinates of `nodes` with respect to macro `e`,
    /// obtained from the node construction history.
    pub fn barycentric(&self, e: usize, nodes: &[usize]) -> Vec<[f64; 4]> {
        let tet = self.coarse.tets[e];
        let mut memo: HashMap<usize, [f64; 4]> = HashMap::new();
        nodes.iter().map(|&n| self.bary_rec(&tet, n, &mut memo)).collect()
    }

    fn bary_rec(&self, tet: &[usize; 4], n: usize, memo: &mut HashMap<usize, [f64; 4]>) -> [f64; 4] {
        if let Some(v) = memo.get(&n) {
            return *v;
        }
        let v = match self.origin[n] {
            NodeOrigin::Vertex(c) => {
                let mut l = [0.0; 4];
                let k = tet.iter().position(|&t| t == c).expect("coarse vertex outside macro element");
                l[k] = 1.0;
                l
            }
            NodeOrigin::Midpoint(a, b) => {
                let (la, lb) = (self.bary_rec(tet, a, memo), self.bary_rec(tet, b, memo));
                [0, 1, 2, 3].map(|i| 0.5 * (la[i] + lb[i]))
            }
            NodeOrigin::Centroid(q) => {
                let ls = q.map(|x| self.bary_rec(tet, x, memo));
                [0, 1, 2, 3].map(|i| 0.25 * (ls[0][i] + ls[1][i] + ls[2][i] + ls[3][i]))
            }
        };
        memo.insert(n, v);
        v
    }

    /// Coordinates of a point in macro element `e` from barycentric coordinates.
    pub fn point_from_barycentric(&self, e: usize, l: [f64; 4]) -> Point {
        let p = self.coarse.element_points(e);
        [0, 1, 2].map(|d| l[0] * p[0][d] + l[1] * p[1][d] + l[2] * p[2][d] + l[3] * p[3][d])
    }
}

/// A leaf may stay whole only if its faces carry no node besides its vertices
/// and its own edge midpoints once the marked leaves are split.
fn violates(t: &MicroTet, mids: &HashMap<(usize, usize), usize>, split: &HashSet<(usize, usize)>) -> bool {
    let will = |a: usize, b: usize| {
        let k = key(a, b);
        mids.contains_key(&k) || split.contains(&k)
    };
    for f in FACES {
        let tri = [t.nodes[f[0]], t.nodes[f[1]], t.nodes[f[2]]];
        let mut cand: Vec<usize> = tri.to_vec();
        for i in 0..3 {
            if let Some(&m) = mids.get(&key(tri[i], tri[(i + 1) % 3])) {
                cand.push(m);
            }
        }
        for i in 0..cand.len() {
            for j in i + 1..cand.len() {
                if i < 3 && j < 3 {
                    continue;
                }
                if will(cand[i], cand[j]) {
                    return true;
                }
            }
        }
    }
    false
}
