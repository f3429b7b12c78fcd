//! Plain-text mesh format:
//!
//! ```text
//! # comment
//! vertices N
//! x y z            (N lines)
//! tetrahedra M
//! a b c d          (M lines, 0-based vertex ids)
//! boundary_faces K
//! a b c tag        (K lines)
//! ```

use std::fmt::Write as _;

use super::{BoundaryFace, CoarseMesh, MeshError};

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self) -> Result<Vec<&'a str>, MeshError> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let l = l.split('#').next().unwrap_or("").trim();
            if !l.is_empty() {
                return Ok(l.split_whitespace().collect());
            }
        }
        Err(MeshError::Parse { line: self.line + 1, message: "unexpected end of input".into() })
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse { line: self.line, message: message.into() }
    }

    fn header(&mut self, name: &str) -> Result<usize, MeshError> {
        let t = self.next_tokens()?;
        if t.len() != 2 || t[0] != name {
            return Err(self.err(format!("expected `{name} <count>`")));
        }
        t[1].parse().map_err(|_| self.err("bad count"))
    }

    fn values<T: std::str::FromStr, const N: usize>(&mut self) -> Result<[T; N], MeshError> {
        let t = self.next_tokens()?;
        if t.len() != N {
            return Err(self.err(format!("expected {N} values, found {}", t.len())));
        }
        let parsed: Result<Vec<T>, _> = t.iter().map(|s| s.parse::<T>()).collect();
        let v = parsed.map_err(|_| self.err("unparsable value"))?;
        v.try_into().map_err(|_| self.err("arity"))
    }
}

pub fn read_ascii(text: &str) -> Result<CoarseMesh, MeshError> {
    let mut r = Lines { inner: text.lines().enumerate(), line: 0 };
    let nv = r.header("vertices")?;
    let vertices = (0..nv).map(|_| r.values::<f64, 3>()).collect::<Result<Vec<_>, _>>()?;
    let nt = r.header("tetrahedra")?;
    let tets = (0..nt).map(|_| r.values::<usize, 4>()).collect::<Result<Vec<_>, _>>()?;
    let nb = r.header("boundary_faces")?;
    let boundary = (0..nb)
        .map(|_| r.values::<usize, 4>().map(|[a, b, c, tag]| BoundaryFace { nodes: [a, b, c], tag: tag as u32 }))
        .collect::<Result<Vec<_>, _>>()?;
    CoarseMesh::new(vertices, tets, boundary)
}

pub fn write_ascii(mesh: &CoarseMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "vertices {}", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    let _ = writeln!(s, "tetrahedra {}", mesh.tets.len());
    for t in &mesh.tets {
        let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "boundary_faces {}", mesh.boundary.len());
    for f in &mesh.boundary {
        let _ = writeln!(s, "{} {} {} {}", f.nodes[0], f.nodes[1], f.nodes[2], f.tag);
    }
    s
}
