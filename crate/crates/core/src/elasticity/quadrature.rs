//! Collapsed-coordinate Gauss rules on the reference simplices.

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Barycentric points and weights (summing to 1) exact for polynomials of
/// total degree `degree` on a tetrahedron.
pub fn tet_rule(degree: usize) -> Vec<([f64; 4], f64)> {
    if degree <= 1 {
        return vec![([0.25; 4], 1.0)];
    }
    let g = gauss_legendre(degree / 2 + 2);
    let mut out = Vec::with_capacity(g.len().pow(3));
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            for &(w, ww) in &g {
                let x = u;
                let y = v * (1.0 - u);
                let z = w * (1.0 - u) * (1.0 - v);
                let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                out.push(([1.0 - x - y - z, x, y, z], 6.0 * wu * wv * ww * jac));
            }
        }
    }
    out
}

/// Barycentric points and weights (summing to 1) exact for polynomials of
/// total degree `degree` on a triangle.
pub fn triangle_rule(degree: usize) -> Vec<([f64; 3], f64)> {
    if degree <= 1 {
        return vec![([1.0 / 3.0; 3], 1.0)];
    }
    let g = gauss_legendre(degree / 2 + 2);
    let mut out = Vec::with_capacity(g.len().pow(2));
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            let x = u;
            let y = v * (1.0 - u);
            out.push(([1.0 - x - y, x, y], 2.0 * wu * wv * (1.0 - u)));
        }
    }
    out
}
