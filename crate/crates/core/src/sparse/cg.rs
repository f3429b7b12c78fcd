use serde::{Deserialize, Serialize};

use super::{dot, Factor, SparseSym};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    /// Executed loop bodies.
    pub iterations: usize,
    /// `ε·sqrt(crit²/stop)`, i.e. `‖r‖/‖b‖` scaled back to the tolerance.
    pub crit: f64,
    pub converged: bool,
}

/// Operator, preconditioner and inner product of a (possibly distributed) CG.
///
/// Vectors are the caller's local pieces; `dot` must return the global value.
pub trait CgSpace {
    fn dot(&mut self, x: &[f64], y: &[f64]) -> f64;
    fn apply(&mut self, x: &[f64], y: &mut [f64]);
    fn precondition(&mut self, r: &[f64], z: &mut [f64]);
}

/// Preconditioned conjugate gradient.
///
/// The stopping threshold is `stop = (b·b)·ε²`, taken from the right-hand side
/// before the initial residual `b − A x0` is formed; the loop ends as soon as
/// `r·r < stop`. A loop body runs at least once unless `b` is identically zero.
pub fn pcg<S: CgSpace + ?Sized>(space: &mut S, x: &mut [f64], b: &[f64], eps: f64, iter_max: usize) -> CgReport {
    let n = x.len();
    let mut r = b.to_vec();
    let stop = space.dot(&r, &r) * eps * eps;
    if stop == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgReport { iterations: 0, crit: 0.0, converged: true };
    }
    let mut sp = vec![0.0; n];
    space.apply(x, &mut sp);
    for i in 0..n {
        r[i] -= sp[i];
    }
    let mut z = vec![0.0; n];
    space.precondition(&r, &mut z);
    let mut res_o = space.dot(&r, &z);
    let mut p = z.clone();
    let mut iterations = 0usize;
    let mut crit2;
    loop {
        let res_n = res_o;
        space.apply(&p, &mut sp);
        let curv = space.dot(&p, &sp);
        let alpha = if curv != 0.0 { res_n / curv } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * sp[i];
        }
        crit2 = space.dot(&r, &r);
        iterations += 1;
        if crit2 < stop {
            return CgReport { iterations, crit: eps * (crit2 / stop).sqrt(), converged: true };
        }
        if iterations > iter_max {
            return CgReport { iterations, crit: eps * (crit2 / stop).sqrt(), converged: false };
        }
        space.precondition(&r, &mut z);
        res_o = space.dot(&r, &z);
        let beta = if res_n != 0.0 { res_o / res_n } else { 0.0 };
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

/// Single-rank space over an assembled matrix with an optional factor preconditioner.
pub struct LocalSpace<'a> {
    pub matrix: &'a SparseSym,
    pub preconditioner: Option<&'a Factor>,
}

impl CgSpace for LocalSpace<'_> {
    fn dot(&mut self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, y)
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y);
    }

    fn precondition(&mut self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        if let Some(f) = self.preconditioner {
            f.solve_in_place(z);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rhs_is_immediate() {
        let a = SparseSym::identity(3);
        let mut x = vec![0.0; 3];
        let rep = pcg(&mut LocalSpace { matrix: &a, preconditioner: None }, &mut x, &[0.0; 3], 1e-8, 10);
        assert_eq!(rep.iterations, 0);
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn identity_converges_in_one() {
        let a = SparseSym::identity(4);
        let b = [1.0, -2.0, 3.0, 0.5];
        let mut x = vec![0.0; 4];
        let rep = pcg(&mut LocalSpace { matrix: &a, preconditioner: None }, &mut x, &b, 1e-10, 10);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert_eq!(x, b.to_vec());
    }

    #[test]
    fn warm_start_runs_one_body() {
        let a = SparseSym::from_dense(3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = [1.0, 2.0, 3.0];
        let f = Factor::new(&a).unwrap();
        let mut x = f.solve(&b);
        let rep = pcg(&mut LocalSpace { matrix: &a, preconditioner: None }, &mut x, &b, 1e-8, 10);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }
}
