#![allow(clippy::needless_range_loop)]

use glsolve::sparse::{dense_solve, norm2, pcg, Factor, FactorOptions, LocalSpace, SparseSym, TripletBuilder};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(n: usize, density: f64, seed: u64) -> SparseSym {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = TripletBuilder::new(n);
    let mut rowsum = vec![0.0; n];
    for i in 0..n {
        for j in 0..i {
            if rng.gen::<f64>() < density {
                let v: f64 = rng.gen_range(-1.0..1.0);
                t.add(i, j, v);
                rowsum[i] += v.abs();
                rowsum[j] += v.abs();
            }
        }
    }
    for i in 0..n {
        t.add(i, i, rowsum[i] + rng.gen_range(0.1..2.0));
    }
    t.finalize()
}

fn dense_matmul_reconstruct(f: &Factor) -> Vec<f64> {
    let n = f.dim();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        l[i * n + i] = 1.0;
        for j in 0..i {
            l[i * n + j] = f.l_entry(i, j);
        }
    }
    let d = f.d();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += l[i * n + k] * d[k] * l[j * n + k];
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn random_spd_50_residual() {
    let a = random_spd(50, 0.15, 7);
    let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let f = Factor::new(&a).unwrap();
    let x = f.solve(&b);
    let r: Vec<f64> = a.mul(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
    assert!(norm2(&r) / norm2(&b) <= 1e-10);
}

#[test]
fn reconstruction_matches_permuted_matrix() {
    for seed in 0..5 {
        let n = 60 + 20 * seed as usize;
        let a = random_spd(n, 0.08, seed);
        let f = Factor::new(&a).unwrap();
        let ldl = dense_matmul_reconstruct(&f);
        let dense = a.to_dense();
        let p = f.perm();
        let scale = a.max_abs_diag();
        for i in 0..n {
            for j in 0..n {
                let diff = (ldl[i * n + j] - dense[p[i] * n + p[j]]).abs();
                assert!(diff <= 1e-10 * scale, "entry {i},{j}: {diff}");
            }
        }
    }
}

#[test]
fn exact_preconditioner_converges_in_two() {
    let a = random_spd(80, 0.1, 3);
    let f = Factor::new(&a).unwrap();
    let b: Vec<f64> = (0..80).map(|i| 1.0 + i as f64).collect();
    let mut x = vec![0.0; 80];
    let rep = pcg(&mut LocalSpace { matrix: &a, preconditioner: Some(&f) }, &mut x, &b, 1e-10, 50);
    assert!(rep.converged);
    assert!(rep.iterations <= 2);
}

#[test]
fn flop_counters_are_deterministic() {
    let a = random_spd(70, 0.1, 11);
    let f1 = Factor::new(&a).unwrap();
    let f2 = Factor::new(&a).unwrap();
    assert_eq!(f1.factor_flops(), f2.factor_flops());
    assert_eq!(f1.perm(), f2.perm());
}

#[test]
fn natural_and_reordered_agree() {
    let a = random_spd(40, 0.2, 5);
    let b: Vec<f64> = (0..40).map(|i| (i % 7) as f64 - 3.0).collect();
    let x1 = Factor::new(&a).unwrap().solve(&b);
    let opts = FactorOptions { natural_order: true, ..Default::default() };
    let x2 = Factor::with_options(&a, opts).unwrap().solve(&b);
    for (p, q) in x1.iter().zip(&x2) {
        assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn agrees_with_dense_elimination(n in 2usize..100, density in 0.02f64..0.5, seed in 0u64..10_000) {
        let a = random_spd(n, density, seed);
        let b: Vec<f64> = (0..n).map(|i| ((i * 31 + seed as usize) % 17) as f64 - 8.0).collect();
        let x = Factor::new(&a).unwrap().solve(&b);
        let y = dense_solve(n, &a.to_dense(), &b).unwrap();
        let scale = norm2(&y).max(1e-300);
        let diff: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
        prop_assert!(norm2(&diff) / scale <= 1e-9);
    }
}
