mod common;

use common::{bending_problem, tension_problem};
use glsolve::bench::ReferenceSystem;
use glsolve::twoscale::{residual_on_ranks, ts_solve, CoarseStrategy, TsConfig};

fn reference(p: &glsolve::twoscale::Problem) -> (ReferenceSystem, Vec<f64>) {
    let r = ReferenceSystem::assemble(&p.mesh, &p.dofs, &p.material, &p.loads).unwrap();
    let u = r.solve().unwrap();
    (r, u)
}

fn energy_gap(r: &ReferenceSystem, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    r.matrix.quad_form(&d).max(0.0).sqrt()
}

#[test]
fn bending_converges_to_reference() {
    let p = bending_problem(2, 2);
    let (r, u) = reference(&p);
    let cfg = TsConfig { eps: 1e-9, max_iterations: 200, ..TsConfig::default() };
    let out = ts_solve(&p, 1, &cfg, None).unwrap();
    println!("{}", out.to_csv());
    assert!(out.converged(), "{:?}", out.history());
    let rel = energy_gap(&r, &out.fine, &u) / r.matrix.quad_form(&u).sqrt();
    println!("relative energy gap {rel:e}");
    assert!(rel < 1e-7);
}

#[test]
fn affine_solution_in_one_iteration() {
    let p = tension_problem(2, 2);
    let out = ts_solve(&p, 1, &TsConfig { eps: 1e-10, ..TsConfig::default() }, None).unwrap();
    assert_eq!(out.iterations(), 1, "{:?}", out.history());
    assert!(out.history()[0] <= 1e-10);
}

#[test]
fn residual_matches_monolithic_rows() {
    let p = bending_problem(2, 2);
    let (r, _) = reference(&p);
    let mut rng = 12345u64;
    let fine: Vec<f64> = (0..r.dim())
        .map(|_| {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let res: Vec<f64> = r.matrix.mul(&fine).iter().zip(&r.rhs).map(|(a, b)| a - b).collect();
    let frontier: std::collections::BTreeSet<usize> = p.dofs.interface_nodes.iter().copied().collect();
    let mut s = 0.0;
    for &d in &p.dofs.sp_reference_free {
        if !frontier.contains(&(d / 3)) {
            let i = r.index[d].unwrap();
            s += res[i] * res[i];
        }
    }
    let b = r.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let expect = s.sqrt() / b;
    for ranks in [1, 3] {
        let owner = p.partition(ranks).unwrap();
        let (resi, b_norm) = residual_on_ranks(&p, &owner, &fine).unwrap();
        assert!(((b_norm - b) / b).abs() < 1e-12, "{b_norm} vs {b}");
        assert!(((resi - expect) / expect).abs() < 1e-10, "{resi} vs {expect}");
    }
}

#[test]
fn trajectories_agree_across_rank_counts() {
    let p = bending_problem(2, 2);
    let cfg = TsConfig { eps: 1e-8, max_iterations: 30, ..TsConfig::default() };
    let base = ts_solve(&p, 1, &cfg, None).unwrap().history();
    for ranks in [2, 4] {
        let h = ts_solve(&p, ranks, &cfg, None).unwrap().history();
        assert_eq!(h.len(), base.len());
        for (a, b) in h.iter().zip(&base) {
            assert!(((a - b) / b).abs() < 1e-12, "{ranks} ranks: {a} vs {b}");
        }
    }
    let dd = ts_solve(&p, 3, &TsConfig { strategy: CoarseStrategy::DomainDecomposition, ..cfg.clone() }, None).unwrap();
    assert!(dd.converged(), "{:?}", dd.history());
    let tsi = ts_solve(&p, 2, &TsConfig { strategy: CoarseStrategy::Iterative, ..cfg }, None).unwrap();
    assert!(tsi.converged(), "{:?}", tsi.history());
}

#[test]
fn patch_solution_reproduces_reference_restriction() {
    let p = bending_problem(2, 2);
    let (r, u) = reference(&p);
    let value = |d: usize| r.index[d].map_or(0.0, |i| u[i]);
    for id in 0..p.cls.patches.len() {
        let ps = p.patch_system(id).unwrap();
        let d: Vec<f64> = ps.dofs.interface.iter().map(|&g| value(g)).collect();
        let sol = ps.solve(&d);
        for (k, &g) in ps.dofs.all.iter().enumerate() {
            if ps.dofs.free.binary_search(&g).is_ok() {
                assert!((sol[k] - value(g)).abs() < 1e-9 * (1.0 + value(g).abs()), "patch {id} dof {g}");
            }
        }
    }
}

#[test]
fn zero_load_is_trivial() {
    let p = bending_problem(2, 1);
    let p = p.with_data(p.material.clone(), p.loads.scaled(0.0)).unwrap();
    let out = ts_solve(&p, 2, &TsConfig::default(), None).unwrap();
    assert_eq!(out.termination, glsolve::twoscale::Termination::Trivial);
    assert!(out.fine.iter().all(|&v| v == 0.0));
}

#[test]
fn warm_restart_after_small_stiffness_change() {
    let p = bending_problem(2, 2);
    let cfg = TsConfig { eps: 1e-8, ..TsConfig::default() };
    let cold = ts_solve(&p, 2, &cfg, None).unwrap();
    let stiffer = p.with_data(glsolve::elasticity::Material::new(101.0, 0.3).unwrap(), p.loads.clone()).unwrap();
    let fresh = ts_solve(&stiffer, 2, &cfg, None).unwrap();
    let warm = glsolve::twoscale::WarmStart { fine: cold.fine.clone(), coarse: Some(cold.coarse.clone()) };
    let restarted = ts_solve(&stiffer, 2, &cfg, Some(&warm)).unwrap();
    assert!(fresh.converged() && restarted.converged());
    println!("fresh {} restarted {}", fresh.iterations(), restarted.iterations());
    assert!(restarted.iterations() < fresh.iterations());
}

#[test]
fn domain_decomposition_needs_two_ranks() {
    let p = bending_problem(2, 1);
    let cfg = TsConfig { strategy: CoarseStrategy::DomainDecomposition, ..TsConfig::default() };
    let err = ts_solve(&p, 1, &cfg, None).unwrap_err();
    assert_eq!(err, glsolve::twoscale::TsError::Dd(glsolve::ddsolver::DdError::SingleDomain));
}

#[test]
fn strategies_reach_the_same_field() {
    let p = bending_problem(2, 2);
    let (r, u) = reference(&p);
    let cfg = TsConfig { eps: 1e-9, max_iterations: 200, ..TsConfig::default() };
    let scale = r.matrix.quad_form(&u).sqrt();
    for (ranks, strategy) in [(2, CoarseStrategy::Iterative), (3, CoarseStrategy::DomainDecomposition)] {
        let out = ts_solve(&p, ranks, &TsConfig { strategy, ..cfg.clone() }, None).unwrap();
        assert!(out.converged());
        if strategy == CoarseStrategy::Iterative {
            assert!(out.records.iter().any(|x| x.coarse == glsolve::twoscale::CoarseKind::Iterative));
        }
        assert!(energy_gap(&r, &out.fine, &u) / scale < 1e-7);
    }
}

