use std::collections::{BTreeSet, HashMap};

use super::SparseSym;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Var,
    Elem,
    Dead,
}

/// Approximate minimum degree ordering on the quotient graph.
///
/// Variables with identical closed adjacency (the three components of a mesh
/// node, typically) are merged into weighted supervariables first. Ties on
/// degree go to the lowest supervariable index, so the result is deterministic.
/// Returns `perm` with `perm[k]` = original index eliminated at step `k`.
pub fn min_degree_order(a: &SparseSym) -> Vec<usize> {
    let n = a.dim();
    if n == 0 {
        return Vec::new();
    }
    let adj = a.adjacency();

    // supervariable compression
    let mut groups: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut sv_of = vec![0usize; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let mut key = adj[i].clone();
        let pos = key.binary_search(&i).unwrap_or_else(|p| p);
        key.insert(pos, i);
        let next = members.len();
        let s = *groups.entry(key).or_insert(next);
        if s == next {
            members.push(Vec::new());
        }
        members[s].push(i);
        sv_of[i] = s;
    }
    let ns = members.len();
    let weight: Vec<usize> = members.iter().map(|m| m.len()).collect();
    let mut vadj: Vec<Vec<usize>> = vec![Vec::new(); ns];
    for s in 0..ns {
        let rep = members[s][0];
        let mut l: Vec<usize> = adj[rep].iter().map(|&j| sv_of[j]).filter(|&t| t != s).collect();
        l.sort_unstable();
        l.dedup();
        vadj[s] = l;
    }

    let mut status = vec![Status::Var; ns];
    let mut eadj: Vec<Vec<usize>> = vec![Vec::new(); ns];
    let mut elem_vars: Vec<Vec<usize>> = vec![Vec::new(); ns];
    let mut degree: Vec<usize> = (0..ns).map(|s| vadj[s].iter().map(|&t| weight[t]).sum()).collect();
    let mut queue: BTreeSet<(usize, usize)> = (0..ns).map(|s| (degree[s], s)).collect();
    let mut live_weight: usize = n;

    let mut mark = vec![usize::MAX; ns];
    let mut wext = vec![0isize; ns];
    let mut wstamp = vec![usize::MAX; ns];
    let mut order = Vec::with_capacity(n);

    let mut step = 0usize;
    while let Some((_, p)) = queue.pop_first() {
        step += 1;
        // L_p = (A_p ∪ L_e for e ∈ E_p) \ {p}
        mark[p] = step;
        let mut lp: Vec<usize> = Vec::new();
        for &v in &vadj[p] {
            if status[v] == Status::Var && mark[v] != step {
                mark[v] = step;
                lp.push(v);
            }
        }
        let absorbed = std::mem::take(&mut eadj[p]);
        for &e in &absorbed {
            if status[e] != Status::Elem {
                continue;
            }
            for &v in &elem_vars[e] {
                if status[v] == Status::Var && mark[v] != step {
                    mark[v] = step;
                    lp.push(v);
                }
            }
            status[e] = Status::Dead;
            elem_vars[e] = Vec::new();
        }
        lp.sort_unstable();
        status[p] = Status::Elem;
        vadj[p] = Vec::new();
        order.extend_from_slice(&members[p]);
        live_weight -= weight[p];
        let lp_weight: usize = lp.iter().map(|&v| weight[v]).sum();

        for &i in &lp {
            queue.remove(&(degree[i], i));
            vadj[i].retain(|&v| status[v] == Status::Var && mark[v] != step);
            eadj[i].retain(|&e| status[e] == Status::Elem);
            eadj[i].push(p);
        }

        // |L_e \ L_p| for every element touching L_p
        for &i in &lp {
            for &e in &eadj[i] {
                if e == p {
                    continue;
                }
                if wstamp[e] != step {
                    wstamp[e] = step;
                    wext[e] = elem_vars[e]
                        .iter()
                        .filter(|&&v| status[v] == Status::Var)
                        .map(|&v| weight[v] as isize)
                        .sum();
                }
                wext[e] -= weight[i] as isize;
            }
        }

        for &i in &lp {
            let own = weight[i];
            let mut d_ext: usize = vadj[i].iter().map(|&v| weight[v]).sum();
            d_ext += lp_weight - own;
            let mut keep = Vec::with_capacity(eadj[i].len());
            for &e in &eadj[i] {
                if e == p {
                    keep.push(e);
                    continue;
                }
                let w = wext[e].max(0) as usize;
                if w == 0 {
                    // L_e ⊆ L_p: absorbed into p
                    status[e] = Status::Dead;
                    elem_vars[e] = Vec::new();
                } else {
                    d_ext += w;
                    keep.push(e);
                }
            }
            eadj[i] = keep;
            let bound = live_weight - own;
            let d = d_ext.min(bound).min(degree[i] + lp_weight - own);
            degree[i] = d;
            queue.insert((d, i));
        }
        elem_vars[p] = lp;
    }
    debug_assert_eq!(order.len(), n);
    order
}
