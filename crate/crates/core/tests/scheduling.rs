use std::collections::BTreeMap;

use glsolve::scheduler::{build_schedule, validate, PatchGraph, Schedule, Variant};
use proptest::prelude::*;

/// Random graph: `nd` distributed patches over 2..=4 ranks each, plus local patches.
fn graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize, Vec<usize>)>)> {
    (2usize..7).prop_flat_map(|nranks| {
        let shared = prop::collection::vec((1usize..50, prop::collection::btree_set(0..nranks, 2..=nranks.min(4))), 0..12);
        let local = prop::collection::vec((1usize..50, 0..nranks), 0..10);
        (Just(nranks), shared, local).prop_map(|(nranks, shared, local)| {
            let mut patches = Vec::new();
            for (w, owners) in shared {
                patches.push((patches.len(), w, owners.into_iter().collect()));
            }
            for (w, r) in local {
                patches.push((patches.len(), w, vec![r]));
            }
            (nranks, patches)
        })
    })
}

/// Every patch runs exactly once, all its participants in the same sequence.
fn independent(s: &Schedule, patches: &[(usize, usize, Vec<usize>)]) -> bool {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    for col in &s.matrix {
        let mut here: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (r, &c) in col.iter().enumerate() {
            if c >= 0 {
                here.entry(c as usize).or_default().push(r);
            }
        }
        for (id, ranks) in here {
            if patches[id].2.len() > 1 {
                if ranks != patches[id].2 {
                    return false;
                }
                *seen.entry(id).or_default() += 1;
            }
        }
    }
    patches.iter().filter(|p| p.2.len() > 1).all(|p| seen.get(&p.0) == Some(&1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_are_valid((nranks, patches) in graph_strategy()) {
        let graph = PatchGraph::from_owners(nranks, &patches);
        graph.check().unwrap();
        for variant in [Variant::V0, Variant::V1, Variant::V2] {
            let s = build_schedule(&graph, variant).unwrap();
            prop_assert!(independent(&s, &patches));
            prop_assert!(s.sequences() >= graph.max_distributed());
            prop_assert!(validate(&s, &graph).violations.is_empty());
            prop_assert_eq!(&s, &build_schedule(&graph, variant).unwrap());
        }
    }
}

#[test]
fn disjoint_pairs_share_one_sequence() {
    let patches = vec![(0, 5, vec![0, 1]), (1, 5, vec![2, 3]), (2, 1, vec![0])];
    let graph = PatchGraph::from_owners(4, &patches);
    let s = build_schedule(&graph, Variant::V0).unwrap();
    assert_eq!(s.sequences(), 1);
    assert_eq!(s.matrix[0], vec![0, 0, 1, 1]);
    assert_eq!(s.local_order[0], vec![2]);
}

#[test]
fn weights_steer_the_order() {
    // a light and a heavy patch shared by the same ranks
    let patches = vec![(0, 1, vec![0, 1]), (1, 40, vec![0, 1])];
    let graph = PatchGraph::from_owners(2, &patches);
    let v0 = build_schedule(&graph, Variant::V0).unwrap();
    let v1 = build_schedule(&graph, Variant::V1).unwrap();
    assert_eq!(v0.matrix[0][0], 0);
    assert_eq!(v1.matrix[0][0], 1, "heaviest first");
}
