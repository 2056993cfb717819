use std::collections::{BTreeMap, BTreeSet};

use mkpipe::config::Granularity;
use mkpipe::dependence::{analyze_dfg, build_id_queue, Cardinality, DepClass, PairRelation};
use mkpipe::fixtures;
use mkpipe::host::build_dfg;

fn relations(b: &fixtures::Bundle) -> Vec<(String, String, PairRelation)> {
    let prog = b.program().unwrap();
    let host = b.host_model().unwrap();
    let dfg = build_dfg(&host, &prog).unwrap();
    analyze_dfg(&dfg, &prog)
        .unwrap()
        .into_iter()
        .map(|r| (r.relation.producer.clone(), r.relation.consumer.clone(), r))
        .collect()
}

fn find<'a>(rels: &'a [(String, String, PairRelation)], p: &str, c: &str) -> &'a PairRelation {
    &rels.iter().find(|(a, b, _)| a == p && b == c).unwrap().2
}

#[test]
fn cfd_flux_to_time_step_is_one_to_one() {
    let rels = relations(&fixtures::cfd());
    let r = &find(&rels, "compute_flux", "time_step").relation;
    assert_eq!(r.klass, DepClass::FewToFew);
    assert_eq!(r.producers_per_consumer, Cardinality::Constant(1));
    assert_eq!(r.consumers_per_producer, Cardinality::Constant(1));
    assert!(r.hazard.is_none(), "{:?}", r.hazard);
    assert!(!r.conservative);
    for (c, d) in r.deps.iter().enumerate() {
        assert_eq!(d.iter().copied().collect::<Vec<_>>(), vec![c]);
    }
}

#[test]
fn lud_perimeter_to_internal_is_one_to_many() {
    let rels = relations(&fixtures::lud());
    let r = &find(&rels, "lud_perimeter", "lud_internal").relation;
    assert_eq!(r.klass, DepClass::FewToMany);
    assert_eq!(r.producers_per_consumer, Cardinality::Constant(2));
    assert!(r.hazard.is_none(), "{:?}", r.hazard);
}

#[test]
fn bp_layers_are_many_to_many() {
    let rels = relations(&fixtures::bp());
    let r = &find(&rels, "bp_output_error", "bp_hidden_error").relation;
    assert_eq!(r.klass, DepClass::ManyToMany);
}

#[test]
fn hist_bins_are_one_to_one_despite_indirect_hist() {
    let rels = relations(&fixtures::hist());
    let r = &find(&rels, "hist_prep", "hist_accum").relation;
    assert_eq!(r.klass, DepClass::FewToFew);
    assert!(r.hazard.is_none());
}

/// Producer groups each internal group reads from, written out from the LUD index formulas.
fn lud_group_deps(grid: i64) -> Vec<BTreeSet<usize>> {
    let b = 4;
    let md = (grid + 1) * b;
    let mut writer: BTreeMap<i64, usize> = BTreeMap::new();
    for bx in 0..grid {
        for tx in 0..b {
            for i in 0..b {
                writer.insert((bx + 1) * b + tx + i * md, bx as usize);
                writer.insert(((bx + 1) * b + tx) * md + i, bx as usize);
            }
        }
    }
    let mut deps = Vec::new();
    for by in 0..grid {
        for bx in 0..grid {
            let mut d = BTreeSet::new();
            for ty in 0..b {
                for tx in 0..b {
                    for e in [ty * md + (bx + 1) * b + tx, (ty + (by + 1) * b) * md + tx] {
                        if let Some(&w) = writer.get(&e) {
                            d.insert(w);
                        }
                    }
                }
            }
            deps.push(d);
        }
    }
    deps
}

/// Replays producers in order and rescans every pending consumer after each step.
fn replay_oracle(deps: &[BTreeSet<usize>], producers: usize) -> Vec<usize> {
    let mut done = BTreeSet::new();
    let mut queued = vec![false; deps.len()];
    let mut out = Vec::new();
    let mut scan = |done: &BTreeSet<usize>, out: &mut Vec<usize>| {
        for c in 0..deps.len() {
            if !queued[c] && deps[c].is_subset(done) {
                queued[c] = true;
                out.push(c);
            }
        }
    };
    scan(&done, &mut out);
    for p in 0..producers {
        done.insert(p);
        scan(&done, &mut out);
    }
    out
}

#[test]
fn lud_group_queue_matches_replay_oracle() {
    for grid in [4u64, 8] {
        let rels = relations(&fixtures::lud_grid(grid));
        let r = &find(&rels, "lud_perimeter", "lud_internal").relation;
        let q = build_id_queue(r, Granularity::WorkGroup, 1 << 20).unwrap();
        let expected = replay_oracle(&lud_group_deps(grid as i64), grid as usize);
        assert_eq!(q.order, expected, "grid {grid}");
        let t = q.tuples(&r.consumer_space);
        assert_eq!(&t[..4], &[vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}

#[test]
fn identity_relation_gives_identity_queue() {
    let rels = relations(&fixtures::cfd());
    let r = &find(&rels, "compute_flux", "time_step").relation;
    let q = build_id_queue(r, Granularity::WorkItem, 1 << 20).unwrap();
    assert_eq!(q.order, (0..64).collect::<Vec<_>>());
}

#[test]
fn queue_cap_is_enforced() {
    let rels = relations(&fixtures::lud());
    let r = &find(&rels, "lud_perimeter", "lud_internal").relation;
    assert!(build_id_queue(r, Granularity::WorkItem, 8).is_err());
}
