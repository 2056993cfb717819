use mkpipe::fixtures;
use mkpipe::frontend::parse_program;
use mkpipe::host::*;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn dfg_of(b: &fixtures::Bundle) -> KernelDfg {
    build_dfg(&b.host_model().unwrap(), &b.program().unwrap()).unwrap()
}

fn pairs(dfg: &KernelDfg) -> BTreeSet<(String, String, EdgeKind)> {
    dfg.edges
        .iter()
        .map(|e| {
            (
                dfg.nodes[e.producer].kernel.clone(),
                dfg.nodes[e.consumer].kernel.clone(),
                e.kind,
            )
        })
        .collect()
}

fn has(dfg: &KernelDfg, p: &str, c: &str, kind: EdgeKind) -> bool {
    pairs(dfg).contains(&(p.into(), c.into(), kind))
}

#[test]
fn cfd_has_forward_chain_and_loop_carried_back_edge() {
    let dfg = dfg_of(&fixtures::cfd());
    assert_eq!(dfg.nodes.len(), 3);
    assert!(has(
        &dfg,
        "compute_step_factor",
        "compute_flux",
        EdgeKind::Forward
    ));
    assert!(has(&dfg, "compute_flux", "time_step", EdgeKind::Forward));
    assert!(has(&dfg, "time_step", "compute_flux", EdgeKind::Back));
    let inner = dfg.loop_region("inner").unwrap();
    let names: BTreeSet<_> = inner
        .nodes
        .iter()
        .map(|&n| dfg.nodes[n].kernel.as_str())
        .collect();
    assert_eq!(names, BTreeSet::from(["compute_flux", "time_step"]));
    assert_eq!(inner.parent.as_deref(), Some("outer"));
}

#[test]
fn lud_and_bp_shapes() {
    let lud = dfg_of(&fixtures::lud());
    assert!(lud.edges.iter().any(|e| e.buffer == "m"
        && lud.nodes[e.producer].kernel == "lud_perimeter"
        && lud.nodes[e.consumer].kernel == "lud_internal"));
    let bp = dfg_of(&fixtures::bp());
    assert_eq!(bp.kernels().len(), 4);
}

#[test]
fn single_enqueue_has_no_edges() {
    let p = parse_program("__kernel void s(__global float* x) { x[get_global_id(0)] = 1.0f; }")
        .unwrap();
    let h = HostModel::from_toml(
        r#"
[[op]]
op = "buffer"
name = "x"
elem = "float"
len = 4
[[op]]
op = "enqueue"
kernel = "s"
global = [4]
args = [{ buffer = "x" }]
"#,
    )
    .unwrap();
    let dfg = build_dfg(&h, &p).unwrap();
    assert_eq!(dfg.nodes.len(), 1);
    assert!(dfg.edges.is_empty());
}

#[test]
fn every_edge_is_a_real_write_then_read() {
    for b in fixtures::all() {
        let dfg = dfg_of(&b);
        for e in &dfg.edges {
            let (p, c) = (&dfg.nodes[e.producer], &dfg.nodes[e.consumer]);
            assert!(p.writes.contains(&e.buffer), "{} {}", b.name, e.buffer);
            assert!(c.reads.contains(&e.buffer), "{} {}", b.name, e.buffer);
            match e.kind {
                EdgeKind::Forward => assert!(p.op_index < c.op_index),
                EdgeKind::Back => assert!(p.op_index >= c.op_index),
            }
        }
    }
}

#[test]
fn host_rewrite_between_kernels_excludes_the_consumer() {
    let b = fixtures::cfd();
    let mut h = b.host_model().unwrap();
    let k1 = h
        .ops
        .iter()
        .position(|op| matches!(op, HostOp::Enqueue(e) if e.kernel == "compute_step_factor"))
        .unwrap();
    h.ops.insert(
        k1 + 1,
        HostOp::Read {
            buffer: "step_factors".into(),
            into: Some("h_sf".into()),
        },
    );
    h.ops.insert(
        k1 + 2,
        HostOp::Write {
            buffer: "step_factors".into(),
            init: Default::default(),
        },
    );
    let p = b.program().unwrap();
    let dfg = build_dfg(&h, &p).unwrap();
    let out = exclude_cpu_dependent(&dfg, &h);
    assert!(out
        .cpu_excluded
        .contains(&dfg.node_by_kernel("compute_flux").unwrap().id));
    let clean = exclude_cpu_dependent(&dfg_of(&b), &b.host_model().unwrap());
    assert!(clean.cpu_excluded.is_empty());
}

#[test]
fn scanned_c_host_matches_the_manifest() {
    let b = fixtures::cfd();
    let scanned = scan_host(fixtures::cfd_host_c()).unwrap();
    let p = b.program().unwrap();
    let from_c = build_dfg(&scanned.model, &p).unwrap();
    assert_eq!(pairs(&from_c), pairs(&dfg_of(&b)));
    assert_eq!(from_c.kernels(), dfg_of(&b).kernels());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn finish_calls_never_remove_edges(fixture in 0usize..4, at in prop::collection::vec(0usize..1000, 0..6)) {
        let b = fixtures::all().swap_remove(fixture);
        let p = b.program().unwrap();
        let base_host = b.host_model().unwrap();
        let mut h = base_host.clone();
        for a in at {
            let i = a % (h.ops.len() + 1);
            h.ops.insert(i, HostOp::Finish { queue: 0 });
        }
        let before = build_dfg(&base_host, &p).unwrap();
        let after = build_dfg(&h, &p).unwrap();
        let key = |d: &KernelDfg| d.edges.iter().map(|e| (e.producer, e.consumer, e.buffer.clone(), e.kind)).collect::<Vec<_>>();
        prop_assert_eq!(key(&before), key(&after));
        for (x, y) in before.edges.iter().zip(&after.edges) {
            prop_assert!(!x.synced || y.synced);
        }
    }
}
