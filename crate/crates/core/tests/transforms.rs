use mkpipe::balance::Profiles;
use mkpipe::fixtures::{self, Bundle};
use mkpipe::flow::Analysis;
use mkpipe::frontend::{extract_accesses, parse_program, Expr, KernelProgram, Stmt};
use mkpipe::host::HostModel;
use mkpipe::planner::{Decision, PipelinePlan, RemapVariant};
use mkpipe::transforms::rewrite::body_exprs;
use mkpipe::transforms::{apply_plan, fuse_kernels, to_channels, AuxData, Site, Transformed};
use mkpipe::{Config, Error};

fn analyze(b: &Bundle) -> Analysis {
    Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap()
}

fn planned(b: &Bundle, config: &Config) -> (Analysis, PipelinePlan) {
    let a = analyze(b);
    let profiles = Profiles::from_toml(&b.profile).unwrap();
    let p = a.plan(&profiles, config).unwrap();
    (a, p)
}

fn transform(
    b: &Bundle,
    config: &Config,
    remap: Option<RemapVariant>,
) -> (PipelinePlan, Transformed) {
    let (a, mut p) = planned(b, config);
    if let Some(v) = remap {
        for e in &mut p.edges {
            if e.decision == Decision::GlobalMemCke {
                e.remap = v;
            }
        }
    }
    let t = apply_plan(&a, &p, config).unwrap();
    (p, t)
}

fn calls(body: &[Stmt], name: &str) -> usize {
    let mut n = 0;
    body_exprs(body, &mut |e| {
        if matches!(e, Expr::Call { name: f, .. } if f == name) {
            n += 1;
        }
    });
    n
}

fn reparses(p: &KernelProgram) {
    let text = p.to_string();
    let back = parse_program(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    assert_eq!(&back, p, "{text}");
}

#[test]
fn cfd_fusion_removes_intermediate_buffer() {
    let config = Config {
        fusion_time_threshold_ms: 1.0,
        ..Config::default()
    };
    let (p, t) = transform(&fixtures::cfd(), &config, None);
    assert_eq!(
        p.edge("compute_flux", "time_step").unwrap().decision,
        Decision::Fuse
    );
    let fused = t
        .program
        .kernel("compute_flux_time_step")
        .expect("fused kernel");
    assert!(t.program.kernel("time_step").is_none());
    let acc = extract_accesses(fused);
    assert!(acc.accesses.iter().all(|a| a.buffer != "fluxes_energy"));
    assert!(fused.param("fluxes_energy").is_none());
    assert_eq!(fused.body.len(), 1, "single fused loop");
    let node = t
        .nodes
        .iter()
        .find(|n| n.kernel.as_deref() == Some("compute_flux_time_step"))
        .unwrap();
    assert_eq!(node.args.len(), fused.params.len());
    assert!(t.nodes.iter().any(|n| n.kernel.is_none()));
    reparses(&t.program);
}

#[test]
fn cfd_channel_replaces_buffer_traffic() {
    let (p, t) = transform(&fixtures::cfd(), &Config::default(), None);
    assert_eq!(
        p.edge("compute_flux", "time_step").unwrap().decision,
        Decision::Channel
    );
    assert_eq!(t.channels.len(), 1);
    assert_eq!(t.channels[0].name, "c_fluxes_energy");
    assert_eq!(t.program.channels.len(), 1);
    let prod = t.program.kernel("compute_flux").unwrap();
    let cons = t.program.kernel("time_step").unwrap();
    assert_eq!(calls(&prod.body, "write_channel_intel"), 1);
    assert_eq!(calls(&cons.body, "read_channel_intel"), 1);
    assert!(prod.param("fluxes_energy").is_none());
    assert!(cons.param("fluxes_energy").is_none());
    reparses(&t.program);
}

const REVERSED: &str = r#"
__kernel void produce(__global const float* restrict a, __global float* restrict x, int n) {
    for (int i = 0; i < n; ++i) {
        x[i] = a[i] * 2.0f;
    }
}

__kernel void consume(__global const float* restrict x, __global float* restrict out, int n) {
    for (int j = 0; j < n; ++j) {
        out[j] = x[n - 1 - j] + 1.0f;
    }
}
"#;

const REVERSED_HOST: &str = r#"
[[op]]
op = "buffer"
name = "a"
elem = "float"
len = 16
[[op]]
op = "buffer"
name = "x"
elem = "float"
len = 16
[[op]]
op = "buffer"
name = "out"
elem = "float"
len = 16
[[op]]
op = "write"
buffer = "a"
[[op]]
op = "enqueue"
kernel = "produce"
args = [{ buffer = "a" }, { buffer = "x" }, { int = 16 }]
[[op]]
op = "finish"
[[op]]
op = "enqueue"
kernel = "consume"
args = [{ buffer = "x" }, { buffer = "out" }, { int = 16 }]
[[op]]
op = "finish"
[[op]]
op = "read"
buffer = "out"
"#;

#[test]
fn reversed_order_is_rejected_for_channels() {
    let a = Analysis::run(
        parse_program(REVERSED).unwrap(),
        HostModel::from_toml(REVERSED_HOST).unwrap(),
    )
    .unwrap();
    let r = &a.relations[0];
    let (pn, cn) = (&a.dfg.nodes[r.producer_node], &a.dfg.nodes[r.consumer_node]);
    fn site<'a>(a: &'a Analysis, n: &'a mkpipe::host::DfgNode) -> Site<'a> {
        Site {
            unit: a.program.kernel(&n.kernel).unwrap(),
            args: &n.args,
            launch: &n.launch,
        }
    }
    let err = to_channels(site(&a, pn), site(&a, cn), &r.relation, 0, &[]).unwrap_err();
    assert!(matches!(err, Error::OrderMismatch { .. }), "{err}");
}

#[test]
fn fusing_with_empty_kernel_keeps_body() {
    let prog = parse_program(
        "__kernel void k(__global float* x, int n) { for (int i = 0; i < n; ++i) { x[i] = 1.0f; } }\n\
         __kernel void e(__global float* y) { }",
    )
    .unwrap();
    let (k, e) = (prog.kernel("k").unwrap(), prog.kernel("e").unwrap());
    let launch = mkpipe::host::Launch::Task;
    let ka = [
        mkpipe::host::Arg::Buffer("x".into()),
        mkpipe::host::Arg::Int(8),
    ];
    let ea = [mkpipe::host::Arg::Buffer("y".into())];
    let out = fuse_kernels(
        Site {
            unit: k,
            args: &ka,
            launch: &launch,
        },
        Site {
            unit: e,
            args: &ea,
            launch: &launch,
        },
        &[],
    )
    .unwrap();
    assert_eq!(out.unit.body, k.body);
}

#[test]
fn lud_waits_guard_shared_loads() {
    let (_, t) = transform(
        &fixtures::lud(),
        &Config::default(),
        Some(RemapVariant::NoRemap),
    );
    let prod = t.program.kernel("lud_perimeter").unwrap();
    let cons = t.program.kernel("lud_internal").unwrap();
    assert_eq!(calls(&prod.body, "mem_fence"), 1);
    assert!(prod.param("flag").is_some() && cons.param("flag").is_some());
    let waits = cons
        .body
        .iter()
        .filter(|s| matches!(s, Stmt::While { body, .. } if body.is_empty()))
        .count();
    assert!(waits >= 2, "{cons}");
    assert_eq!(t.flags.len(), 1);
    // One flag per producer work-item: 4 groups of 4 items.
    assert_eq!(t.flags[0].len, 16);
    let flag = t.aux.iter().find(|b| b.name == t.flags[0].name).unwrap();
    assert_eq!(flag.data, AuxData::Zeros(16));
    assert!(t.aux.iter().any(|b| matches!(b.data, AuxData::Table(_))));
    reparses(&t.program);
}

#[test]
fn lud_group_remap_reads_ids_from_queue() {
    let (_, t) = transform(
        &fixtures::lud(),
        &Config::default(),
        Some(RemapVariant::GroupRemap),
    );
    let cons = t.program.kernel("lud_internal").unwrap();
    for p in ["id_queue_bx", "id_queue_by"] {
        assert!(cons.param(p).is_some(), "missing {p}");
    }
    assert!(cons.param("id_queue_tx").is_none());
    let bx = t
        .aux
        .iter()
        .find(|b| b.name == "id_queue_lud_internal_bx")
        .unwrap();
    let AuxData::Table(v) = &bx.data else {
        panic!()
    };
    let mut sorted = v.clone();
    sorted.sort();
    assert_eq!(sorted.len(), 16);
    reparses(&t.program);

    let (_, t) = transform(
        &fixtures::lud(),
        &Config::default(),
        Some(RemapVariant::GroupAndItemRemap),
    );
    let cons = t.program.kernel("lud_internal").unwrap();
    assert!(cons.param("id_queue_tx").is_some() && cons.param("id_queue_ty").is_some());
}

#[test]
fn hist_fusion_keeps_signature_consistent() {
    let (p, t) = transform(&fixtures::hist(), &Config::default(), None);
    assert_eq!(
        p.edge("hist_prep", "hist_accum").unwrap().decision,
        Decision::Fuse
    );
    let fused = t.program.kernel("hist_prep_hist_accum").unwrap();
    assert!(fused.param("bins").is_none());
    reparses(&t.program);
}
