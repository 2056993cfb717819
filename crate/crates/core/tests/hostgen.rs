use std::collections::BTreeMap;

use mkpipe::balance::{LinearEstimator, Profiles};
use mkpipe::fixtures::{self, Bundle};
use mkpipe::flow::Analysis;
use mkpipe::host::{scan_host, HostModel, HostOp, Init};
use mkpipe::hostgen::{part_program, rewrite_host, HostEdits};
use mkpipe::planner::{Decision, PipelinePlan, RemapVariant};
use mkpipe::simcheck::{check_equivalence, KernelSet, Mode, SimOptions};
use mkpipe::split::{partition, PartitionPlan, SplitDecision, SplitProblem};
use mkpipe::transforms::{apply_plan, Transformed};
use mkpipe::Config;

struct Run {
    a: Analysis,
    plan: PipelinePlan,
    t: Transformed,
    host: HostModel,
}

fn run_with(a: Analysis, profile: &str, config: &Config, remap: Option<RemapVariant>) -> Run {
    let profiles = Profiles::from_toml(profile).unwrap();
    let mut plan = a.plan(&profiles, config).unwrap();
    if let Some(v) = remap {
        for e in plan
            .edges
            .iter_mut()
            .filter(|e| e.decision == Decision::GlobalMemCke)
        {
            e.remap = v;
        }
    }
    let t = apply_plan(&a, &plan, config).unwrap();
    let part = PartitionPlan::unsplit(a.dfg.kernels());
    let host = rewrite_host(&a, &plan, &t, &part, None).unwrap().model;
    Run { a, plan, t, host }
}

fn run(b: &Bundle, config: &Config, remap: Option<RemapVariant>) -> Run {
    let a = Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap();
    run_with(a, &b.profile, config, remap)
}

fn equivalent(r: &Run, seeds: u64) {
    for mode in [Mode::Fair, Mode::Adversarial] {
        for seed in 0..seeds {
            let rep = check_equivalence(
                KernelSet {
                    program: &r.a.program,
                    host: &r.a.host,
                },
                KernelSet {
                    program: &r.t.program,
                    host: &r.host,
                },
                &SimOptions::new(mode, seed),
                1e-6,
            )
            .unwrap();
            assert!(rep.equal, "{mode:?} seed {seed}: {:?}", rep.mismatches);
        }
    }
}

fn enqueue_positions(h: &HostModel, kernel: &str) -> Vec<usize> {
    h.ops
        .iter()
        .enumerate()
        .filter(|(_, o)| matches!(o, HostOp::Enqueue(e) if e.kernel == kernel))
        .map(|(i, _)| i)
        .collect()
}

fn queue_of(h: &HostModel, kernel: &str) -> u32 {
    h.ops
        .iter()
        .find_map(|o| match o {
            HostOp::Enqueue(e) if e.kernel == kernel => Some(e.queue),
            _ => None,
        })
        .unwrap()
}

#[test]
fn channel_pair_runs_on_separate_queues() {
    let r = run(&fixtures::cfd(), &Config::default(), None);
    assert_eq!(
        r.plan.edge("compute_flux", "time_step").unwrap().decision,
        Decision::Channel
    );
    assert_ne!(
        queue_of(&r.host, "compute_flux"),
        queue_of(&r.host, "time_step")
    );
    let (p, c) = (
        enqueue_positions(&r.host, "compute_flux")[0],
        enqueue_positions(&r.host, "time_step")[0],
    );
    assert!(r.host.ops[p..c]
        .iter()
        .all(|o| !matches!(o, HostOp::Finish { .. })));
    // The sync after the pair waits on both queues.
    assert!(
        matches!(r.host.ops[c + 1], HostOp::Finish { .. })
            && matches!(r.host.ops[c + 2], HostOp::Finish { .. })
    );
    equivalent(&r, 5);
}

#[test]
fn fusion_leaves_one_enqueue_and_drops_the_buffer() {
    let config = Config {
        fusion_time_threshold_ms: 1.0,
        ..Config::default()
    };
    let r = run(&fixtures::cfd(), &config, None);
    assert!(enqueue_positions(&r.host, "time_step").is_empty());
    assert_eq!(
        enqueue_positions(&r.host, "compute_flux_time_step").len(),
        1
    );
    assert!(r.host.buffer("fluxes_energy").is_none());
    equivalent(&r, 5);
}

#[test]
fn global_memory_pairs_zero_flags_before_the_producer() {
    for v in RemapVariant::ALL {
        let r = run(&fixtures::lud(), &Config::default(), Some(v));
        let flag = &r.t.flags[0].name;
        let p = enqueue_positions(&r.host, "lud_perimeter")[0];
        assert!(
            matches!(&r.host.ops[p - 1], HostOp::Write { buffer, init: Init::Zeros } if buffer == flag)
        );
        let alloc = r
            .host
            .ops
            .iter()
            .position(|o| matches!(o, HostOp::Buffer { name, .. } if name == flag))
            .unwrap();
        assert!(alloc < p);
        for b in &r.t.aux {
            assert!(r.host.buffer(&b.name).is_some(), "{} not allocated", b.name);
        }
        let c = enqueue_positions(&r.host, "lud_internal")[0];
        assert!(r.host.ops[p..c]
            .iter()
            .all(|o| !matches!(o, HostOp::Finish { .. })));
        equivalent(&r, 5);
    }
}

#[test]
fn lud_8x8_grid_stays_equivalent_under_every_remap() {
    for v in RemapVariant::ALL {
        let r = run(&fixtures::lud_grid(8), &Config::default(), Some(v));
        assert_eq!(r.plan.pipelined().count(), 1);
        equivalent(&r, 2);
    }
}

fn scanned_cfd() -> (Analysis, mkpipe::host::ScanInfo) {
    let b = fixtures::cfd();
    let s = scan_host(fixtures::cfd_host_c()).unwrap();
    (
        Analysis::run(b.program().unwrap(), s.model).unwrap(),
        s.info,
    )
}

#[test]
fn unchanged_plan_reproduces_the_source() {
    let (a, info) = scanned_cfd();
    let profiles = Profiles::from_toml(&fixtures::cfd().profile).unwrap();
    let mut plan = a.plan(&profiles, &Config::default()).unwrap();
    for e in &mut plan.edges {
        e.decision = Decision::GlobalSync;
    }
    let t = apply_plan(&a, &plan, &Config::default()).unwrap();
    let part = PartitionPlan::unsplit(a.dfg.kernels());
    let edits = HostEdits::build(&a, &plan, &t, &part).unwrap();
    assert!(edits.is_identity());
    let out = rewrite_host(&a, &plan, &t, &part, Some(&info)).unwrap();
    assert_eq!(out.source.as_deref(), Some(fixtures::cfd_host_c()));
    assert_eq!(out.model, a.host);
}

fn enqueues(h: &HostModel) -> Vec<(String, u32, usize)> {
    h.ops
        .iter()
        .filter_map(|o| match o {
            HostOp::Enqueue(e) => Some((e.kernel.clone(), e.queue, e.args.len())),
            _ => None,
        })
        .collect()
}

#[test]
fn spliced_channel_source_rescans_to_the_rewritten_model() {
    let (a, info) = scanned_cfd();
    let r = run_with(a, &fixtures::cfd().profile, &Config::default(), None);
    let part = PartitionPlan::unsplit(r.a.dfg.kernels());
    let out = rewrite_host(&r.a, &r.plan, &r.t, &part, Some(&info)).unwrap();
    let src = out.source.unwrap();
    assert!(
        src.contains(
            "cl_command_queue queue_mk1 = clCreateCommandQueue(context, device, 0, &err);"
        ),
        "{src}"
    );
    let back = scan_host(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    assert_eq!(enqueues(&back.model), enqueues(&out.model), "{src}");
    let finishes = |h: &HostModel| {
        h.ops
            .iter()
            .filter(|o| matches!(o, HostOp::Finish { .. }))
            .count()
    };
    assert_eq!(finishes(&back.model), finishes(&out.model), "{src}");
}

#[test]
fn spliced_fusion_source_drops_the_consumer() {
    let config = Config {
        fusion_time_threshold_ms: 1.0,
        ..Config::default()
    };
    let (a, info) = scanned_cfd();
    let r = run_with(a, &fixtures::cfd().profile, &config, None);
    let part = PartitionPlan::unsplit(r.a.dfg.kernels());
    let out = rewrite_host(&r.a, &r.plan, &r.t, &part, Some(&info)).unwrap();
    let src = out.source.unwrap();
    assert!(!src.contains("k_time"), "{src}");
    assert!(!src.contains("fluxes_energy"), "{src}");
    assert!(src.contains("\"compute_flux_time_step\""));
    let back = scan_host(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    assert_eq!(enqueues(&back.model), enqueues(&out.model), "{src}");
    assert!(out.note.contains("compute_flux_time_step("));
}

#[test]
fn remap_tables_go_to_the_data_file() {
    let b = fixtures::lud();
    let r = run(&b, &Config::default(), Some(RemapVariant::GroupRemap));
    let part = PartitionPlan::unsplit(r.a.dfg.kernels());
    let out = rewrite_host(&r.a, &r.plan, &r.t, &part, None).unwrap();
    let ints: usize =
        r.t.aux
            .iter()
            .filter_map(|x| match &x.data {
                mkpipe::transforms::AuxData::Table(v) => Some(v.len()),
                _ => None,
            })
            .sum();
    assert_eq!(out.tables.len(), 4 * ints);
    assert!(out.note.contains("table id_queue_lud_internal_bx offset"));
}

#[test]
fn bp_split_reprograms_before_the_weight_update() {
    let b = fixtures::bp();
    let config = Config::default();
    let a = Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap();
    let profiles = Profiles::from_toml(&b.profile).unwrap();
    let plan = a.plan(&profiles, &config).unwrap();
    let problem = SplitProblem::build(
        &a.dfg,
        &a.host,
        &plan,
        &profiles,
        &LinearEstimator,
        &BTreeMap::new(),
    )
    .unwrap();
    let part = partition(&problem, &config).unwrap();
    assert_eq!(part.decision, SplitDecision::Split);
    let t = apply_plan(&a, &plan, &config).unwrap();
    let out = rewrite_host(&a, &plan, &t, &part, None).unwrap();
    let switches: Vec<usize> = out
        .model
        .ops
        .iter()
        .enumerate()
        .filter(|(_, o)| matches!(o, HostOp::Reprogram { .. }))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(switches.len(), 1);
    assert!(
        matches!(&out.model.ops[switches[0] + 1], HostOp::Enqueue(e) if e.kernel == "bp_adjust_weights")
    );
    let edits = HostEdits::build(&a, &plan, &t, &part).unwrap();
    let p2 = part_program(&t.program, &edits, 2);
    assert_eq!(p2.kernels.len(), 1);
    assert_eq!(part_program(&t.program, &edits, 1).kernels.len(), 3);
    let rep = check_equivalence(
        KernelSet {
            program: &a.program,
            host: &a.host,
        },
        KernelSet {
            program: &t.program,
            host: &out.model,
        },
        &SimOptions::default(),
        1e-6,
    )
    .unwrap();
    assert!(rep.equal);
}
