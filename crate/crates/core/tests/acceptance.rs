//! Acceptance criteria, one test each. Every test writes a single PASS/FAIL
//! line to stderr (bypassing the harness capture) and fails on FAIL.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use mkpipe::balance::*;
use mkpipe::config::Granularity;
use mkpipe::dependence::{analyze_dfg, build_id_queue, readiness_order, unit_deps, DepClass};
use mkpipe::fixtures::{self, Bundle};
use mkpipe::flow::{balance_inputs, balance_kernels, Analysis};
use mkpipe::frontend::parse_program;
use mkpipe::host::{build_dfg, HostModel};
use mkpipe::hostgen::rewrite_host;
use mkpipe::planner::{Decision, PipelinePlan, RemapVariant};
use mkpipe::simcheck::{check_equivalence, strip_fences, KernelSet, Mode, SimOptions};
use mkpipe::split::*;
use mkpipe::transforms::{apply_plan, Transformed};
use mkpipe::Config;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestRng, TestRunner};

type Verdict = Result<String, String>;

fn criterion(id: u32, title: &str, limit: Option<Duration>, body: impl FnOnce() -> Verdict) {
    let start = Instant::now();
    let mut verdict = body();
    let elapsed = start.elapsed();
    if let (Ok(_), Some(l)) = (&verdict, limit) {
        if elapsed > l {
            verdict = Err(format!(
                "took {:.2}s, limit {:.0}s",
                elapsed.as_secs_f64(),
                l.as_secs_f64()
            ));
        }
    }
    let (tag, detail) = match &verdict {
        Ok(d) => ("PASS", d.clone()),
        Err(e) => ("FAIL", e.clone()),
    };
    let line = format!(
        "[{tag}] criterion {id:>2}: {title} ({:.2}s) {detail}\n",
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(e) = verdict {
        panic!("criterion {id} failed: {e}");
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        RunnerConfig {
            cases,
            failure_persistence: None,
            ..RunnerConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn analysis(b: &Bundle) -> Analysis {
    Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Dependence classes on the streaming and the one-to-many miniature.

#[test]
fn c01_dependence_classes_of_miniatures() {
    for (name, b, p, c, want) in [
        (
            "cfd",
            fixtures::cfd(),
            "compute_flux",
            "time_step",
            DepClass::FewToFew,
        ),
        (
            "lud",
            fixtures::lud(),
            "lud_perimeter",
            "lud_internal",
            DepClass::FewToMany,
        ),
    ] {
        criterion(
            1,
            &format!("dependence class on {name} miniature"),
            Some(Duration::from_secs(1)),
            || {
                let a = analysis(&b);
                let r = a
                    .relations
                    .iter()
                    .find(|r| r.relation.producer == p && r.relation.consumer == c)
                    .ok_or("relation missing")?;
                ensure!(
                    r.relation.klass == want,
                    "{p}->{c} is {:?}, want {want:?}",
                    r.relation.klass
                );
                Ok(format!("{p}->{c} = {want:?}"))
            },
        );
    }
}

// ---------------------------------------------------------------------------
// 2. Id queues against a replay oracle and on random affine relations.

/// Queue order from replaying producers one at a time and rescanning every consumer.
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

/// Perimeter groups each internal group reads from, from the LUD index formulas.
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

/// A producer writing `a[pc*i + p0]` and a consumer reading two affine elements.
#[derive(Debug, Clone)]
struct Affine {
    n: u64,
    local: u64,
    write: (i64, i64),
    reads: [(i64, i64); 2],
}

impl Affine {
    fn len(&self) -> i64 {
        let top = |(c, o): (i64, i64)| c * (self.n as i64 - 1) + o;
        top(self.write)
            .max(top(self.reads[0]))
            .max(top(self.reads[1]))
            + 1
    }

    fn sources(&self) -> (String, String) {
        let (w, r) = (self.write, self.reads);
        let k = format!(
            "__kernel void prod(__global int* a) {{ int i = get_global_id(0); a[{}*i + {}] = i + 1; }}\n\
             __kernel void cons(__global const int* a, __global int* b) {{ int j = get_global_id(0); \
             b[j] = a[{}*j + {}] + a[{}*j + {}]; }}\n",
            w.0, w.1, r[0].0, r[0].1, r[1].0, r[1].1
        );
        let h = format!(
            "[[op]]\nop = \"buffer\"\nname = \"a\"\nelem = \"int\"\nlen = {len}\n\
             [[op]]\nop = \"buffer\"\nname = \"b\"\nelem = \"int\"\nlen = {n}\n\
             [[op]]\nop = \"write\"\nbuffer = \"a\"\n\
             [[op]]\nop = \"enqueue\"\nkernel = \"prod\"\nglobal = [{n}]\nlocal = [{l}]\nargs = [{{ buffer = \"a\" }}]\n\
             [[op]]\nop = \"enqueue\"\nkernel = \"cons\"\nglobal = [{n}]\nlocal = [{l}]\nargs = [{{ buffer = \"a\" }}, {{ buffer = \"b\" }}]\n\
             [[op]]\nop = \"read\"\nbuffer = \"b\"\n",
            len = self.len(),
            n = self.n,
            l = self.local
        );
        (k, h)
    }

    /// Producer items each consumer item reads from, by direct evaluation.
    fn item_deps(&self) -> Vec<BTreeSet<usize>> {
        let writer: BTreeMap<i64, usize> = (0..self.n as i64)
            .map(|i| (self.write.0 * i + self.write.1, i as usize))
            .collect();
        (0..self.n as i64)
            .map(|j| {
                self.reads
                    .iter()
                    .filter_map(|&(c, o)| writer.get(&(c * j + o)).copied())
                    .collect()
            })
            .collect()
    }

    fn group_deps(&self) -> Vec<BTreeSet<usize>> {
        let l = self.local as usize;
        let mut out = vec![BTreeSet::new(); self.n as usize / l];
        for (j, d) in self.item_deps().into_iter().enumerate() {
            out[j / l].extend(d.into_iter().map(|p| p / l));
        }
        out
    }
}

fn affine() -> impl Strategy<Value = Affine> {
    (
        prop::sample::select(vec![8u64, 16, 32]),
        prop::sample::select(vec![1u64, 2, 4]),
        (1i64..4, 0i64..5),
        [(0i64..4, 0i64..9), (0i64..4, 0i64..9)],
    )
        .prop_map(|(n, local, write, reads)| Affine {
            n,
            local,
            write,
            reads,
        })
}

/// Permutation of all units, with readiness never decreasing along the queue.
fn respects(order: &[usize], deps: &[BTreeSet<usize>]) -> Result<(), String> {
    let mut seen = order.to_vec();
    seen.sort_unstable();
    ensure!(
        seen == (0..deps.len()).collect::<Vec<_>>(),
        "not a permutation: {order:?}"
    );
    let ready = |u: usize| deps[u].iter().max().map_or(0, |m| m + 1);
    for w in order.windows(2) {
        ensure!(
            ready(w[0]) <= ready(w[1]),
            "unit {} queued before earlier-ready {}",
            w[0],
            w[1]
        );
    }
    Ok(())
}

#[test]
fn c02_id_queues_follow_dependence_resolution() {
    criterion(
        2,
        "id queues match replay oracle; random affine invariants",
        secs(10),
        || {
            for grid in [4u64, 8] {
                let b = fixtures::lud_grid(grid);
                let a = analysis(&b);
                let r = &a
                    .relations
                    .iter()
                    .find(|r| r.relation.producer == "lud_perimeter")
                    .ok_or("lud relation missing")?
                    .relation;
                let q = build_id_queue(r, Granularity::WorkGroup, 1 << 20)
                    .map_err(|e| e.to_string())?;
                let deps = lud_group_deps(grid as i64);
                ensure!(
                    q.order == replay_oracle(&deps, grid as usize),
                    "lud {grid}x{grid} queue differs from oracle"
                );
                respects(&q.order, &deps)?;
            }
            let built = std::cell::Cell::new(0usize);
            runner(200)
                .run(&affine(), |x| {
                    let (k, h) = x.sources();
                    let prog = parse_program(&k).unwrap();
                    let host = HostModel::from_toml(&h).unwrap();
                    let dfg = build_dfg(&host, &prog).unwrap();
                    let rels = analyze_dfg(&dfg, &prog).unwrap();
                    let deps = x.item_deps();
                    let Some(rel) = rels
                        .iter()
                        .find(|r| r.relation.producer == "prod")
                        .map(|r| &r.relation)
                    else {
                        prop_assert!(
                            deps.iter().all(|d| d.is_empty()),
                            "relation missing for {:?}",
                            x
                        );
                        return Ok(());
                    };
                    prop_assert_eq!(&rel.deps, &deps);
                    for (g, want) in [
                        (Granularity::WorkItem, deps.clone()),
                        (Granularity::WorkGroup, x.group_deps()),
                    ] {
                        let units = unit_deps(rel, g);
                        prop_assert_eq!(&units, &want);
                        let order = readiness_order(&units);
                        let producers = match g {
                            Granularity::WorkItem => x.n as usize,
                            Granularity::WorkGroup => (x.n / x.local) as usize,
                        };
                        prop_assert_eq!(&order, &replay_oracle(&want, producers));
                        if let Err(e) = respects(&order, &want) {
                            return Err(TestCaseError::fail(e));
                        }
                        if let Ok(q) = build_id_queue(rel, g, 1 << 20) {
                            prop_assert_eq!(&q.order, &order);
                            built.set(built.get() + 1);
                        }
                    }
                    Ok(())
                })
                .map_err(|e| e.to_string())?;
            Ok(format!(
                "4x4 and 8x8 exact; 200 random relations ({} queues built)",
                built.get()
            ))
        },
    );
}

// ---------------------------------------------------------------------------
// 3. Greedy balancing against straight-line references, step by step.

#[derive(Debug, Clone)]
struct Kernel {
    time: f64,
    out: u64,
    base: [f64; 4],
    delta: [f64; 4],
    bw: f64,
    max_unroll: u32,
    vec: bool,
}

fn kernel() -> impl Strategy<Value = Kernel> {
    (
        1.0f64..1000.0,
        1u64..5000,
        [1.0f64..20.0, 1.0f64..20.0, 1.0f64..20.0, 1.0f64..20.0],
        [0.1f64..15.0, 0.1f64..15.0, 0.1f64..15.0, 0.1f64..15.0],
        0.0f64..0.2,
        prop::sample::select(vec![1u32, 2, 4, 8, 16]),
        any::<bool>(),
    )
        .prop_map(|(time, out, base, delta, bw, max_unroll, vec)| Kernel {
            time,
            out,
            base,
            delta,
            bw,
            max_unroll,
            vec,
        })
}

fn record(i: usize, k: &Kernel) -> ProfileRecord {
    let s = |v: [f64; 4]| StaticResources {
        alut: v[0],
        ff: v[1],
        ram: v[2],
        dsp: v[3],
    };
    ProfileRecord {
        kernel: format!("k{i}"),
        exec_time_ms: k.time,
        output_bytes: k.out,
        bw_frac: k.bw,
        vec: k.vec,
        max_unroll: k.max_unroll,
        base: s(k.base),
        delta: s(k.delta),
    }
}

/// Ladder step: +1 up to the unroll limit, then doubling with SIMD or whole replicas.
fn grow(n: u32, k: &Kernel) -> u32 {
    if n < k.max_unroll {
        n + 1
    } else if k.vec {
        2 * n
    } else {
        n + k.max_unroll
    }
}

/// Utilization fractions (ALUT, FF, RAM, DSP, bandwidth) of one kernel.
fn usage(k: &Kernel, n: u32) -> [f64; 5] {
    let s = (n - 1) as f64;
    let mut u = [0.0; 5];
    for r in 0..4 {
        u[r] = k.base[r] + s * k.delta[r];
    }
    u[4] = (n as f64 * k.bw).min(1.0);
    u
}

fn total(ks: &[Kernel], n: &[u32]) -> [f64; 5] {
    let mut t = [0.0; 5];
    for (k, &f) in ks.iter().zip(n) {
        let u = usage(k, f);
        for r in 0..5 {
            t[r] += u[r];
        }
    }
    t
}

fn frac(u: &[f64; 5], r: usize) -> f64 {
    if r < 4 {
        u[r] / 100.0
    } else {
        u[r]
    }
}

fn within(t: &[f64; 5], budget: f64) -> bool {
    (0..5).all(|r| {
        frac(t, r)
            <= if r < 4 {
                100.0 * budget / 100.0
            } else {
                budget
            } + 1e-9
    })
}

type Trace = Vec<(usize, u32, u32, bool)>;

/// Shared loop: grow the picked kernel until the budget would be exceeded.
fn reference(ks: &[Kernel], budget: f64, pick: impl Fn(&[u32]) -> usize) -> (Vec<u32>, Trace) {
    let mut n = vec![1u32; ks.len()];
    let mut trace = Vec::new();
    if !within(&total(ks, &n), budget) {
        return (n, trace);
    }
    loop {
        let j = pick(&n);
        let from = n[j];
        n[j] = grow(from, &ks[j]);
        if !within(&total(ks, &n), budget) || n[j] > MAX_FACTOR {
            trace.push((j, from, n[j], false));
            n[j] = from;
            return (n, trace);
        }
        trace.push((j, from, n[j], true));
    }
}

fn reference_throughput(ks: &[Kernel], budget: f64) -> (Vec<u32>, Trace) {
    reference(ks, budget, |n| {
        let tp = |i: usize| n[i] as f64 * (ks[i].out as f64 / ks[i].time);
        (1..ks.len()).fold(0, |j, i| if tp(i) < tp(j) { i } else { j })
    })
}

fn reference_resource(ks: &[Kernel], budget: f64) -> (Vec<u32>, Trace) {
    reference(ks, budget, |n| {
        let t = total(ks, n);
        let crit = (1..5).fold(0, |c, r| if frac(&t, r) > frac(&t, c) { r } else { c });
        let mut best = (0, f64::NEG_INFINITY);
        for (i, k) in ks.iter().enumerate() {
            let f = n[i] as f64;
            let gain = k.time / (f * (f + 1.0));
            let du = frac(&usage(k, grow(n[i], k)), crit) - frac(&usage(k, n[i]), crit);
            let score = if du > 0.0 { gain / du } else { f64::INFINITY };
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    })
}

fn trace_of(a: &FactorAssignment) -> Trace {
    a.trace
        .iter()
        .map(|s| (s.kernel, s.from, s.to, s.accepted))
        .collect()
}

#[test]
fn c03_balancing_matches_reference_traces() {
    criterion(
        3,
        "throughput and resource balancing equal reference traces",
        secs(30),
        || {
            let inst = (prop::collection::vec(kernel(), 1..=6), 0.3f64..1.0);
            let steps = [std::cell::Cell::new(0usize), std::cell::Cell::new(0)];
            for (which, f) in [
                (
                    0usize,
                    throughput_balance
                        as fn(&[ProfileRecord], &dyn Estimator, &ResourceVector) -> _,
                ),
                (1, resource_balance),
            ] {
                runner(1000)
                    .run(&inst, |(ks, budget)| {
                        let recs: Vec<_> =
                            ks.iter().enumerate().map(|(i, k)| record(i, k)).collect();
                        let a =
                            f(&recs, &LinearEstimator, &ResourceVector::budget(budget)).unwrap();
                        let (n, trace) = if which == 0 {
                            reference_throughput(&ks, budget)
                        } else {
                            reference_resource(&ks, budget)
                        };
                        prop_assert_eq!(a.factors(), n);
                        prop_assert_eq!(trace_of(&a), trace.clone());
                        steps[which].set(steps[which].get() + trace.len());
                        Ok(())
                    })
                    .map_err(|e| format!("{}: {e}", ["throughput", "resource"][which]))?;
            }
            Ok(format!(
                "2x1000 instances, {} + {} steps compared",
                steps[0].get(),
                steps[1].get()
            ))
        },
    );
}

// ---------------------------------------------------------------------------
// 4. Factor decomposition branch table.

#[test]
fn c04_decomposition_branch_table() {
    criterion(
        4,
        "decomposition follows the branch table on the full grid",
        None,
        || {
            let mut checked = 0;
            for mu in [1u32, 2, 4, 8, 16] {
                for vec in [false, true] {
                    // Reachable factors: walk the growth ladder from 1.
                    let mut ladder = BTreeSet::new();
                    let mut n = 1;
                    while n <= 64 {
                        ladder.insert(n);
                        n = if n < mu {
                            n + 1
                        } else if vec {
                            n * 2
                        } else {
                            n + mu
                        };
                    }
                    for n in 1..=64u32 {
                        ensure!(
                            is_reachable(n, mu, vec) == ladder.contains(&n),
                            "reachability of {n} (mu {mu}, vec {vec})"
                        );
                        if !ladder.contains(&n) {
                            continue;
                        }
                        let want = if n < mu {
                            (n, 1, 1)
                        } else if vec {
                            (mu, n / mu, 1)
                        } else {
                            (mu, 1, n / mu)
                        };
                        let d = decompose_factor(n, mu, vec).map_err(|e| e.to_string())?;
                        ensure!(
                            (d.unroll, d.simd, d.cu) == want,
                            "N={n} mu={mu} vec={vec}: {d:?} != {want:?}"
                        );
                        ensure!(
                            d.simd.is_power_of_two(),
                            "SIMD {} not a power of two",
                            d.simd
                        );
                        checked += 1;
                    }
                }
            }
            Ok(format!("{checked} reachable grid points"))
        },
    );
}

// ---------------------------------------------------------------------------
// 5. ERU of the measured base designs.

#[test]
fn c05_eru_of_base_designs() {
    criterion(5, "ERU of measured base designs", None, || {
        let mut got = Vec::new();
        for (name, v, want, crit) in [
            ("cfd_si", [49.0, 25.0, 54.0, 63.0], 63, Resource::Dsp),
            ("lud", [60.0, 25.0, 72.0, 74.0], 74, Resource::Dsp),
            ("hist_si", [18.0, 15.0, 57.0, 1.0], 57, Resource::Ram),
        ] {
            let r = ResourceVector::new(v[0], v[1], v[2], v[3], 0.0);
            let e = compute_eru(&r);
            ensure!(
                (e * 100.0).round() as i64 == want,
                "{name}: {e:.4} != 0.{want}"
            );
            ensure!(
                r.critical() == crit,
                "{name}: critical {:?} != {crit:?}",
                r.critical()
            );
            got.push(format!("{name}={e:.2}"));
        }
        Ok(got.join(" "))
    });
}

// ---------------------------------------------------------------------------
// 6. Split-or-co-reside decision.

#[test]
fn c06_split_decision() {
    criterion(
        6,
        "split decision arithmetic and weight-update isolation",
        None,
        || {
            let tuple = (
                1.0f64..1e5,
                1.0f64..1e5,
                0.0f64..1.0,
                0.0f64..1.0,
                0.0f64..5000.0,
                0.0f64..500.0,
            );
            runner(1000)
                .run(&tuple, |(t1, t2, e1, e2, tr, td)| {
                    let p = PartitionPlan {
                        part1: vec![],
                        part2: vec![],
                        t1,
                        t2,
                        eru1: e1,
                        eru2: e2,
                        reprogram_ms: tr,
                        transfer_ms: td,
                        transfers: vec![],
                        decision: SplitDecision::CoReside,
                        objective: 0.0,
                    };
                    let split = t1 + t2 >= t1 * e1 + t2 * e2 + tr + td;
                    prop_assert_eq!(coresidence_decision(&p) == SplitDecision::Split, split);
                    Ok(())
                })
                .map_err(|e| e.to_string())?;
            let b = fixtures::bp();
            let config = Config::default();
            let a = analysis(&b);
            let profiles = Profiles::from_toml(&b.profile).unwrap();
            let plan = a.plan(&profiles, &config).map_err(|e| e.to_string())?;
            let p = SplitProblem::build(
                &a.dfg,
                &a.host,
                &plan,
                &profiles,
                &LinearEstimator,
                &BTreeMap::new(),
            )
            .map_err(|e| e.to_string())?;
            let total: f64 = p.kernels.iter().map(|k| k.time_ms).sum();
            let last = p
                .kernels
                .iter()
                .find(|k| k.name == "bp_adjust_weights")
                .ok_or("no weight update")?;
            ensure!(
                (last.time_ms / total - 0.76).abs() < 1e-9,
                "weight update share {:.3}",
                last.time_ms / total
            );
            let chosen = partition(&p, &config).map_err(|e| e.to_string())?;
            let whole = PartitionPlan::coresident(&p, &config);
            ensure!(
                chosen.decision == SplitDecision::Split,
                "decision {:?}",
                chosen.decision
            );
            ensure!(
                chosen.part2 == ["bp_adjust_weights"],
                "part2 {:?}",
                chosen.part2
            );
            Ok(format!(
                "1000 tuples; bp co-resident ERU {:.2} -> Split with bp_adjust_weights alone",
                whole.eru1
            ))
        },
    );
}

// ---------------------------------------------------------------------------
// 7. Partition choice against exhaustive search.

/// Brute force over every subset with the criteria restated on bit masks.
fn split_oracle(p: &SplitProblem, config: &Config) -> (usize, Option<f64>) {
    let n = p.kernels.len();
    let idx: BTreeMap<&str, usize> = p
        .kernels
        .iter()
        .enumerate()
        .map(|(i, k)| (k.name.as_str(), i))
        .collect();
    let mask_of = |s: &BTreeSet<String>| s.iter().fold(0u32, |m, k| m | 1 << idx[k.as_str()]);
    let full = (1u32 << n) - 1;
    let (mut count, mut best) = (0, None::<f64>);
    for s in 1..full {
        let cut = |m: u32| m & s != 0 && m & !s & full != 0;
        if p.pipelines.iter().any(|g| cut(mask_of(g))) {
            continue;
        }
        let limit = config.loop_split_ratio * config.reprogram_ms;
        if p.loops
            .iter()
            .any(|l| cut(mask_of(&l.kernels)) && l.per_iteration_ms <= limit)
        {
            continue;
        }
        count += 1;
        let side = |m: u32| {
            let (mut t, mut r) = (0.0, [0.0f64; 5]);
            for (i, k) in p.kernels.iter().enumerate() {
                if m >> i & 1 == 1 {
                    t += k.time_ms;
                    let v = k.resources;
                    for (j, x) in [
                        v.alut / 100.0,
                        v.ff / 100.0,
                        v.ram / 100.0,
                        v.dsp / 100.0,
                        v.bw,
                    ]
                    .iter()
                    .enumerate()
                    {
                        r[j] += x;
                    }
                }
            }
            t * r.iter().cloned().fold(0.0, f64::max)
        };
        let obj = (side(s) - side(!s & full)).abs();
        best = Some(best.map_or(obj, |b| b.min(obj)));
    }
    (count / 2, best)
}

fn split_instance() -> impl Strategy<Value = SplitProblem> {
    (2usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec((1.0f64..10_000.0, 1.0f64..40.0, 0.0f64..0.3), n),
            prop::collection::vec(
                (prop::collection::btree_set(0..n, 2..=n), 0.0f64..30_000.0),
                0..3,
            ),
            prop::collection::vec(prop::collection::btree_set(0..n, 2..=n.min(3)), 0..2),
        )
            .prop_map(move |(ks, loops, pipes)| {
                let name = |i: usize| format!("k{i}");
                SplitProblem {
                    kernels: ks
                        .iter()
                        .enumerate()
                        .map(|(i, &(t, r, bw))| SplitKernel {
                            name: name(i),
                            time_ms: t,
                            resources: ResourceVector::new(r, r * 0.7, r * 1.1, r * 0.5, bw),
                        })
                        .collect(),
                    loops: loops
                        .into_iter()
                        .enumerate()
                        .map(|(j, (s, per))| LoopSpan {
                            id: format!("l{j}"),
                            kernels: s.into_iter().map(name).collect(),
                            per_iteration_ms: per,
                        })
                        .collect(),
                    pipelines: pipes
                        .into_iter()
                        .map(|s| s.into_iter().map(name).collect())
                        .collect(),
                    buffers: vec![],
                }
            })
    })
}

#[test]
fn c07_partition_choice_is_optimal() {
    criterion(
        7,
        "partition choice equals exhaustive optimum",
        None,
        || {
            let config = Config::default();
            let with_candidates = std::cell::Cell::new(0);
            runner(500)
                .run(&split_instance(), |p| {
                    let cands = enumerate_bipartitions(&p, &config).unwrap();
                    let (count, best) = split_oracle(&p, &config);
                    prop_assert_eq!(cands.len(), count);
                    let chosen = choose_partition(&cands, &p, &config);
                    match best {
                        None => prop_assert!(chosen.part2.is_empty()),
                        Some(b) => {
                            with_candidates.set(with_candidates.get() + 1);
                            prop_assert!((chosen.objective - b).abs() <= 1e-9 * b.max(1.0));
                            let part1: BTreeSet<String> = chosen.part1.iter().cloned().collect();
                            prop_assert!(is_valid_partition(&p, &part1, &config));
                        }
                    }
                    Ok(())
                })
                .map_err(|e| e.to_string())?;
            Ok(format!(
                "500 instances ({} with a valid split)",
                with_candidates.get()
            ))
        },
    );
}

// ---------------------------------------------------------------------------
// 8 and 9. Simulated equivalence of the transforms.

/// Plan for `b` with edge `p -> c` forced to `decision` and `remap`.
fn forced(
    b: &Bundle,
    p: &str,
    c: &str,
    decision: Decision,
    remap: RemapVariant,
) -> (Analysis, PipelinePlan) {
    let a = analysis(b);
    let mut plan = a
        .plan(
            &Profiles::from_toml(&b.profile).unwrap(),
            &Config::default(),
        )
        .unwrap();
    let e = plan
        .edges
        .iter_mut()
        .find(|e| e.producer == p && e.consumer == c)
        .unwrap();
    e.decision = decision;
    e.remap = remap;
    (a, plan)
}

fn lowered(a: &Analysis, plan: &PipelinePlan) -> Result<(Transformed, HostModel), String> {
    let config = Config::default();
    let t = apply_plan(a, plan, &config).map_err(|e| e.to_string())?;
    let h = rewrite_host(a, plan, &t, &PartitionPlan::unsplit(a.dfg.kernels()), None)
        .map_err(|e| e.to_string())?;
    Ok((t, h.model))
}

#[test]
fn c08_transforms_are_equivalent_under_both_schedulers() {
    criterion(
        8,
        "fused/channel/global-memory+remap outputs equal naive",
        secs(60),
        || {
            let cfd = fixtures::cfd();
            let lud = fixtures::lud();
            let mut cases = vec![
                (
                    "cfd fuse",
                    forced(
                        &cfd,
                        "compute_flux",
                        "time_step",
                        Decision::Fuse,
                        RemapVariant::NoRemap,
                    ),
                ),
                (
                    "cfd channel",
                    forced(
                        &cfd,
                        "compute_flux",
                        "time_step",
                        Decision::Channel,
                        RemapVariant::NoRemap,
                    ),
                ),
            ];
            for v in RemapVariant::ALL {
                cases.push((
                    v.label(),
                    forced(
                        &lud,
                        "lud_perimeter",
                        "lud_internal",
                        Decision::GlobalMemCke,
                        v,
                    ),
                ));
            }
            let mut runs = 0;
            for (name, (a, plan)) in &cases {
                let (t, h) = lowered(a, plan).map_err(|e| format!("{name}: {e}"))?;
                for mode in [Mode::Fair, Mode::Adversarial] {
                    for seed in 0..20 {
                        let rep = check_equivalence(
                            KernelSet {
                                program: &a.program,
                                host: &a.host,
                            },
                            KernelSet {
                                program: &t.program,
                                host: &h,
                            },
                            &SimOptions::new(mode, seed),
                            1e-6,
                        )
                        .map_err(|e| format!("{name} {mode:?} seed {seed}: {e}"))?;
                        ensure!(
                            rep.equal,
                            "{name} {mode:?} seed {seed}: {:?}",
                            rep.mismatches
                        );
                        runs += 1;
                    }
                }
            }
            Ok(format!(
                "{} transforms x 2 modes x 20 seeds = {runs} runs",
                cases.len()
            ))
        },
    );
}

fn balance_check(plan: &PipelinePlan, t: &Transformed, profile: &str) -> Option<BalanceReport> {
    let profiles = Profiles::from_toml(profile).ok()?;
    let (records, groups) = balance_inputs(plan, t, &profiles).ok()?;
    balance_kernels(
        &records,
        &groups,
        &|_| true,
        &LinearEstimator,
        &Config::default(),
    )
    .ok()?
}

#[test]
fn c09_missing_fence_is_detected() {
    criterion(
        9,
        "fence removal caught by the adversarial scheduler",
        None,
        || {
            let (a, plan) = forced(
                &fixtures::lud(),
                "lud_perimeter",
                "lud_internal",
                Decision::GlobalMemCke,
                RemapVariant::NoRemap,
            );
            let (t, h) = lowered(&a, &plan)?;
            let producer = &t.flags.first().ok_or("no flag emitted")?.producer;
            let broken = strip_fences(&t.program, producer);
            ensure!(broken != t.program, "no fence to remove");
            let caught: Vec<u64> = (0..20u64)
                .filter(|&s| {
                    let rep = check_equivalence(
                        KernelSet {
                            program: &a.program,
                            host: &a.host,
                        },
                        KernelSet {
                            program: &broken,
                            host: &h,
                        },
                        &SimOptions::new(Mode::Adversarial, s),
                        1e-6,
                    );
                    rep.map_or(true, |r| !r.equal)
                })
                .collect();
            ensure!(
                !caught.is_empty(),
                "no adversarial seed exposed the missing fence"
            );
            Ok(format!("caught in {} of 20 seeds", caught.len()))
        },
    );
}

// ---------------------------------------------------------------------------
// 10. Tuning variants.

#[test]
fn c10_tuning_emits_two_p_plus_one_variants() {
    criterion(
        10,
        "tuning emits 2p+1 variants per kernel, clamped at 1",
        None,
        || {
            // Ladder positions: a factor k steps up from 1 has k candidates below it.
            for mu in [1u32, 2, 4, 8] {
                for vec in [false, true] {
                    let mut ladder = vec![1u32];
                    while ladder.len() < 20 {
                        ladder.push(next_factor(*ladder.last().unwrap(), mu, vec));
                    }
                    for p in 0..4u32 {
                        for (depth, &n) in ladder.iter().enumerate().take(10) {
                            let got = tuning_candidates(n, p, mu, vec);
                            let lo = depth.saturating_sub(p as usize);
                            let want = &ladder[lo..=depth + p as usize];
                            ensure!(
                                got == want,
                                "n={n} p={p} mu={mu} vec={vec}: {got:?} != {want:?}"
                            );
                            if depth >= p as usize {
                                ensure!(
                                    got.len() == 2 * p as usize + 1,
                                    "n={n} p={p}: {} variants",
                                    got.len()
                                );
                            }
                        }
                    }
                }
            }
            // End to end on the streaming miniature: one file per candidate.
            let b = fixtures::cfd();
            let a = analysis(&b);
            let config = Config::default();
            let profiles = Profiles::from_toml(&b.profile).unwrap();
            let plan = a.plan(&profiles, &config).map_err(|e| e.to_string())?;
            let t = apply_plan(&a, &plan, &config).map_err(|e| e.to_string())?;
            let report = balance_check(&plan, &t, &b.profile).ok_or("balance failed")?;
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut detail = Vec::new();
            for p in [1u32, 2] {
                let tp = emit_tuning_plan(&report.assignment, &profiles, p)
                    .map_err(|e| e.to_string())?;
                let sub = dir.path().join(format!("p{p}"));
                let units = t
                    .program
                    .kernels
                    .iter()
                    .map(|k| (k.name.clone(), k.clone()))
                    .collect();
                write_tuning_variants(&tp, &units, &sub).map_err(|e| e.to_string())?;
                for k in &tp.kernels {
                    let prof = profiles.get(&k.kernel).unwrap();
                    let depth = {
                        let (mut d, mut n) = (0usize, k.n_uni);
                        while let Some(x) = prev_factor(n, prof.max_unroll, prof.vec) {
                            d += 1;
                            n = x;
                        }
                        d
                    };
                    let want = p as usize + 1 + depth.min(p as usize);
                    let files = std::fs::read_dir(&sub)
                        .map_err(|e| e.to_string())?
                        .filter(|e| {
                            let n = e.as_ref().unwrap().file_name().into_string().unwrap();
                            n.strip_prefix(&format!("{}_n", k.kernel))
                                .is_some_and(|r| r.trim_end_matches(".cl").parse::<u32>().is_ok())
                        })
                        .count();
                    ensure!(
                        files == want && k.candidates.len() == want,
                        "{} p={p}: {files} files, want {want}",
                        k.kernel
                    );
                }
                detail.push(format!("p={p}: {} variants", tp.variant_count()));
            }
            Ok(detail.join(", "))
        },
    );
}
