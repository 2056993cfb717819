use mkpipe::balance::*;
use proptest::prelude::*;

fn rec(
    name: &str,
    time: f64,
    out: u64,
    base: f64,
    delta: f64,
    max_unroll: u32,
    vec: bool,
) -> ProfileRecord {
    let s = |v| StaticResources {
        alut: v,
        ff: v,
        ram: v,
        dsp: v,
    };
    ProfileRecord {
        kernel: name.into(),
        exec_time_ms: time,
        output_bytes: out,
        bw_frac: 0.0,
        vec,
        max_unroll,
        base: s(base),
        delta: s(delta),
    }
}

/// Straight-line re-statement of the throughput greedy loop over scalar resources.
fn reference_throughput(
    tp: &[f64],
    base: &[f64],
    delta: &[f64],
    mu: &[u32],
    vec: &[bool],
    budget: f64,
) -> Vec<u32> {
    let k = tp.len();
    let mut n = vec![1u32; k];
    let used = |n: &[u32]| {
        (0..k)
            .map(|i| base[i] + (n[i] - 1) as f64 * delta[i])
            .sum::<f64>()
    };
    if used(&n) > budget + 1e-9 {
        return n;
    }
    loop {
        let mut j = 0;
        for i in 0..k {
            if n[i] as f64 * tp[i] < n[j] as f64 * tp[j] {
                j = i;
            }
        }
        let old = n[j];
        n[j] = if old < mu[j] {
            old + 1
        } else if vec[j] {
            old * 2
        } else {
            old + mu[j]
        };
        if used(&n) > budget + 1e-9 || n[j] > MAX_FACTOR {
            n[j] = old;
            return n;
        }
    }
}

/// Same for the resource greedy loop with identical per-resource usage.
fn reference_resource(t: &[f64], base: &[f64], delta: &[f64], budget: f64) -> Vec<u32> {
    let k = t.len();
    let mut n = vec![1u32; k];
    let used = |n: &[u32]| {
        (0..k)
            .map(|i| base[i] + (n[i] - 1) as f64 * delta[i])
            .sum::<f64>()
    };
    if used(&n) > budget + 1e-9 {
        return n;
    }
    loop {
        let mut j = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..k {
            let f = n[i] as f64;
            let gain = t[i] / (f * (f + 1.0));
            let score = if delta[i] > 0.0 {
                gain / (delta[i] / 100.0)
            } else {
                f64::INFINITY
            };
            if score > best {
                best = score;
                j = i;
            }
        }
        n[j] += 1;
        if used(&n) > budget + 1e-9 || n[j] > MAX_FACTOR {
            n[j] -= 1;
            return n;
        }
    }
}

#[test]
fn throughput_balance_worked_example() {
    // Stage throughputs 10 and 20; each step costs 10% on every resource.
    let p = vec![
        rec("a", 10.0, 100, 10.0, 10.0, 64, false),
        rec("b", 10.0, 200, 10.0, 10.0, 64, false),
    ];
    let a = throughput_balance(&p, &LinearEstimator, &ResourceVector::budget(1.0)).unwrap();
    assert_eq!(a.factors(), vec![7, 3]);
    assert!(a.feasible);
    let last = a.trace.last().unwrap();
    assert!(!last.accepted);
    assert_eq!(a.trace.iter().filter(|s| s.accepted).count(), 8);
}

#[test]
fn resource_balance_worked_example() {
    let p = vec![
        rec("a", 100.0, 1, 10.0, 10.0, 64, false),
        rec("b", 100.0, 1, 10.0, 10.0, 64, false),
    ];
    let a = resource_balance(&p, &LinearEstimator, &ResourceVector::budget(0.5)).unwrap();
    assert_eq!(a.factors(), vec![3, 2]);
}

#[test]
fn infeasible_base_returns_all_ones() {
    let p = vec![
        rec("a", 1.0, 1, 60.0, 1.0, 4, false),
        rec("b", 1.0, 1, 60.0, 1.0, 4, false),
    ];
    let a = resource_balance(&p, &LinearEstimator, &ResourceVector::budget(1.0)).unwrap();
    assert_eq!(a.factors(), vec![1, 1]);
    assert!(!a.feasible);
    assert!(a.trace.is_empty());
}

#[test]
fn decomposition_examples() {
    let d = |n, m, v| {
        decompose_factor(n, m, v)
            .map(|d| (d.unroll, d.simd, d.cu))
            .ok()
    };
    assert_eq!(d(3, 4, true), Some((3, 1, 1)));
    assert_eq!(d(4, 4, true), Some((4, 1, 1)));
    assert_eq!(d(16, 4, true), Some((4, 4, 1)));
    assert_eq!(d(12, 4, true), None);
    assert_eq!(d(12, 4, false), Some((4, 1, 3)));
    assert_eq!(d(10, 4, false), None);
    assert_eq!(d(0, 4, false), None);
}

#[test]
fn eru_of_measured_designs() {
    // (ALUT, FF, RAM, DSP) percentages of three base designs.
    for (v, eru) in [
        ([49.0, 25.0, 54.0, 63.0], 0.63),
        ([60.0, 25.0, 72.0, 74.0], 0.74),
        ([18.0, 15.0, 57.0, 1.0], 0.57),
    ] {
        let r = ResourceVector::new(v[0], v[1], v[2], v[3], 0.0);
        assert!((compute_eru(&r) - eru).abs() < 1e-12);
    }
}

#[test]
fn hybrid_classifies_group_shapes() {
    let p = vec![
        rec("a", 50.0, 100, 10.0, 5.0, 4, false),
        rec("b", 50.0, 200, 10.0, 5.0, 4, false),
        rec("c", 80.0, 100, 10.0, 5.0, 4, false),
    ];
    let b = ResourceVector::budget(1.0);
    assert_eq!(
        balance_groups(&p, &[vec![0, 1, 2]], &LinearEstimator, &b)
            .unwrap()
            .method,
        Method::Throughput
    );
    assert_eq!(
        balance_groups(&p, &[vec![0], vec![1], vec![2]], &LinearEstimator, &b)
            .unwrap()
            .method,
        Method::Resource
    );
    let h = balance_groups(&p, &[vec![0, 1], vec![2]], &LinearEstimator, &b).unwrap();
    assert_eq!(h.method, Method::Hybrid);
    assert!(h.assignment.total.fits(&b));
    assert_eq!(h.groups.len(), 1);
    // The pipeline's stages share its allocation.
    let alloc = h.groups[0].allocation;
    let members = h.assignment.kernels[0]
        .estimate
        .add(&h.assignment.kernels[1].estimate);
    assert!(members.fits(&alloc));
    assert!(balance_groups(&p, &[vec![0, 1]], &LinearEstimator, &b).is_err());
}

#[test]
fn tuning_plan_brackets_balanced_factors() {
    let p = vec![
        rec("a", 10.0, 100, 10.0, 10.0, 4, true),
        rec("b", 10.0, 200, 10.0, 10.0, 4, true),
    ];
    let a = throughput_balance(&p, &LinearEstimator, &ResourceVector::budget(1.0)).unwrap();
    let profiles = Profiles { kernel: p.clone() };
    let plan = emit_tuning_plan(&a, &profiles, 2).unwrap();
    for k in &plan.kernels {
        assert!(k.candidates.iter().any(|c| c.n_uni == k.n_uni));
        assert!(k.candidates.len() <= 5);
        for c in &k.candidates {
            assert_eq!(c.unroll * c.simd * c.cu, c.n_uni);
        }
    }
    let back = TuningPlan::from_toml(&plan.to_toml().unwrap()).unwrap();
    assert_eq!(back, plan);
}

proptest! {
    #[test]
    fn throughput_matches_reference(
        tp in prop::collection::vec(1u64..50, 1..5),
        base in prop::collection::vec(1.0f64..20.0, 5),
        delta in prop::collection::vec(0.5f64..15.0, 5),
        mu in prop::collection::vec(1u32..9, 5),
        vecs in prop::collection::vec(any::<bool>(), 5),
        budget in 0.2f64..1.0,
    ) {
        let k = tp.len();
        let p: Vec<ProfileRecord> = (0..k)
            .map(|i| rec(&format!("k{i}"), 1.0, tp[i], base[i], delta[i], mu[i], vecs[i]))
            .collect();
        let a = throughput_balance(&p, &LinearEstimator, &ResourceVector::budget(budget)).unwrap();
        let tpf: Vec<f64> = tp.iter().map(|&x| x as f64).collect();
        let want = reference_throughput(&tpf, &base[..k], &delta[..k], &mu[..k], &vecs[..k], budget * 100.0);
        prop_assert_eq!(a.factors(), want);
        if a.feasible {
            prop_assert!(a.total.fits(&ResourceVector::budget(budget)));
        }
        for f in &a.kernels {
            prop_assert_eq!(f.decomposition.product(), f.n_uni);
        }
    }

    #[test]
    fn resource_matches_reference(
        t in prop::collection::vec(1.0f64..500.0, 1..5),
        base in prop::collection::vec(1.0f64..20.0, 5),
        delta in prop::collection::vec(0.5f64..15.0, 5),
        budget in 0.2f64..1.0,
    ) {
        let k = t.len();
        // Unroll-only ladder so every step is +1.
        let p: Vec<ProfileRecord> = (0..k)
            .map(|i| rec(&format!("k{i}"), t[i], 1, base[i], delta[i], 1 << 20, false))
            .collect();
        let a = resource_balance(&p, &LinearEstimator, &ResourceVector::budget(budget)).unwrap();
        let want = reference_resource(&t, &base[..k], &delta[..k], budget * 100.0);
        prop_assert_eq!(a.factors(), want);
    }

    #[test]
    fn ladder_values_are_exactly_the_decomposable_ones(m in 1u32..9, v in any::<bool>()) {
        let mut on_ladder = std::collections::BTreeSet::new();
        let mut n = 1;
        while n <= 512 {
            on_ladder.insert(n);
            prop_assert_eq!(prev_factor(next_factor(n, m, v), m, v), Some(n));
            n = next_factor(n, m, v);
        }
        for x in 1..=512u32 {
            prop_assert_eq!(is_reachable(x, m, v), on_ladder.contains(&x), "x={}", x);
        }
    }
}

#[test]
fn small_balancing_cases() {
    let b = |f| ResourceVector::budget(f);
    // Equal stages with room for exactly two extra steps split them evenly.
    let eq = vec![
        rec("a", 10.0, 10, 10.0, 10.0, 64, false),
        rec("b", 10.0, 10, 10.0, 10.0, 64, false),
    ];
    assert_eq!(
        throughput_balance(&eq, &LinearEstimator, &b(0.4))
            .unwrap()
            .factors(),
        vec![2, 2]
    );
    // A lone kernel grows to the budget edge.
    let one = vec![rec("a", 100.0, 1, 10.0, 10.0, 64, false)];
    assert_eq!(
        resource_balance(&one, &LinearEstimator, &b(0.3))
            .unwrap()
            .factors(),
        vec![3]
    );
    // A long kernel takes every step from a trivially short one.
    let skew = vec![
        rec("a", 1000.0, 1, 10.0, 10.0, 64, false),
        rec("b", 1.0, 1, 10.0, 10.0, 64, false),
    ];
    assert_eq!(
        resource_balance(&skew, &LinearEstimator, &b(0.6))
            .unwrap()
            .factors(),
        vec![5, 1]
    );
    let d = decompose_factor(16, 8, true).unwrap();
    assert_eq!((d.unroll, d.simd, d.cu), (8, 2, 1));
    let d = decompose_factor(16, 8, false).unwrap();
    assert_eq!((d.unroll, d.simd, d.cu), (8, 1, 2));
}
