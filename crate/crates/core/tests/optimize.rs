use mkpipe::balance::{LinearEstimator, Profiles};
use mkpipe::fixtures::{self, Bundle};
use mkpipe::flow::{fused_profile, optimize, Analysis, OptimizeOptions, Optimized};
use mkpipe::planner::Decision;
use mkpipe::split::SplitDecision;
use mkpipe::Config;

fn run(b: &Bundle, config: &Config) -> Optimized {
    let a = Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap();
    let profiles = Profiles::from_toml(&b.profile).unwrap();
    optimize(
        &a,
        &profiles,
        config,
        &LinearEstimator,
        None,
        &OptimizeOptions::default(),
    )
    .unwrap()
}

#[test]
fn cfd_streams_through_a_channel_and_stays_equivalent() {
    let o = run(&fixtures::cfd(), &Config::default());
    assert_eq!(
        o.plan.edge("compute_flux", "time_step").unwrap().decision,
        Decision::Channel
    );
    assert!(!o.checks.is_empty() && o.equivalent(), "{}", o.report());
    assert_eq!(o.parts.len(), 1);
    println!("{}", o.report());
}

#[test]
fn lud_remap_choice_is_recorded_and_checked() {
    let o = run(&fixtures::lud(), &Config::default());
    assert!(o.equivalent(), "{}", o.report());
    let chosen: Vec<_> = o.remap_trials.iter().filter(|t| t.chosen).collect();
    assert_eq!(chosen.len(), 1);
    let min = o.remap_trials.iter().filter_map(|t| t.blocked_steps).min();
    assert_eq!(chosen[0].blocked_steps, min);
}

#[test]
fn bp_splits_and_balances_each_part() {
    let o = run(&fixtures::bp(), &Config::default());
    assert_eq!(o.partition.decision, SplitDecision::Split);
    assert_eq!(o.parts.len(), 2);
    assert_eq!(o.balance.len(), 2);
    assert!(o.equivalent(), "{}", o.report());
}

#[test]
fn fused_profile_takes_slower_stage_and_summed_area() {
    let p = Profiles::from_toml(&fixtures::cfd().profile).unwrap();
    let (a, b) = (p.get("compute_flux").unwrap(), p.get("time_step").unwrap());
    let f = fused_profile("f", a, b);
    assert_eq!(f.exec_time_ms, a.exec_time_ms.max(b.exec_time_ms));
    assert_eq!(f.base.alut, a.base.alut + b.base.alut);
    assert_eq!(f.max_unroll, a.max_unroll.min(b.max_unroll));
}

#[test]
fn output_is_byte_identical_across_runs() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        run(&fixtures::lud(), &Config::default())
            .write(d.path())
            .unwrap();
    }
    let list = |d: &std::path::Path| {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        v
    };
    let (x, y) = (list(dirs[0].path()), list(dirs[1].path()));
    assert_eq!(x.len(), y.len());
    for (p, q) in x.iter().zip(&y) {
        assert_eq!(p.file_name(), q.file_name());
        assert_eq!(
            std::fs::read(p).unwrap(),
            std::fs::read(q).unwrap(),
            "{}",
            p.display()
        );
    }
}
