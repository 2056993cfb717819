use mkpipe::balance::Profiles;
use mkpipe::fixtures::{self, Bundle};
use mkpipe::flow::Analysis;
use mkpipe::planner::{Decision, PipelinePlan, RemapVariant};
use mkpipe::Config;

fn plan(b: &Bundle) -> PipelinePlan {
    let a = Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap();
    let profiles = Profiles::from_toml(&b.profile).unwrap();
    a.plan(&profiles, &Config::default()).unwrap()
}

#[test]
fn cfd_short_pair_streams_through_channels() {
    let p = plan(&fixtures::cfd());
    let e = p.edge("compute_flux", "time_step").unwrap();
    assert_eq!(e.decision, Decision::Channel, "{}", e.rationale);
    // Edges leaving the inner loop or carried by it stay synchronized.
    assert_eq!(
        p.edge("compute_step_factor", "compute_flux")
            .unwrap()
            .decision,
        Decision::GlobalSync
    );
    assert!(p
        .groups
        .contains(&vec!["compute_flux".to_string(), "time_step".to_string()]));
}

#[test]
fn lud_uses_flags_with_all_remap_variants() {
    let p = plan(&fixtures::lud());
    let e = p.edge("lud_perimeter", "lud_internal").unwrap();
    assert_eq!(e.decision, Decision::GlobalMemCke, "{}", e.rationale);
    assert_eq!(e.remap_variants, RemapVariant::ALL.to_vec());
}

#[test]
fn hist_long_pair_is_fused() {
    let p = plan(&fixtures::hist());
    let e = p.edge("hist_prep", "hist_accum").unwrap();
    assert_eq!(e.decision, Decision::Fuse, "{}", e.rationale);
}

#[test]
fn bp_keeps_global_syncs() {
    let p = plan(&fixtures::bp());
    assert!(p.is_trivial(), "{p}");
    assert_eq!(p.groups.len(), 4);
}

#[test]
fn dominant_kernel_forces_global_sync() {
    let b = fixtures::cfd();
    let mut profiles = Profiles::from_toml(&b.profile).unwrap();
    for r in &mut profiles.kernel {
        if r.kernel == "compute_flux" {
            r.exec_time_ms = 1.0e6;
        }
    }
    let a = Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap();
    let p = a.plan(&profiles, &Config::default()).unwrap();
    assert_eq!(p.dominant.as_deref(), Some("compute_flux"));
    assert!(p.is_trivial());
}

#[test]
fn low_threshold_fuses_cfd_and_plans_round_trip() {
    let b = fixtures::cfd();
    let a = Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap();
    let profiles = Profiles::from_toml(&b.profile).unwrap();
    let cfg = Config {
        fusion_time_threshold_ms: 10.0,
        ..Config::default()
    };
    let p = a.plan(&profiles, &cfg).unwrap();
    assert_eq!(
        p.edge("compute_flux", "time_step").unwrap().decision,
        Decision::Fuse
    );
    assert_eq!(PipelinePlan::from_toml(&p.to_toml().unwrap()).unwrap(), p);
    // Identical inputs give identical plans.
    assert_eq!(a.plan(&profiles, &cfg).unwrap(), p);
}

#[test]
fn missing_profile_is_reported() {
    let b = fixtures::cfd();
    let a = Analysis::run(b.program().unwrap(), b.host_model().unwrap()).unwrap();
    let err = a
        .plan(&Profiles::default(), &Config::default())
        .unwrap_err();
    assert!(err.to_string().contains("compute_flux"));
}
