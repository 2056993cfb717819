use std::path::Path;
use std::process::{Command, Output};

fn mkpipe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkpipe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = mkpipe(args, cwd);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn fixture(name: &str, cwd: &Path) {
    ok(&["fixture", name, "--out", name], cwd);
}

fn inputs(name: &str) -> Vec<String> {
    [
        "--kernels",
        "kernels.cl",
        "--host",
        "host.toml",
        "--profile",
        "profile.toml",
    ]
    .iter()
    .enumerate()
    .map(|(i, s)| {
        if i % 2 == 1 {
            format!("{name}/{s}")
        } else {
            s.to_string()
        }
    })
    .collect()
}

fn with<'a>(base: &'a [String], extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = extra[..1].to_vec();
    v.extend(base.iter().map(String::as_str));
    v.extend(&extra[1..]);
    v
}

#[test]
fn optimize_cfd_from_c_host_chooses_a_channel() {
    let d = tempfile::tempdir().unwrap();
    fixture("cfd", d.path());
    let out = ok(
        &[
            "optimize",
            "--kernels",
            "cfd/kernels.cl",
            "--host",
            "cfd/host.c",
            "--profile",
            "cfd/profile.toml",
            "--out",
            "o",
        ],
        d.path(),
    );
    assert!(
        out.contains("compute_flux->time_step") && out.contains("Channel"),
        "{out}"
    );
    let o = d.path().join("o");
    let kernels = std::fs::read_to_string(o.join("kernels.cl")).unwrap();
    assert!(kernels.contains("write_channel_intel"));
    let host = std::fs::read_to_string(o.join("host.c")).unwrap();
    assert!(host.contains("queue_mk1"));
    assert!(std::fs::read_to_string(o.join("plan.toml"))
        .unwrap()
        .contains("decision = \"channel\""));
}

#[test]
fn analyze_single_kernel_has_one_node_and_no_relations() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("k.cl"),
        "__kernel void scale(__global float* x, float a) { int i = get_global_id(0); x[i] = x[i] * a; }\n",
    )
    .unwrap();
    std::fs::write(
        d.path().join("h.toml"),
        r#"
[[op]]
op = "buffer"
name = "x"
elem = "float"
len = 16
[[op]]
op = "enqueue"
kernel = "scale"
global = [16]
args = [{ buffer = "x" }, { float = 2.0 }]
[[op]]
op = "read"
buffer = "x"
"#,
    )
    .unwrap();
    let out = ok(
        &[
            "analyze",
            "--kernels",
            "k.cl",
            "--host",
            "h.toml",
            "--out",
            "a",
        ],
        d.path(),
    );
    let text = std::fs::read_to_string(d.path().join("a/analysis.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["dfg"]["nodes"].as_array().unwrap().len(), 1);
    assert!(v["relations"].as_array().unwrap().is_empty());
    assert!(out.contains("0 scale"));
}

#[test]
fn staged_outputs_feed_the_next_stage_and_check_equal() {
    let d = tempfile::tempdir().unwrap();
    fixture("lud", d.path());
    let i = inputs("lud");
    ok(&with(&i, &["plan", "--out", "s"]), d.path());
    ok(
        &with(&i, &["balance", "--plan", "s/plan.toml", "--out", "s"]),
        d.path(),
    );
    ok(
        &with(
            &i,
            &[
                "split",
                "--plan",
                "s/plan.toml",
                "--factors",
                "s/factors.json",
                "--out",
                "s",
            ],
        ),
        d.path(),
    );
    ok(
        &with(
            &i,
            &[
                "transform",
                "--plan",
                "s/plan.toml",
                "--factors",
                "s/factors.json",
                "--out",
                "s",
            ],
        ),
        d.path(),
    );
    ok(
        &with(
            &i,
            &[
                "hostgen",
                "--plan",
                "s/plan.toml",
                "--factors",
                "s/factors.json",
                "--partition",
                "s/partition.toml",
                "--out",
                "s",
            ],
        ),
        d.path(),
    );
    let rep = ok(
        &[
            "check",
            "--kernels",
            "lud/kernels.cl",
            "--host",
            "lud/host.toml",
            "--against-kernels",
            "s/kernels.cl",
            "--against-host",
            "s/host.toml",
            "--seeds",
            "3",
        ],
        d.path(),
    );
    assert!(rep.ends_with("equal=true\n"), "{rep}");
    assert!(std::fs::read_to_string(d.path().join("s/kernels.cl"))
        .unwrap()
        .contains("mem_fence"));
}

#[test]
fn check_reports_a_difference_with_a_nonzero_exit() {
    let d = tempfile::tempdir().unwrap();
    fixture("cfd", d.path());
    std::fs::create_dir(d.path().join("bad")).unwrap();
    let k = std::fs::read_to_string(d.path().join("cfd/kernels.cl")).unwrap();
    std::fs::write(d.path().join("bad/kernels.cl"), k.replace("0.75", "0.5")).unwrap();
    let o = mkpipe(
        &[
            "check",
            "--kernels",
            "cfd/kernels.cl",
            "--host",
            "cfd/host.toml",
            "--against-kernels",
            "bad/kernels.cl",
            "--against-host",
            "cfd/host.toml",
            "--seeds",
            "1",
        ],
        d.path(),
    );
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error[check]: "), "{err}");
    assert_eq!(err.lines().filter(|l| l.starts_with("error")).count(), 1);
}

#[test]
fn flags_override_the_config_file() {
    let d = tempfile::tempdir().unwrap();
    fixture("cfd", d.path());
    std::fs::write(d.path().join("c.toml"), "fusion_time_threshold_ms = 1.0\n").unwrap();
    let i = inputs("cfd");
    let fused = ok(&with(&i, &["plan", "--config", "c.toml"]), d.path());
    assert!(fused.contains("Fuse"), "{fused}");
    let back = ok(
        &with(
            &i,
            &[
                "plan",
                "--config",
                "c.toml",
                "--fusion-time-threshold-ms",
                "100",
            ],
        ),
        d.path(),
    );
    assert!(back.contains("Channel"), "{back}");
}

#[test]
fn missing_input_fails_without_partial_output() {
    let d = tempfile::tempdir().unwrap();
    let o = mkpipe(
        &[
            "optimize",
            "--kernels",
            "none.cl",
            "--host",
            "none.toml",
            "--profile",
            "p.toml",
            "--out",
            "o",
        ],
        d.path(),
    );
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("none.cl"));
    assert!(!d.path().join("o").exists());
}

#[test]
fn optimize_is_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    fixture("lud", d.path());
    let i = inputs("lud");
    for out in ["r1", "r2"] {
        ok(&with(&i, &["optimize", "--out", out]), d.path());
    }
    let mut names: Vec<_> = std::fs::read_dir(d.path().join("r1"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 6);
    for n in names {
        let a = std::fs::read(d.path().join("r1").join(&n)).unwrap();
        let b = std::fs::read(d.path().join("r2").join(&n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
}

#[test]
fn tune_emit_then_select_round_trips() {
    let d = tempfile::tempdir().unwrap();
    fixture("hist", d.path());
    let i = inputs("hist");
    ok(
        &with(&i, &["tune-emit", "--out", "t", "--p", "1"]),
        d.path(),
    );
    let manifest = std::fs::read_to_string(d.path().join("t/part1/manifest.toml")).unwrap();
    let plan: toml::Value = toml::from_str(&manifest).unwrap();
    let mut m = String::new();
    for k in plan["kernel"].as_array().unwrap() {
        let cands = k["candidates"].as_array().unwrap();
        assert_eq!(cands.len(), 3);
        for (j, c) in cands.iter().enumerate() {
            m.push_str(&format!(
                "[[measurement]]\nkernel = \"{}\"\nn_uni = {}\ntime_ms = {}\n",
                k["kernel"].as_str().unwrap(),
                c["n_uni"].as_integer().unwrap(),
                10.0 - j as f64
            ));
        }
    }
    std::fs::write(d.path().join("m.toml"), m).unwrap();
    ok(
        &[
            "tune-select",
            "--manifest",
            "t/part1/manifest.toml",
            "--measurements",
            "m.toml",
            "--out",
            "sel",
        ],
        d.path(),
    );
    let f: std::collections::BTreeMap<String, u32> =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("sel/factors.json")).unwrap())
            .unwrap();
    assert!(!f.is_empty());
    ok(
        &with(&i, &["transform", "--factors", "sel/factors.json"]),
        d.path(),
    );
}
