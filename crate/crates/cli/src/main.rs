//! `mkpipe` command-line driver: the full optimization flow and each stage on its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mkpipe::balance::{
    emit_tuning_plan, select_tuned, write_tuning_variants, Estimator, LinearEstimator,
    Measurements, Profiles, TableEstimator, TuningPlan,
};
use mkpipe::flow::{
    attach_factors, balance_inputs, balance_kernels, balance_parts, decompositions, optimize,
    split_problem, tune_remaps, unified_factors, Analysis, OptimizeOptions, PartBalance,
};
use mkpipe::frontend::{parse_program, KernelProgram};
use mkpipe::host::{scan_host, HostModel, ScanInfo};
use mkpipe::hostgen::{part_program, rewrite_host, HostEdits};
use mkpipe::io::write_atomic;
use mkpipe::planner::PipelinePlan;
use mkpipe::simcheck::{check_equivalence, KernelSet, Mode, SimOptions};
use mkpipe::split::{partition, PartitionPlan, SplitDecision};
use mkpipe::transforms::{apply_plan, Transformed};
use mkpipe::{fixtures, Config};

#[derive(Parser)]
#[command(
    name = "mkpipe",
    version,
    about = "Pipeline, balance and split multi-kernel OpenCL FPGA programs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dump the kernel DFG and dependence classes.
    Analyze(Common),
    /// Decide how each producer/consumer pair overlaps.
    Plan(Common),
    /// Emit the rewritten kernels.
    Transform(Staged),
    /// Balance unroll/SIMD/CU factors under the resource budget.
    Balance(Staged),
    /// Write tuning variants around the balanced factors.
    TuneEmit(Staged),
    /// Pick the fastest measured variant of every kernel.
    TuneSelect(TuneSelect),
    /// Decide whether to split the kernels over two bitstreams.
    Split(Staged),
    /// Rewrite the host program for the optimized kernels.
    Hostgen(Staged),
    /// Compare two kernel sets by simulation.
    Check(Check),
    /// Run plan, transform, balance, split, hostgen and check.
    Optimize(Optimize),
    /// Write a bundled example (cfd, lud, hist, bp) as input files.
    Fixture(Fixture),
}

#[derive(Args, Clone)]
struct Common {
    /// Kernel source file or directory of `.cl` files.
    #[arg(long)]
    kernels: PathBuf,
    /// Host C source or TOML host manifest.
    #[arg(long)]
    host: PathBuf,
    /// Naive kernel profiles (TOML).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Key/value configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resource estimate table (CSV) replacing the linear model.
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Per-run overrides of configuration keys.
#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    dominant_fraction: Option<f64>,
    #[arg(long)]
    fusion_time_threshold_ms: Option<f64>,
    /// Tuning radius.
    #[arg(long = "p")]
    p: Option<u32>,
    #[arg(long)]
    reprogram_ms: Option<f64>,
    #[arg(long)]
    link_bandwidth_mb_s: Option<f64>,
    #[arg(long)]
    loop_split_ratio: Option<f64>,
    #[arg(long)]
    idqueue_cap: Option<usize>,
    #[arg(long)]
    channel_depth: Option<u32>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    resource_budget: Option<f64>,
}

#[derive(Args, Clone)]
struct Staged {
    #[command(flatten)]
    common: Common,
    /// Plan from `mkpipe plan` instead of planning again.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Unified factors (JSON kernel -> factor) from `balance` or `tune-select`.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Partition from `mkpipe split`.
    #[arg(long)]
    partition: Option<PathBuf>,
}

#[derive(Args)]
struct TuneSelect {
    /// Manifest written by `tune-emit`.
    #[arg(long)]
    manifest: PathBuf,
    /// Measured variant times (TOML).
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Check {
    /// Reference kernels and host.
    #[arg(long)]
    kernels: PathBuf,
    #[arg(long)]
    host: PathBuf,
    /// Kernels and host to compare against the reference.
    #[arg(long)]
    against_kernels: PathBuf,
    #[arg(long)]
    against_host: PathBuf,
    /// Seeds per scheduler mode.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Optimize {
    #[command(flatten)]
    common: Common,
    /// Seeds per scheduler mode for the final check; 0 skips it.
    #[arg(long, default_value_t = 2)]
    check_seeds: u64,
    /// Keep the planner's remap variants instead of simulating each.
    #[arg(long)]
    no_remap_tuning: bool,
}

#[derive(Args)]
struct Fixture {
    name: String,
    #[arg(long)]
    out: PathBuf,
}

/// Parsed inputs shared by the stage commands.
struct Loaded {
    analysis: Analysis,
    scan: Option<ScanInfo>,
    profiles: Option<Profiles>,
    config: Config,
    est: Box<dyn Estimator>,
}

impl Loaded {
    fn profiles(&self) -> Result<&Profiles> {
        self.profiles
            .as_ref()
            .ok_or_else(|| anyhow!("this command needs --profile"))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_kernels(path: &Path) -> Result<KernelProgram> {
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|p| p.extension().is_some_and(|e| e == "cl"));
        v.sort();
        if v.is_empty() {
            bail!("no .cl files in {}", path.display());
        }
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut program = KernelProgram::default();
    for f in files {
        let p = parse_program(&read(&f)?).with_context(|| format!("parsing {}", f.display()))?;
        for k in &p.kernels {
            if program.kernel(&k.name).is_some() {
                bail!("kernel `{}` defined twice ({})", k.name, f.display());
            }
        }
        program.channels.extend(p.channels);
        program.kernels.extend(p.kernels);
    }
    Ok(program)
}

fn load_host(path: &Path) -> Result<(HostModel, Option<ScanInfo>)> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        let m =
            HostModel::from_toml(&text).with_context(|| format!("loading {}", path.display()))?;
        Ok((m, None))
    } else {
        let s = scan_host(&text).with_context(|| format!("scanning {}", path.display()))?;
        Ok((s.model, Some(s.info)))
    }
}

fn load_config(path: Option<&Path>, o: &Overrides) -> Result<Config> {
    let mut c = match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    macro_rules! set {
        ($($k:ident),*) => { $( if let Some(v) = o.$k { c.$k = v; } )* };
    }
    set!(
        dominant_fraction,
        fusion_time_threshold_ms,
        p,
        reprogram_ms,
        link_bandwidth_mb_s,
        loop_split_ratio,
        idqueue_cap,
        channel_depth,
        tolerance,
        resource_budget
    );
    c.validate()?;
    Ok(c)
}

fn load(c: &Common) -> Result<Loaded> {
    let program = load_kernels(&c.kernels)?;
    let (host, scan) = load_host(&c.host)?;
    let profiles = c
        .profile
        .as_deref()
        .map(|p| Profiles::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let config = load_config(c.config.as_deref(), &c.overrides)?;
    let est: Box<dyn Estimator> = match &c.estimates {
        Some(p) => {
            Box::new(TableEstimator::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        None => Box::new(LinearEstimator),
    };
    Ok(Loaded {
        analysis: Analysis::run(program, host)?,
        scan,
        profiles,
        config,
        est,
    })
}

/// Writes `files` into `out` when given; the report always goes to stdout.
fn emit(out: Option<&Path>, files: &[(&str, String)], report: &str) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, text) in files {
            write_atomic(&dir.join(name), text)?;
        }
    }
    print!("{report}");
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn analyze(c: &Common) -> Result<()> {
    let l = load(c)?;
    let a = &l.analysis;
    let mut r = String::new();
    writeln!(r, "nodes:")?;
    for n in &a.dfg.nodes {
        writeln!(
            r,
            "  {} {} queue={} loops=[{}]",
            n.id,
            n.kernel,
            n.queue,
            n.loops.join(",")
        )?;
    }
    writeln!(r, "edges:")?;
    for e in &a.dfg.edges {
        let sync = if e.synced { " synced" } else { "" };
        writeln!(
            r,
            "  {} -> {} via {} {:?}{sync}",
            e.producer, e.consumer, e.buffer, e.kind
        )?;
    }
    writeln!(r, "relations:")?;
    for p in &a.relations {
        let rel = &p.relation;
        let cons = if rel.conservative {
            " (conservative)"
        } else {
            ""
        };
        writeln!(
            r,
            "  {} -> {} [{}] {:?}{cons}",
            rel.producer,
            rel.consumer,
            rel.buffers.join(","),
            rel.klass
        )?;
    }
    emit(c.out.as_deref(), &[("analysis.json", json(a)?)], &r)
}

fn plan_of(l: &Loaded, path: Option<&Path>) -> Result<PipelinePlan> {
    match path {
        Some(p) => Ok(PipelinePlan::from_toml(&read(p)?)
            .with_context(|| format!("loading {}", p.display()))?),
        None => {
            let mut plan = l.analysis.plan(l.profiles()?, &l.config)?;
            tune_remaps(&l.analysis, &mut plan, &l.config);
            Ok(plan)
        }
    }
}

fn plan(c: &Common) -> Result<()> {
    let l = load(c)?;
    let plan = plan_of(&l, None)?;
    emit(
        c.out.as_deref(),
        &[("plan.toml", plan.to_toml()?)],
        &plan.to_string(),
    )
}

fn read_factors(path: &Path) -> Result<BTreeMap<String, u32>> {
    serde_json::from_str(&read(path)?).with_context(|| format!("loading {}", path.display()))
}

/// Plan and rewrite, with factors attached when given.
fn transformed(l: &Loaded, s: &Staged) -> Result<(PipelinePlan, Transformed)> {
    let plan = plan_of(l, s.plan.as_deref())?;
    let mut t = apply_plan(&l.analysis, &plan, &l.config)?;
    if let Some(f) = &s.factors {
        let (records, _) = balance_inputs(&plan, &t, l.profiles()?)?;
        attach_factors(&mut t, &decompositions(&records, &read_factors(f)?)?);
    }
    Ok((plan, t))
}

fn transform(s: &Staged) -> Result<()> {
    let l = load(&s.common)?;
    let (_, t) = transformed(&l, s)?;
    let text = t.program.to_string();
    let files = [("kernels.cl", text.clone()), ("transform.json", json(&t)?)];
    emit(s.common.out.as_deref(), &files, &text)
}

fn co_resident(l: &Loaded, plan: &PipelinePlan, t: &Transformed) -> Result<Vec<PartBalance>> {
    let (records, groups) = balance_inputs(plan, t, l.profiles()?)?;
    let all = balance_kernels(&records, &groups, &|_| true, l.est.as_ref(), &l.config)?;
    Ok(all
        .map(|report| vec![PartBalance { part: 1, report }])
        .unwrap_or_default())
}

fn balance_report(b: &[PartBalance]) -> String {
    let mut r = String::new();
    for p in b {
        let _ = writeln!(r, "part {} ({:?})", p.part, p.report.method);
        for k in &p.report.assignment.kernels {
            let d = k.decomposition;
            let _ = writeln!(
                r,
                "  {:<32} n_uni={:<3} unroll={} simd={} cu={} time={:.3}ms",
                k.kernel, k.n_uni, d.unroll, d.simd, d.cu, k.time_ms
            );
        }
        let _ = writeln!(r, "  feasible: {}", p.report.assignment.feasible);
    }
    r
}

/// Balance per bitstream of `s.partition`, or co-resident when none is given.
fn balanced(
    l: &Loaded,
    s: &Staged,
    plan: &PipelinePlan,
    t: &Transformed,
) -> Result<Vec<PartBalance>> {
    match &s.partition {
        None => co_resident(l, plan, t),
        Some(p) => {
            let part = PartitionPlan::from_toml(&read(p)?)
                .with_context(|| format!("loading {}", p.display()))?;
            let edits = HostEdits::build(&l.analysis, plan, t, &part)?;
            let (records, groups) = balance_inputs(plan, t, l.profiles()?)?;
            Ok(balance_parts(
                &records,
                &groups,
                &edits,
                &part,
                l.est.as_ref(),
                &l.config,
            )?)
        }
    }
}

fn balance(s: &Staged) -> Result<()> {
    let l = load(&s.common)?;
    let plan = plan_of(&l, s.plan.as_deref())?;
    let t = apply_plan(&l.analysis, &plan, &l.config)?;
    let b = balanced(&l, s, &plan, &t)?;
    let files = [
        ("balance.json", json(&b)?),
        ("factors.json", json(&unified_factors(&b))?),
    ];
    emit(s.common.out.as_deref(), &files, &balance_report(&b))
}

fn tune_emit(s: &Staged) -> Result<()> {
    let l = load(&s.common)?;
    let out = s
        .common
        .out
        .as_deref()
        .ok_or_else(|| anyhow!("tune-emit needs --out"))?;
    let plan = plan_of(&l, s.plan.as_deref())?;
    let t = apply_plan(&l.analysis, &plan, &l.config)?;
    let (records, _) = balance_inputs(&plan, &t, l.profiles()?)?;
    let mut profiles = l.profiles()?.clone();
    for r in records {
        profiles.upsert(r);
    }
    let mut r = String::new();
    for b in balanced(&l, s, &plan, &t)? {
        let tp = emit_tuning_plan(&b.report.assignment, &profiles, l.config.p)?;
        let units = t
            .program
            .kernels
            .iter()
            .map(|k| (k.name.clone(), k.clone()))
            .collect();
        let dir = out.join(format!("part{}", b.part));
        write_tuning_variants(&tp, &units, &dir)?;
        for k in &tp.kernels {
            let f: Vec<String> = k.candidates.iter().map(|c| c.n_uni.to_string()).collect();
            writeln!(
                r,
                "{} n_uni={} candidates=[{}]",
                k.kernel,
                k.n_uni,
                f.join(", ")
            )?;
        }
        writeln!(r, "{} variants in {}", tp.variant_count(), dir.display())?;
    }
    print!("{r}");
    Ok(())
}

fn tune_select(t: &TuneSelect) -> Result<()> {
    let plan = TuningPlan::from_toml(&read(&t.manifest)?)
        .with_context(|| format!("loading {}", t.manifest.display()))?;
    let m = Measurements::from_toml(&read(&t.measurements)?)
        .with_context(|| format!("loading {}", t.measurements.display()))?;
    let chosen = select_tuned(&plan, &m)?;
    let r: String = chosen
        .iter()
        .map(|(k, n)| format!("{k} n_uni={n}\n"))
        .collect();
    emit(t.out.as_deref(), &[("factors.json", json(&chosen)?)], &r)
}

fn split(s: &Staged) -> Result<()> {
    let l = load(&s.common)?;
    let (plan, mut t) = transformed(&l, s)?;
    let factors = match &s.factors {
        Some(f) => read_factors(f)?,
        None => unified_factors(&co_resident(&l, &plan, &t)?),
    };
    let problem = split_problem(&l.analysis, &plan, l.profiles()?, l.est.as_ref(), &factors)?;
    let part = partition(&problem, &l.config)?;
    let edits = HostEdits::build(&l.analysis, &plan, &t, &part)?;
    let mut files = vec![("partition.toml", part.to_toml()?)];
    if part.decision == SplitDecision::Split {
        if s.factors.is_none() {
            let (records, groups) = balance_inputs(&plan, &t, l.profiles()?)?;
            let b = balance_parts(&records, &groups, &edits, &part, l.est.as_ref(), &l.config)?;
            attach_factors(&mut t, &decompositions(&records, &unified_factors(&b))?);
        }
        files.push((
            "kernels_part1.cl",
            part_program(&t.program, &edits, 1).to_string(),
        ));
        files.push((
            "kernels_part2.cl",
            part_program(&t.program, &edits, 2).to_string(),
        ));
    }
    emit(s.common.out.as_deref(), &files, &format!("{part}\n"))
}

fn hostgen(s: &Staged) -> Result<()> {
    let l = load(&s.common)?;
    let (plan, t) = transformed(&l, s)?;
    let part = match &s.partition {
        Some(p) => PartitionPlan::from_toml(&read(p)?)
            .with_context(|| format!("loading {}", p.display()))?,
        None => PartitionPlan::unsplit(l.analysis.dfg.kernels()),
    };
    let h = rewrite_host(&l.analysis, &plan, &t, &part, l.scan.as_ref())?;
    match &s.common.out {
        Some(dir) => h.write(dir)?,
        None => print!("{}", h.model.to_toml()?),
    }
    print!("{}", h.note);
    Ok(())
}

fn check(c: &Check) -> Result<()> {
    let config = load_config(
        c.config.as_deref(),
        &Overrides {
            tolerance: c.tolerance,
            ..Overrides::default()
        },
    )?;
    let (pa, (ha, _)) = (load_kernels(&c.kernels)?, load_host(&c.host)?);
    let (pb, (hb, _)) = (
        load_kernels(&c.against_kernels)?,
        load_host(&c.against_host)?,
    );
    let a = KernelSet {
        program: &pa,
        host: &ha,
    };
    let b = KernelSet {
        program: &pb,
        host: &hb,
    };
    let mut text = String::new();
    let mut equal = true;
    for mode in [Mode::Fair, Mode::Adversarial] {
        for seed in 0..c.seeds {
            let rep = check_equivalence(a, b, &SimOptions::new(mode, seed), config.tolerance)?;
            equal &= rep.equal;
            text.push_str(&rep.to_text());
            text.push('\n');
        }
    }
    writeln!(text, "equal={equal}")?;
    emit(c.out.as_deref(), &[("check.txt", text.clone())], &text)?;
    if !equal {
        bail!("kernel sets are not equivalent");
    }
    Ok(())
}

fn run_optimize(o: &Optimize) -> Result<()> {
    let l = load(&o.common)?;
    let opts = OptimizeOptions {
        check_seeds: o.check_seeds,
        tune_remap: !o.no_remap_tuning,
    };
    let r = optimize(
        &l.analysis,
        l.profiles()?,
        &l.config,
        l.est.as_ref(),
        l.scan.as_ref(),
        &opts,
    )?;
    let out = o
        .common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("mkpipe-out"));
    r.write(&out)?;
    print!("{}", r.report());
    if !r.equivalent() {
        bail!(
            "optimized program differs from the input under simulation (see {})",
            out.join("check.txt").display()
        );
    }
    Ok(())
}

fn fixture(f: &Fixture) -> Result<()> {
    let b = fixtures::by_name(&f.name)
        .ok_or_else(|| anyhow!("unknown fixture `{}` (cfd, lud, hist, bp)", f.name))?;
    let mut files = vec![
        ("kernels.cl", b.kernels.clone()),
        ("host.toml", b.host.clone()),
        ("profile.toml", b.profile.clone()),
    ];
    if b.name == "cfd" {
        files.push(("host.c", fixtures::cfd_host_c().to_string()));
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
    emit(
        Some(&f.out),
        &files,
        &format!("wrote {} to {}\n", names.join(", "), f.out.display()),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, res) = match &cli.cmd {
        Cmd::Analyze(c) => ("analyze", analyze(c)),
        Cmd::Plan(c) => ("plan", plan(c)),
        Cmd::Transform(s) => ("transform", transform(s)),
        Cmd::Balance(s) => ("balance", balance(s)),
        Cmd::TuneEmit(s) => ("tune-emit", tune_emit(s)),
        Cmd::TuneSelect(t) => ("tune-select", tune_select(t)),
        Cmd::Split(s) => ("split", split(s)),
        Cmd::Hostgen(s) => ("hostgen", hostgen(s)),
        Cmd::Check(c) => ("check", check(c)),
        Cmd::Optimize(o) => ("optimize", run_optimize(o)),
        Cmd::Fixture(f) => ("fixture", fixture(f)),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut block = format!("error[{name}]: {e}\n");
            for cause in e.chain().skip(1) {
                block.push_str(&format!("  caused by: {cause}\n"));
            }
            eprint!("{block}");
            ExitCode::FAILURE
        }
    }
}
