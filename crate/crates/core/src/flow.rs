//! Glue running the stages in order, up to the full optimization flow.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::balance::{
    apply_factors, balance_groups, decompose_factor, virtual_profile, BalanceReport, Decomposition,
    Estimator, ProfileRecord, Profiles, ResourceVector,
};
use crate::config::Config;
use crate::dependence::{analyze_dfg, PairRelation};
use crate::error::{Error, Result};
use crate::frontend::KernelProgram;
use crate::host::{build_dfg, exclude_cpu_dependent, HostModel, KernelDfg, ScanInfo};
use crate::hostgen::{part_program, rewrite_host, HostArtifacts, HostEdits};
use crate::io::write_atomic;
use crate::planner::{plan_pipeline, Decision, PipelinePlan, RemapVariant};
use crate::simcheck::{check_equivalence, interpret, ExecutionReport, KernelSet, Mode, SimOptions};
use crate::split::{partition, PartitionPlan, SplitDecision, SplitProblem};
use crate::transforms::{apply_plan, Transformed};

/// Parsed inputs plus the DFG and its forward relations.
#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    #[serde(skip)]
    pub program: KernelProgram,
    #[serde(skip)]
    pub host: HostModel,
    pub dfg: KernelDfg,
    pub relations: Vec<PairRelation>,
}

impl Analysis {
    pub fn run(program: KernelProgram, host: HostModel) -> Result<Analysis> {
        let dfg = build_dfg(&host, &program)?;
        let dfg = exclude_cpu_dependent(&dfg, &host);
        let relations = analyze_dfg(&dfg, &program)?;
        Ok(Analysis {
            program,
            host,
            dfg,
            relations,
        })
    }

    pub fn plan(&self, profiles: &Profiles, config: &Config) -> Result<PipelinePlan> {
        plan_pipeline(
            &self.dfg,
            &self.program,
            &self.host,
            &self.relations,
            profiles,
            config,
        )
    }
}

/// Stage-by-stage result of the full optimization flow.
#[derive(Debug, Clone)]
pub struct Optimized {
    pub plan: PipelinePlan,
    /// Rewritten kernels with the balanced factors attached.
    pub transformed: Transformed,
    /// Balance report per bitstream (one entry unless the flow split).
    pub balance: Vec<PartBalance>,
    pub partition: PartitionPlan,
    pub host: HostArtifacts,
    /// Kernels of each bitstream, in part order.
    pub parts: Vec<KernelProgram>,
    pub remap_trials: Vec<RemapTrial>,
    pub checks: Vec<ExecutionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartBalance {
    pub part: u32,
    pub report: BalanceReport,
}

/// Blocked scheduler steps observed for one remap variant of one edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemapTrial {
    pub edge: String,
    pub variant: RemapVariant,
    /// `None` when the simulation could not run.
    pub blocked_steps: Option<u64>,
    pub chosen: bool,
}

/// Knobs of [`optimize`] that are not part of [`Config`].
#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Seeds per scheduler mode for the final equivalence check; 0 skips it.
    pub check_seeds: u64,
    /// Choose remap variants by simulated blocking instead of the planner default.
    pub tune_remap: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            check_seeds: 2,
            tune_remap: true,
        }
    }
}

/// Profile of a fused kernel: both bodies run in one pipeline, so time is
/// the slower stage and resources add up.
pub fn fused_profile(
    name: &str,
    producer: &ProfileRecord,
    consumer: &ProfileRecord,
) -> ProfileRecord {
    let mut p = virtual_profile(&[producer, consumer]);
    p.kernel = name.to_string();
    p.vec = producer.vec && consumer.vec;
    p.max_unroll = producer.max_unroll.min(consumer.max_unroll);
    p
}

/// Emitted kernel name of every original kernel.
fn emitted_names(plan: &PipelinePlan) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    for e in plan.edges.iter().filter(|e| e.decision == Decision::Fuse) {
        let fused = format!("{}_{}", e.producer, e.consumer);
        m.insert(e.producer.clone(), fused.clone());
        m.insert(e.consumer.clone(), fused);
    }
    m
}

/// Profiles of the emitted kernels and the pipeline groups over them.
pub fn balance_inputs(
    plan: &PipelinePlan,
    t: &Transformed,
    profiles: &Profiles,
) -> Result<(Vec<ProfileRecord>, Vec<Vec<usize>>)> {
    let renamed = emitted_names(plan);
    let emitted = |k: &str| renamed.get(k).cloned().unwrap_or_else(|| k.to_string());
    let mut names: Vec<String> = Vec::new();
    for n in &t.nodes {
        if let Some(k) = &n.kernel {
            if !names.contains(k) {
                names.push(k.clone());
            }
        }
    }
    let mut records = Vec::new();
    for k in &names {
        let rec = match profiles.get(k) {
            Some(p) => p.clone(),
            None => {
                let e = plan
                    .edges
                    .iter()
                    .find(|e| {
                        e.decision == Decision::Fuse
                            && &format!("{}_{}", e.producer, e.consumer) == k
                    })
                    .ok_or_else(|| Error::MissingProfile(k.clone()))?;
                let get = |n: &str| {
                    profiles
                        .get(n)
                        .ok_or_else(|| Error::MissingProfile(n.to_string()))
                };
                fused_profile(k, get(&e.producer)?, get(&e.consumer)?)
            }
        };
        records.push(rec);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen = BTreeSet::new();
    for g in &plan.groups {
        let mut idx = Vec::new();
        for k in g {
            let e = emitted(k);
            if let Some(i) = names.iter().position(|n| n == &e) {
                if seen.insert(i) {
                    idx.push(i);
                }
            }
        }
        if !idx.is_empty() {
            groups.push(idx);
        }
    }
    for i in 0..names.len() {
        if seen.insert(i) {
            groups.push(vec![i]);
        }
    }
    Ok((records, groups))
}

/// Balances the emitted kernels accepted by `keep` under the configured budget.
pub fn balance_kernels(
    records: &[ProfileRecord],
    groups: &[Vec<usize>],
    keep: &dyn Fn(&str) -> bool,
    est: &dyn Estimator,
    config: &Config,
) -> Result<Option<BalanceReport>> {
    let picked: Vec<usize> = (0..records.len())
        .filter(|&i| keep(&records[i].kernel))
        .collect();
    if picked.is_empty() {
        return Ok(None);
    }
    let local = |i: usize| picked.iter().position(|&p| p == i);
    let sub_groups: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.iter().filter_map(|&i| local(i)).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    let sub: Vec<ProfileRecord> = picked.iter().map(|&i| records[i].clone()).collect();
    balance_groups(
        &sub,
        &sub_groups,
        est,
        &ResourceVector::budget(config.resource_budget),
    )
    .map(Some)
}

/// Unified factor of every emitted kernel in `reports`.
pub fn unified_factors(reports: &[PartBalance]) -> BTreeMap<String, u32> {
    reports
        .iter()
        .flat_map(|r| {
            r.report
                .assignment
                .kernels
                .iter()
                .map(|k| (k.kernel.clone(), k.n_uni))
        })
        .collect()
}

/// Splits unified factors into unroll, SIMD and compute units per kernel profile.
pub fn decompositions(
    records: &[ProfileRecord],
    factors: &BTreeMap<String, u32>,
) -> Result<BTreeMap<String, Decomposition>> {
    let mut out = BTreeMap::new();
    for (k, &n) in factors {
        let r = records
            .iter()
            .find(|r| &r.kernel == k)
            .ok_or_else(|| Error::MissingProfile(k.clone()))?;
        out.insert(k.clone(), decompose_factor(n, r.max_unroll, r.vec)?);
    }
    Ok(out)
}

/// Attaches factors to the emitted kernels.
///
/// Kernels on a channel cannot be replicated (a channel has one endpoint per
/// side), so their compute-unit factor is folded into unrolling.
pub fn attach_factors(t: &mut Transformed, factors: &BTreeMap<String, Decomposition>) {
    let on_channel: BTreeSet<&str> = t
        .channels
        .iter()
        .flat_map(|c| [c.writer.as_str(), c.reader.as_str()])
        .collect();
    for unit in &mut t.program.kernels {
        if let Some(d) = factors.get(&unit.name) {
            let mut d = *d;
            if on_channel.contains(unit.name.as_str()) && d.cu > 1 {
                d = Decomposition {
                    unroll: d.unroll * d.cu,
                    simd: d.simd,
                    cu: 1,
                };
            }
            *unit = apply_factors(unit, d);
        }
    }
}

/// Split inputs with every original kernel sized at its co-resident factor.
pub fn split_problem(
    a: &Analysis,
    plan: &PipelinePlan,
    profiles: &Profiles,
    est: &dyn Estimator,
    emitted_factors: &BTreeMap<String, u32>,
) -> Result<SplitProblem> {
    let renamed = emitted_names(plan);
    let mut factors = BTreeMap::new();
    for k in a.dfg.kernels() {
        let e = renamed.get(&k).unwrap_or(&k);
        if let Some(&f) = emitted_factors.get(e) {
            factors.insert(k.clone(), f);
        }
    }
    SplitProblem::build(&a.dfg, &a.host, plan, profiles, est, &factors)
}

/// Balances each bitstream on its own; a single part when nothing is split.
pub fn balance_parts(
    records: &[ProfileRecord],
    groups: &[Vec<usize>],
    edits: &HostEdits,
    partition: &PartitionPlan,
    est: &dyn Estimator,
    config: &Config,
) -> Result<Vec<PartBalance>> {
    let parts: &[u32] = if partition.decision == SplitDecision::Split {
        &[1, 2]
    } else {
        &[1]
    };
    let mut out = Vec::new();
    for &part in parts {
        let keep = |k: &str| edits.kernel_part.get(k).copied().unwrap_or(1) == part;
        if let Some(report) = balance_kernels(records, groups, &keep, est, config)? {
            out.push(PartBalance { part, report });
        }
    }
    Ok(out)
}

fn naive(a: &Analysis) -> KernelSet<'_> {
    KernelSet {
        program: &a.program,
        host: &a.host,
    }
}

/// Transforms and rewrites the host for `plan` without balancing.
fn lower(
    a: &Analysis,
    plan: &PipelinePlan,
    config: &Config,
    part: &PartitionPlan,
) -> Result<(Transformed, HostArtifacts)> {
    let t = apply_plan(a, plan, config)?;
    let h = rewrite_host(a, plan, &t, part, None)?;
    Ok((t, h))
}

/// Picks, edge by edge, the remap variant with the fewest blocked steps in a
/// fair-mode run. Ties keep the earlier variant; failures keep the default.
pub fn tune_remaps(a: &Analysis, plan: &mut PipelinePlan, config: &Config) -> Vec<RemapTrial> {
    let mut trials = Vec::new();
    let part = PartitionPlan::unsplit(a.dfg.kernels());
    let opts = SimOptions::new(Mode::Fair, 0);
    for i in 0..plan.edges.len() {
        let e = &plan.edges[i];
        if e.decision != Decision::GlobalMemCke || e.remap_variants.len() < 2 {
            continue;
        }
        let mut best: Option<(u64, RemapVariant)> = None;
        let mut local = Vec::new();
        for v in e.remap_variants.clone() {
            plan.edges[i].remap = v;
            let blocked = lower(a, plan, config, &part)
                .and_then(|(t, h)| interpret(&t.program, &h.model, &opts))
                .ok()
                .map(|o| o.blocked_steps);
            if let Some(b) = blocked {
                if best.is_none_or(|(x, _)| b < x) {
                    best = Some((b, v));
                }
            }
            local.push(RemapTrial {
                edge: plan.edges[i].key(),
                variant: v,
                blocked_steps: blocked,
                chosen: false,
            });
        }
        let default = plan.edges[i].remap_variants[0];
        let pick = best.map_or(default, |(_, v)| v);
        plan.edges[i].remap = pick;
        for mut t in local {
            t.chosen = t.variant == pick;
            trials.push(t);
        }
    }
    trials
}

/// Runs plan, transform, balance, split, host rewrite and check in order.
pub fn optimize(
    a: &Analysis,
    profiles: &Profiles,
    config: &Config,
    est: &dyn Estimator,
    scan: Option<&ScanInfo>,
    opts: &OptimizeOptions,
) -> Result<Optimized> {
    let mut plan = a.plan(profiles, config)?;
    let remap_trials = if opts.tune_remap {
        tune_remaps(a, &mut plan, config)
    } else {
        Vec::new()
    };
    let mut t = apply_plan(a, &plan, config)?;

    let (records, groups) = balance_inputs(&plan, &t, profiles)?;
    let all = balance_kernels(&records, &groups, &|_| true, est, config)?;
    let coresident = all
        .map(|report| vec![PartBalance { part: 1, report }])
        .unwrap_or_default();
    let problem = split_problem(a, &plan, profiles, est, &unified_factors(&coresident))?;
    let partition = partition(&problem, config)?;

    let edits = HostEdits::build(a, &plan, &t, &partition)?;
    let balance = if partition.decision == SplitDecision::Split {
        balance_parts(&records, &groups, &edits, &partition, est, config)?
    } else {
        coresident
    };
    attach_factors(
        &mut t,
        &decompositions(&records, &unified_factors(&balance))?,
    );

    let host = rewrite_host(a, &plan, &t, &partition, scan)?;
    let nparts = if partition.decision == SplitDecision::Split {
        2
    } else {
        1
    };
    let parts = (1..=nparts)
        .map(|p| part_program(&t.program, &edits, p))
        .collect();

    let mut checks = Vec::new();
    for mode in [Mode::Fair, Mode::Adversarial] {
        for seed in 0..opts.check_seeds {
            let transformed = KernelSet {
                program: &t.program,
                host: &host.model,
            };
            checks.push(check_equivalence(
                naive(a),
                transformed,
                &SimOptions::new(mode, seed),
                config.tolerance,
            )?);
        }
    }

    Ok(Optimized {
        plan,
        transformed: t,
        balance,
        partition,
        host,
        parts,
        remap_trials,
        checks,
    })
}

impl Optimized {
    pub fn equivalent(&self) -> bool {
        self.checks.iter().all(|c| c.equal)
    }

    /// Human-readable summary of every stage.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str("== plan ==\n");
        s.push_str(&self.plan.to_string());
        if !self.remap_trials.is_empty() {
            s.push_str("== remap trials ==\n");
            for r in &self.remap_trials {
                let b = r
                    .blocked_steps
                    .map_or("failed".to_string(), |b| b.to_string());
                let mark = if r.chosen { " *" } else { "" };
                s.push_str(&format!(
                    "{} {} blocked={b}{mark}\n",
                    r.edge,
                    r.variant.label()
                ));
            }
        }
        s.push_str("== balance ==\n");
        for b in &self.balance {
            s.push_str(&format!("part {} ({:?})\n", b.part, b.report.method));
            for k in &b.report.assignment.kernels {
                let d = k.decomposition;
                s.push_str(&format!(
                    "  {:<32} n_uni={:<3} unroll={} simd={} cu={} time={:.3}ms eru={:.3}\n",
                    k.kernel,
                    k.n_uni,
                    d.unroll,
                    d.simd,
                    d.cu,
                    k.time_ms,
                    crate::balance::compute_eru(&k.estimate)
                ));
            }
        }
        s.push_str("== split ==\n");
        s.push_str(&self.partition.to_string());
        s.push_str("\n== check ==\n");
        if self.checks.is_empty() {
            s.push_str("skipped\n");
        }
        for c in &self.checks {
            s.push_str(&format!(
                "{:?} seed {}: {}\n",
                c.mode,
                c.seed,
                if c.equal { "equal" } else { "DIFFERENT" }
            ));
        }
        s
    }

    /// Writes every artifact into `dir`; each file is written atomically.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("plan.toml"), &self.plan.to_toml()?)?;
        if self.parts.len() == 1 {
            write_atomic(&dir.join("kernels.cl"), &self.parts[0].to_string())?;
        } else {
            for (i, p) in self.parts.iter().enumerate() {
                write_atomic(
                    &dir.join(format!("kernels_part{}.cl", i + 1)),
                    &p.to_string(),
                )?;
            }
        }
        write_atomic(
            &dir.join("balance.json"),
            &(serde_json::to_string_pretty(&self.balance)? + "\n"),
        )?;
        write_atomic(&dir.join("partition.toml"), &self.partition.to_toml()?)?;
        self.host.write(dir)?;
        let checks: String = self
            .checks
            .iter()
            .map(|c| c.to_text())
            .collect::<Vec<_>>()
            .join("\n");
        write_atomic(&dir.join("check.txt"), &checks)?;
        write_atomic(&dir.join("report.txt"), &self.report())
    }
}
