//! Two-way bitstream partitioning and the co-residence decision.
//!
//! Kernels are split into at most two bitstreams when reprogramming the
//! device between them is cheaper than sharing the chip. Partitions never
//! break a pipeline and keep host loops together unless one loop iteration
//! is long enough to amortize a reprogramming.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::balance::{compute_eru, Estimator, Profiles, ResourceVector};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::host::{HostModel, KernelDfg};
use crate::planner::PipelinePlan;

/// Largest kernel count searched exhaustively.
pub const MAX_KERNELS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitKernel {
    pub name: String,
    /// Total time over the whole run (ms).
    pub time_ms: f64,
    /// Estimated usage at the co-resident factor.
    pub resources: ResourceVector,
}

/// A host loop whose kernels stay together unless an iteration is long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSpan {
    pub id: String,
    pub kernels: BTreeSet<String>,
    pub per_iteration_ms: f64,
}

/// A device buffer shared by several kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedBuffer {
    pub name: String,
    pub bytes: u64,
    pub writers: BTreeSet<String>,
    pub readers: BTreeSet<String>,
}

/// Everything the partition search looks at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProblem {
    /// Kernels in first-invocation order.
    pub kernels: Vec<SplitKernel>,
    pub loops: Vec<LoopSpan>,
    /// Pipelines that must not be broken.
    pub pipelines: Vec<BTreeSet<String>>,
    pub buffers: Vec<SharedBuffer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitDecision {
    CoReside,
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// Part holding the first kernel; all kernels when co-resident.
    pub part1: Vec<String>,
    pub part2: Vec<String>,
    pub t1: f64,
    pub t2: f64,
    pub eru1: f64,
    pub eru2: f64,
    pub reprogram_ms: f64,
    pub transfer_ms: f64,
    /// Buffers copied through the host at a bitstream switch.
    pub transfers: Vec<String>,
    pub decision: SplitDecision,
    pub objective: f64,
}

impl PartitionPlan {
    /// Every kernel in one bitstream.
    pub fn coresident(p: &SplitProblem, config: &Config) -> PartitionPlan {
        let all: Vec<String> = p.kernels.iter().map(|k| k.name.clone()).collect();
        let mut plan = evaluate(p, &all, config);
        plan.decision = SplitDecision::CoReside;
        plan
    }

    /// Single-bitstream plan over `kernels` without cost figures.
    pub fn unsplit(kernels: Vec<String>) -> PartitionPlan {
        PartitionPlan {
            part1: kernels,
            part2: Vec::new(),
            t1: 0.0,
            t2: 0.0,
            eru1: 0.0,
            eru2: 0.0,
            reprogram_ms: 0.0,
            transfer_ms: 0.0,
            transfers: Vec::new(),
            decision: SplitDecision::CoReside,
            objective: 0.0,
        }
    }

    pub fn part_of(&self, kernel: &str) -> u32 {
        if self.decision == SplitDecision::Split && self.part2.iter().any(|k| k == kernel) {
            2
        } else {
            1
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<PartitionPlan> {
        Ok(toml::from_str(text)?)
    }
}

impl fmt::Display for PartitionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "part1: {}", self.part1.join(", "))?;
        writeln!(f, "part2: {}", self.part2.join(", "))?;
        writeln!(f, "T1 = {:.3} ms, ERU1 = {:.4}", self.t1, self.eru1)?;
        writeln!(f, "T2 = {:.3} ms, ERU2 = {:.4}", self.t2, self.eru2)?;
        writeln!(
            f,
            "Tr = {:.3} ms, Td = {:.3} ms",
            self.reprogram_ms, self.transfer_ms
        )?;
        let lhs = self.t1 + self.t2;
        let rhs = self.t1 * self.eru1 + self.t2 * self.eru2 + self.reprogram_ms + self.transfer_ms;
        let op = if lhs < rhs { "<" } else { ">=" };
        writeln!(
            f,
            "co-resident {lhs:.3} {op} split {rhs:.3} (T1*ERU1 + T2*ERU2 + Tr + Td)"
        )?;
        writeln!(f, "objective |T1*ERU1 - T2*ERU2| = {:.3}", self.objective)?;
        writeln!(f, "decision: {:?}", self.decision)
    }
}

/// Times every enclosing host loop's trip count; unknown counts weigh 1.
fn node_weight(dfg: &KernelDfg, loops: &[String]) -> f64 {
    loops
        .iter()
        .map(|l| {
            dfg.loop_region(l)
                .and_then(|r| r.trips.count())
                .unwrap_or(1) as f64
        })
        .product()
}

impl SplitProblem {
    /// Collects kernel times, co-resident resource estimates and constraints.
    ///
    /// `factors` holds the unified factor of each kernel when all of them
    /// share the device; missing kernels run at factor 1.
    pub fn build(
        dfg: &KernelDfg,
        host: &HostModel,
        plan: &PipelinePlan,
        profiles: &Profiles,
        est: &dyn Estimator,
        factors: &BTreeMap<String, u32>,
    ) -> Result<SplitProblem> {
        let names = dfg.kernels();
        let mut kernels = Vec::new();
        for k in &names {
            let prof = profiles
                .get(k)
                .ok_or_else(|| Error::MissingProfile(k.clone()))?;
            let time_ms = dfg
                .nodes
                .iter()
                .filter(|n| &n.kernel == k)
                .map(|n| prof.exec_time_ms * node_weight(dfg, &n.loops))
                .sum();
            kernels.push(SplitKernel {
                name: k.clone(),
                time_ms,
                resources: est.estimate(prof, factors.get(k).copied().unwrap_or(1))?,
            });
        }
        let loops = dfg
            .loops
            .iter()
            .map(|r| {
                let mut per_iteration_ms = 0.0;
                let mut members = BTreeSet::new();
                for n in &dfg.nodes {
                    if let Some(pos) = n.loops.iter().position(|l| l == &r.id) {
                        members.insert(n.kernel.clone());
                        let exec = profiles.get(&n.kernel).map_or(0.0, |p| p.exec_time_ms);
                        per_iteration_ms += exec * node_weight(dfg, &n.loops[pos + 1..]);
                    }
                }
                LoopSpan {
                    id: r.id.clone(),
                    kernels: members,
                    per_iteration_ms,
                }
            })
            .filter(|l| l.kernels.len() > 1)
            .collect();
        let pipelines = plan
            .groups
            .iter()
            .filter(|g| g.len() > 1)
            .map(|g| g.iter().cloned().collect())
            .collect();
        let mut buffers: BTreeMap<String, SharedBuffer> = BTreeMap::new();
        for n in &dfg.nodes {
            for (set, writer) in [(&n.reads, false), (&n.writes, true)] {
                for b in set {
                    let info = host
                        .buffer(b)
                        .ok_or_else(|| Error::Host(format!("unknown buffer `{b}`")))?;
                    let e = buffers.entry(b.clone()).or_insert_with(|| SharedBuffer {
                        name: b.clone(),
                        bytes: info.bytes(),
                        writers: BTreeSet::new(),
                        readers: BTreeSet::new(),
                    });
                    if writer {
                        e.writers.insert(n.kernel.clone());
                    } else {
                        e.readers.insert(n.kernel.clone());
                    }
                }
            }
        }
        Ok(SplitProblem {
            kernels,
            loops,
            pipelines,
            buffers: buffers.into_values().collect(),
        })
    }
}

/// Whether `part1` (with the rest as part 2) satisfies every criterion.
pub fn is_valid_partition(p: &SplitProblem, part1: &BTreeSet<String>, config: &Config) -> bool {
    let n1 = p.kernels.iter().filter(|k| part1.contains(&k.name)).count();
    if n1 == 0 || n1 == p.kernels.len() {
        return false;
    }
    let crossed = |set: &BTreeSet<String>| {
        let inside = set.iter().filter(|k| part1.contains(*k)).count();
        inside > 0 && inside < set.len()
    };
    let limit = config.loop_split_ratio * config.reprogram_ms;
    p.pipelines.iter().all(|g| !crossed(g))
        && p.loops
            .iter()
            .all(|l| !crossed(&l.kernels) || l.per_iteration_ms > limit)
}

/// Fills in times, utilizations and costs for the split with `part1` first.
fn evaluate(p: &SplitProblem, part1: &[String], config: &Config) -> PartitionPlan {
    let in1: BTreeSet<&str> = part1.iter().map(String::as_str).collect();
    let (mut k1, mut k2) = (Vec::new(), Vec::new());
    for k in &p.kernels {
        if in1.contains(k.name.as_str()) {
            k1.push(k);
        } else {
            k2.push(k);
        }
    }
    let time = |ks: &[&SplitKernel]| ks.iter().fold(0.0, |t, k| t + k.time_ms);
    let eru = |ks: &[&SplitKernel]| {
        if ks.is_empty() {
            0.0
        } else {
            compute_eru(&ResourceVector::sum(ks.iter().map(|k| &k.resources)))
        }
    };
    let (t1, t2, eru1, eru2) = (time(&k1), time(&k2), eru(&k1), eru(&k2));
    // A buffer produced on one side and used on the other goes to the host and back.
    let transfers: Vec<&SharedBuffer> = if k2.is_empty() {
        Vec::new()
    } else {
        p.buffers
            .iter()
            .filter(|b| {
                let side = |k: &String| in1.contains(k.as_str());
                b.writers.iter().any(|w| {
                    b.writers
                        .iter()
                        .chain(&b.readers)
                        .any(|u| side(u) != side(w))
                })
            })
            .collect()
    };
    let bytes: u64 = transfers.iter().map(|b| 2 * b.bytes).sum();
    let transfer_ms = bytes as f64 / (config.link_bandwidth_mb_s * 1e6) * 1e3;
    let mut plan = PartitionPlan {
        part1: k1.iter().map(|k| k.name.clone()).collect(),
        part2: k2.iter().map(|k| k.name.clone()).collect(),
        t1,
        t2,
        eru1,
        eru2,
        reprogram_ms: config.reprogram_ms,
        transfer_ms,
        transfers: transfers.iter().map(|b| b.name.clone()).collect(),
        decision: SplitDecision::CoReside,
        objective: (t1 * eru1 - t2 * eru2).abs(),
    };
    plan.decision = coresidence_decision(&plan);
    plan
}

/// All valid two-way splits; part 1 always holds the first kernel.
pub fn enumerate_bipartitions(p: &SplitProblem, config: &Config) -> Result<Vec<PartitionPlan>> {
    let n = p.kernels.len();
    if n > MAX_KERNELS {
        return Err(Error::Precondition(format!(
            "{n} kernels exceed the exhaustive limit of {MAX_KERNELS}"
        )));
    }
    if n < 2 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    // Bit i set: kernel i + 1 joins part 1 with kernel 0.
    for mask in 0u32..(1 << (n - 1)) {
        let part1: Vec<String> = std::iter::once(0)
            .chain((1..n).filter(|i| mask >> (i - 1) & 1 == 1))
            .map(|i| p.kernels[i].name.clone())
            .collect();
        let set: BTreeSet<String> = part1.iter().cloned().collect();
        if is_valid_partition(p, &set, config) {
            out.push(evaluate(p, &part1, config));
        }
    }
    Ok(out)
}

fn sorted_names(v: &[String]) -> Vec<&str> {
    let mut s: Vec<&str> = v.iter().map(String::as_str).collect();
    s.sort_unstable();
    s
}

/// Candidate with the smallest objective; ties go to the lexicographically
/// smallest part 1. An empty list yields the co-resident plan.
pub fn choose_partition(
    candidates: &[PartitionPlan],
    p: &SplitProblem,
    config: &Config,
) -> PartitionPlan {
    candidates
        .iter()
        .min_by(|a, b| {
            a.objective
                .total_cmp(&b.objective)
                .then_with(|| sorted_names(&a.part1).cmp(&sorted_names(&b.part1)))
        })
        .cloned()
        .unwrap_or_else(|| PartitionPlan::coresident(p, config))
}

/// Keep one bitstream iff running both parts together is faster than
/// running each alone (at its utilization-scaled time) plus the switch costs.
pub fn coresidence_decision(p: &PartitionPlan) -> SplitDecision {
    let together = p.t1 + p.t2;
    let apart = p.t1 * p.eru1 + p.t2 * p.eru2 + p.reprogram_ms + p.transfer_ms;
    if together < apart {
        SplitDecision::CoReside
    } else {
        SplitDecision::Split
    }
}

/// Enumerates, chooses and decides in one go.
pub fn partition(p: &SplitProblem, config: &Config) -> Result<PartitionPlan> {
    let candidates = enumerate_bipartitions(p, config)?;
    Ok(choose_partition(&candidates, p, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(t1: f64, t2: f64, e1: f64, e2: f64, tr: f64, td: f64) -> PartitionPlan {
        PartitionPlan {
            part1: vec!["a".into()],
            part2: vec!["b".into()],
            t1,
            t2,
            eru1: e1,
            eru2: e2,
            reprogram_ms: tr,
            transfer_ms: td,
            transfers: Vec::new(),
            decision: SplitDecision::CoReside,
            objective: 0.0,
        }
    }

    #[test]
    fn decision_examples() {
        assert_eq!(
            coresidence_decision(&plan(500.0, 500.0, 0.4, 0.4, 1400.0, 100.0)),
            SplitDecision::CoReside
        );
        assert_eq!(
            coresidence_decision(&plan(10000.0, 40000.0, 0.3, 0.3, 1400.0, 100.0)),
            SplitDecision::Split
        );
        assert_eq!(
            coresidence_decision(&plan(1e9, 3e9, 1.0, 1.0, 1400.0, 0.0)),
            SplitDecision::CoReside
        );
    }
}
