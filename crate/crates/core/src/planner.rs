//! Per-edge choice of the mechanism that lets a producer and consumer overlap.
//!
//! Edges are examined in host order. Anything that cannot be proven safe
//! degrades along fusion, channels, global-memory flags and finally a global
//! synchronization point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::balance::Profiles;
use crate::config::{Config, Granularity};
use crate::dependence::{build_id_queue, node_ctx, DepClass, DependenceRelation, PairRelation};
use crate::error::{Error, Result};
use crate::frontend::{KernelMode, KernelProgram};
use crate::host::{EdgeKind, HostModel, HostOp, KernelDfg};
use crate::transforms::legality::{channel_check, fusion_check, global_mem_check, Launched};
use crate::transforms::liveness::is_live_out;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    GlobalSync,
    Fuse,
    Channel,
    GlobalMemCke,
}

impl Decision {
    pub fn is_pipelined(self) -> bool {
        self != Decision::GlobalSync
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemapVariant {
    NoRemap,
    GroupRemap,
    GroupAndItemRemap,
}

impl RemapVariant {
    pub const ALL: [RemapVariant; 3] = [
        RemapVariant::NoRemap,
        RemapVariant::GroupRemap,
        RemapVariant::GroupAndItemRemap,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RemapVariant::NoRemap => "no_remap",
            RemapVariant::GroupRemap => "group_remap",
            RemapVariant::GroupAndItemRemap => "group_and_item_remap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePlan {
    pub producer: String,
    pub consumer: String,
    pub producer_node: usize,
    pub consumer_node: usize,
    pub buffers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub klass: Option<DepClass>,
    pub decision: Decision,
    /// Remap variants worth generating (global-memory edges only).
    #[serde(default)]
    pub remap_variants: Vec<RemapVariant>,
    /// Variant used when emitting code.
    pub remap: RemapVariant,
    /// Shared buffers that must stay in global memory.
    #[serde(default)]
    pub live_out: Vec<String>,
    pub rationale: String,
}

impl EdgePlan {
    pub fn key(&self) -> String {
        format!("{}->{}", self.producer, self.consumer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant: Option<String>,
    #[serde(rename = "edge", default)]
    pub edges: Vec<EdgePlan>,
    /// Kernels linked by pipelined edges, in first-invocation order; singletons included.
    pub groups: Vec<Vec<String>>,
}

impl PipelinePlan {
    pub fn from_toml(text: &str) -> Result<PipelinePlan> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn edge(&self, producer: &str, consumer: &str) -> Option<&EdgePlan> {
        self.edges
            .iter()
            .find(|e| e.producer == producer && e.consumer == consumer)
    }

    pub fn pipelined(&self) -> impl Iterator<Item = &EdgePlan> {
        self.edges.iter().filter(|e| e.decision.is_pipelined())
    }

    /// A plan with every edge globally synchronized.
    pub fn is_trivial(&self) -> bool {
        self.pipelined().next().is_none()
    }
}

impl fmt::Display for PipelinePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.dominant {
            Some(k) => writeln!(f, "dominant kernel: {k}")?,
            None => writeln!(f, "dominant kernel: none")?,
        }
        for e in &self.edges {
            let klass = e.klass.map_or("-".to_string(), |k| format!("{k:?}"));
            write!(f, "{:<40} {:<12} {:?}", e.key(), klass, e.decision)?;
            if e.decision == Decision::GlobalMemCke {
                let v: Vec<_> = e.remap_variants.iter().map(|v| v.label()).collect();
                write!(f, " [{}] using {}", v.join(", "), e.remap.label())?;
            }
            writeln!(f, "\n    {}", e.rationale)?;
        }
        for g in &self.groups {
            writeln!(f, "group: {}", g.join(" | "))?;
        }
        Ok(())
    }
}

/// Kernel whose share of the total time exceeds `fraction`.
pub fn detect_dominant(times: &[(String, f64)], fraction: f64) -> Result<Option<String>> {
    let total: f64 = times.iter().map(|(_, t)| t).sum();
    if times.is_empty() || !(total > 0.0) {
        return Ok(None);
    }
    Ok(times
        .iter()
        .find(|(_, t)| t / total > fraction)
        .map(|(k, _)| k.clone()))
}

/// Executions of each node per iteration of its outermost host loop.
fn per_iteration_weight(dfg: &KernelDfg, node: usize) -> f64 {
    dfg.nodes[node]
        .loops
        .iter()
        .skip(1)
        .map(|l| {
            dfg.loop_region(l)
                .and_then(|r| r.trips.count())
                .unwrap_or(1) as f64
        })
        .product()
}

/// Weighted per-kernel times over one outermost iteration, in first-invocation order.
pub fn kernel_times(dfg: &KernelDfg, profiles: &Profiles) -> Result<Vec<(String, f64)>> {
    let kernels = dfg.kernels();
    let missing: Vec<&str> = kernels
        .iter()
        .filter(|k| profiles.get(k).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingProfile(missing.join(", ")));
    }
    let mut out: Vec<(String, f64)> = kernels.iter().map(|k| (k.clone(), 0.0)).collect();
    for n in &dfg.nodes {
        let t = profiles.get(&n.kernel).unwrap().exec_time_ms * per_iteration_weight(dfg, n.id);
        out.iter_mut().find(|(k, _)| k == &n.kernel).unwrap().1 += t;
    }
    Ok(out)
}

/// Host ops strictly between two enqueues that touch `buffers` on the host side.
fn host_touch_between(
    host: &HostModel,
    from: usize,
    to: usize,
    buffers: &BTreeSet<String>,
) -> bool {
    host.ops[from + 1..to].iter().any(|op| match op {
        HostOp::Read { buffer, .. } | HostOp::Write { buffer, .. } => buffers.contains(buffer),
        HostOp::LoopBegin { .. } | HostOp::LoopEnd | HostOp::Reprogram { .. } => true,
        _ => false,
    })
}

struct Ctx<'a> {
    dfg: &'a KernelDfg,
    program: &'a KernelProgram,
    host: &'a HostModel,
    profiles: &'a Profiles,
    config: &'a Config,
    sites: BTreeMap<&'a str, usize>,
}

fn sync(mut e: EdgePlan, why: impl Into<String>) -> EdgePlan {
    e.decision = Decision::GlobalSync;
    e.rationale = why.into();
    e
}

/// Applies the decision tree to every DFG edge.
pub fn plan_pipeline(
    dfg: &KernelDfg,
    program: &KernelProgram,
    host: &HostModel,
    relations: &[PairRelation],
    profiles: &Profiles,
    config: &Config,
) -> Result<PipelinePlan> {
    let times = kernel_times(dfg, profiles)?;
    let dominant = detect_dominant(&times, config.dominant_fraction)?;
    let mut sites: BTreeMap<&str, usize> = BTreeMap::new();
    for n in &dfg.nodes {
        *sites.entry(n.kernel.as_str()).or_default() += 1;
    }
    let cx = Ctx {
        dfg,
        program,
        host,
        profiles,
        config,
        sites,
    };
    let mut edges: Vec<EdgePlan> = Vec::new();
    for ((p, c), es) in dfg.edge_pairs() {
        let rel = relations
            .iter()
            .find(|r| r.producer_node == p && r.consumer_node == c)
            .map(|r| &r.relation);
        let base = EdgePlan {
            producer: dfg.nodes[p].kernel.clone(),
            consumer: dfg.nodes[c].kernel.clone(),
            producer_node: p,
            consumer_node: c,
            buffers: es.iter().map(|e| e.buffer.clone()).collect(),
            klass: rel.map(|r| r.klass),
            decision: Decision::GlobalSync,
            remap_variants: Vec::new(),
            remap: RemapVariant::NoRemap,
            live_out: Vec::new(),
            rationale: String::new(),
        };
        let e = if let Some(d) = &dominant {
            sync(
                base,
                format!("`{d}` dominates the execution time; pipelining cannot pay off"),
            )
        } else if es[0].kind == EdgeKind::Back {
            sync(base, "dependence is carried by a host loop")
        } else {
            decide(&cx, base, rel, &edges)?
        };
        edges.push(e);
    }
    let groups = pipeline_groups(dfg, &edges);
    Ok(PipelinePlan {
        dominant,
        edges,
        groups,
    })
}

fn decide(
    cx: &Ctx,
    mut e: EdgePlan,
    rel: Option<&DependenceRelation>,
    done: &[EdgePlan],
) -> Result<EdgePlan> {
    let (p, c) = (e.producer_node, e.consumer_node);
    let (pn, cn) = (&cx.dfg.nodes[p], &cx.dfg.nodes[c]);
    if cx.dfg.cpu_excluded.contains(&p) || cx.dfg.cpu_excluded.contains(&c) {
        return Ok(sync(e, "kernel input depends on host computation"));
    }
    if pn.loops != cn.loops {
        return Ok(sync(e, "edge crosses a host loop boundary"));
    }
    if c != p + 1 {
        return Ok(sync(e, "another kernel runs between producer and consumer"));
    }
    if cx.sites[pn.kernel.as_str()] > 1 || cx.sites[cn.kernel.as_str()] > 1 {
        return Ok(sync(e, "a kernel is invoked from more than one site"));
    }
    let touched: BTreeSet<String> = pn
        .reads
        .iter()
        .chain(&pn.writes)
        .chain(&cn.reads)
        .chain(&cn.writes)
        .cloned()
        .collect();
    if host_touch_between(cx.host, pn.op_index, cn.op_index, &touched) {
        return Ok(sync(e, "host code between the enqueues needs the buffers"));
    }
    let Some(rel) = rel else {
        return Ok(sync(e, "no dependence relation"));
    };
    if let Some(h) = &rel.hazard {
        return Ok(sync(e, format!("hazard: {h}")));
    }
    if rel.conservative {
        return Ok(sync(e, "dependence could not be analyzed exactly"));
    }
    let fused = |k: usize| {
        done.iter()
            .any(|d| d.decision == Decision::Fuse && (d.producer_node == k || d.consumer_node == k))
    };
    if fused(p) || fused(c) {
        return Ok(sync(e, "kernel already fused with a neighbour"));
    }
    let pu = cx
        .program
        .kernel(&pn.kernel)
        .ok_or_else(|| Error::UnknownKernel(pn.kernel.clone()))?;
    let cu = cx
        .program
        .kernel(&cn.kernel)
        .ok_or_else(|| Error::UnknownKernel(cn.kernel.clone()))?;
    let (pc, cc) = (
        node_ctx(cx.dfg, cx.program, p)?,
        node_ctx(cx.dfg, cx.program, c)?,
    );
    let pl = Launched { unit: pu, ctx: &pc };
    let cl = Launched { unit: cu, ctx: &cc };
    e.live_out = e
        .buffers
        .iter()
        .filter(|b| is_live_out(cx.host, cx.dfg, b, c))
        .cloned()
        .collect();
    let mut notes = Vec::new();
    match rel.klass {
        DepClass::ManyToFew | DepClass::ManyToMany => {
            return Ok(sync(
                e,
                format!("{:?} dependence needs a global synchronization", rel.klass),
            ));
        }
        DepClass::FewToFew => {
            let tp = cx.profiles.get(&pn.kernel).map_or(0.0, |r| r.exec_time_ms);
            let tc = cx.profiles.get(&cn.kernel).map_or(0.0, |r| r.exec_time_ms);
            let long = tp + tc > cx.config.fusion_time_threshold_ms;
            let pipelined_neighbour = done.iter().any(|d| {
                d.decision.is_pipelined()
                    && [d.producer_node, d.consumer_node]
                        .iter()
                        .any(|&k| k == p || k == c)
            });
            if long && !pipelined_neighbour {
                let eliminate: Vec<String> = e
                    .buffers
                    .iter()
                    .filter(|b| !e.live_out.contains(b))
                    .cloned()
                    .collect();
                match fusion_check(pl, cl, rel, &eliminate) {
                    Ok(()) => {
                        e.decision = Decision::Fuse;
                        e.rationale = format!(
                            "FewToFew, combined naive time {:.1} ms > {} ms threshold and fusion preconditions hold",
                            tp + tc,
                            cx.config.fusion_time_threshold_ms
                        );
                        return Ok(e);
                    }
                    Err(why) => notes.push(format!("fusion rejected: {why}")),
                }
            } else if long {
                notes.push("fusion skipped: kernel already pipelined with a neighbour".into());
            } else {
                notes.push(format!(
                    "combined naive time {:.1} ms <= {} ms threshold",
                    tp + tc,
                    cx.config.fusion_time_threshold_ms
                ));
            }
            match channel_check(pl, cl, rel) {
                Ok(()) => {
                    e.decision = Decision::Channel;
                    notes.push("write order matches read order; streaming through channels".into());
                    e.rationale = format!("FewToFew; {}", notes.join("; "));
                    return Ok(e);
                }
                Err(why) => notes.push(format!("channel rejected: {why}")),
            }
        }
        DepClass::FewToMany => {}
    }
    if done
        .iter()
        .any(|d| d.decision == Decision::GlobalMemCke && d.consumer_node == c)
    {
        return Ok(sync(
            e,
            "consumer already waits on another producer's flags",
        ));
    }
    match global_mem_check(pl, cl, rel) {
        Ok(()) => {
            e.decision = Decision::GlobalMemCke;
            e.remap_variants = vec![RemapVariant::NoRemap];
            if cu.mode == KernelMode::NdRange && rel.consumer_space.group_count() > 1 {
                match build_id_queue(rel, Granularity::WorkGroup, cx.config.idqueue_cap) {
                    Ok(_) => e
                        .remap_variants
                        .extend([RemapVariant::GroupRemap, RemapVariant::GroupAndItemRemap]),
                    Err(err) => notes.push(format!("id remapping unavailable: {err}")),
                }
            }
            notes.push("consumer spins on per-instance flags set after a fence".into());
            e.rationale = format!("{:?}; {}", rel.klass, notes.join("; "));
            Ok(e)
        }
        Err(why) => {
            notes.push(format!("global-memory overlap rejected: {why}"));
            Ok(sync(e, format!("{:?}; {}", rel.klass, notes.join("; "))))
        }
    }
}

/// Connected components of kernels joined by pipelined edges.
fn pipeline_groups(dfg: &KernelDfg, edges: &[EdgePlan]) -> Vec<Vec<String>> {
    let kernels = dfg.kernels();
    let idx: BTreeMap<&str, usize> = kernels
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..kernels.len()).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        parent[x] = r;
        r
    }
    for e in edges.iter().filter(|e| e.decision.is_pipelined()) {
        let (a, b) = (
            find(&mut parent, idx[e.producer.as_str()]),
            find(&mut parent, idx[e.consumer.as_str()]),
        );
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, k) in kernels.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(k.clone());
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(k, x)| (k.to_string(), *x)).collect()
    }

    #[test]
    fn dominant_threshold() {
        assert_eq!(
            detect_dominant(&t(&[("a", 95.8), ("b", 4.2)]), 0.95).unwrap(),
            Some("a".into())
        );
        assert_eq!(
            detect_dominant(&t(&[("a", 50.0), ("b", 50.0)]), 0.95).unwrap(),
            None
        );
        assert_eq!(
            detect_dominant(&t(&[("a", 3.0)]), 0.95).unwrap(),
            Some("a".into())
        );
    }
}
