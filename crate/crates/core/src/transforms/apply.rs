//! Applies every pipelined edge of a plan to the program.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{
    apply_id_remap, fuse_kernels, to_channels, to_global_mem_cke, AuxBuffer, ChannelSpec, Emitted,
    FlagSpec, Site,
};
use crate::config::Config;
use crate::dependence::DependenceRelation;
use crate::error::{Error, Result};
use crate::flow::Analysis;
use crate::frontend::KernelProgram;
use crate::host::Arg;
use crate::planner::{Decision, PipelinePlan, RemapVariant};

/// What the host should enqueue in place of one DFG node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRewrite {
    pub node: usize,
    /// Kernel to enqueue; `None` when the node was merged into another one.
    pub kernel: Option<String>,
    pub args: Vec<Arg>,
}

/// Result of applying a plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transformed {
    pub program: KernelProgram,
    pub nodes: Vec<NodeRewrite>,
    pub aux: Vec<AuxBuffer>,
    pub channels: Vec<ChannelSpec>,
    pub flags: Vec<FlagSpec>,
    /// Remap variant applied per consumer kernel.
    pub remaps: BTreeMap<String, RemapVariant>,
}

impl Transformed {
    pub fn node(&self, id: usize) -> Option<&NodeRewrite> {
        self.nodes.iter().find(|n| n.node == id)
    }
}

fn relation(a: &Analysis, p: usize, c: usize) -> Result<&DependenceRelation> {
    a.relations
        .iter()
        .find(|r| r.producer_node == p && r.consumer_node == c)
        .map(|r| &r.relation)
        .ok_or_else(|| Error::Precondition(format!("no relation for nodes {p} -> {c}")))
}

/// Rewrites the kernels of `a` according to `plan`.
///
/// Remap variants of the plan are applied last, after all flags and waits are
/// in place, so both use the remapped ids.
pub fn apply_plan(a: &Analysis, plan: &PipelinePlan, config: &Config) -> Result<Transformed> {
    let mut cur: Vec<Option<Emitted>> = a
        .dfg
        .nodes
        .iter()
        .map(|n| {
            let unit = a
                .program
                .kernel(&n.kernel)
                .ok_or_else(|| Error::UnknownKernel(n.kernel.clone()))?;
            Ok(Some(Emitted {
                unit: unit.clone(),
                args: n.args.clone(),
            }))
        })
        .collect::<Result<_>>()?;
    let buffer_len: BTreeMap<String, u64> = a
        .host
        .buffers()
        .into_iter()
        .map(|b| (b.name, b.len))
        .collect();
    let mut aux = Vec::new();
    let mut channels = Vec::new();
    let mut flags = Vec::new();
    let mut pending_remap = Vec::new();

    for e in plan.pipelined() {
        let (p, c) = (e.producer_node, e.consumer_node);
        let rel = relation(a, p, c)?;
        let (Some(pe), Some(ce)) = (cur[p].clone(), cur[c].clone()) else {
            return Err(Error::Precondition(format!(
                "{} touches a kernel that was already merged",
                e.key()
            )));
        };
        let (pl, cl) = (&a.dfg.nodes[p].launch, &a.dfg.nodes[c].launch);
        let ps = Site {
            unit: &pe.unit,
            args: &pe.args,
            launch: pl,
        };
        let cs = Site {
            unit: &ce.unit,
            args: &ce.args,
            launch: cl,
        };
        match e.decision {
            Decision::Fuse => {
                let eliminate: Vec<String> = e
                    .buffers
                    .iter()
                    .filter(|b| !e.live_out.contains(b))
                    .cloned()
                    .collect();
                cur[p] = Some(fuse_kernels(ps, cs, &eliminate)?);
                cur[c] = None;
            }
            Decision::Channel => {
                let (np, nc, specs) = to_channels(ps, cs, rel, config.channel_depth, &e.live_out)?;
                cur[p] = Some(np);
                cur[c] = Some(nc);
                channels.extend(specs);
            }
            Decision::GlobalMemCke => {
                let (np, nc, bufs, flag) = to_global_mem_cke(ps, cs, rel, &buffer_len)?;
                cur[p] = Some(np);
                cur[c] = Some(nc);
                aux.extend(bufs);
                flags.push(flag);
                pending_remap.push((c, rel, e.remap));
            }
            Decision::GlobalSync => unreachable!(),
        }
    }

    let mut remaps = BTreeMap::new();
    for (c, rel, variant) in pending_remap {
        let ce = cur[c]
            .clone()
            .expect("global-memory consumers are never merged");
        // Reordering the consumer would break the FIFO order of its channels.
        let streams = channels
            .iter()
            .any(|s| s.writer == ce.unit.name || s.reader == ce.unit.name);
        let variant = if streams {
            RemapVariant::NoRemap
        } else {
            variant
        };
        let site = Site {
            unit: &ce.unit,
            args: &ce.args,
            launch: &a.dfg.nodes[c].launch,
        };
        let (nc, tables) = apply_id_remap(site, rel, variant, config.idqueue_cap)?;
        remaps.insert(nc.unit.name.clone(), variant);
        cur[c] = Some(nc);
        aux.extend(tables);
    }

    let mut program = KernelProgram {
        channels: channels.iter().map(ChannelSpec::decl).collect(),
        kernels: Vec::new(),
    };
    let mut nodes = Vec::new();
    let mut replaced: BTreeMap<String, Option<usize>> = BTreeMap::new();
    for (i, n) in a.dfg.nodes.iter().enumerate() {
        match &cur[i] {
            Some(e) => {
                replaced.entry(n.kernel.clone()).or_insert(Some(i));
                nodes.push(NodeRewrite {
                    node: i,
                    kernel: Some(e.unit.name.clone()),
                    args: e.args.clone(),
                });
            }
            None => {
                replaced.entry(n.kernel.clone()).or_insert(None);
                nodes.push(NodeRewrite {
                    node: i,
                    kernel: None,
                    args: Vec::new(),
                });
            }
        }
    }
    for k in &a.program.kernels {
        match replaced.get(&k.name) {
            Some(Some(i)) => program.kernels.push(cur[*i].as_ref().unwrap().unit.clone()),
            Some(None) => {}
            None => program.kernels.push(k.clone()),
        }
    }
    Ok(Transformed {
        program,
        nodes,
        aux,
        channels,
        flags,
        remaps,
    })
}
