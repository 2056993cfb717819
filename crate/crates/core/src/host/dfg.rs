//! Kernel data-flow graph derived from a host model.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::model::{Arg, HostModel, HostOp, Launch, Trips};
use crate::error::{Error, Result};
use crate::frontend::{extract_accesses, Attribute, KernelProgram, KernelUnit};

/// One kernel invocation site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DfgNode {
    pub id: usize,
    pub kernel: String,
    pub op_index: usize,
    pub queue: u32,
    pub launch: Launch,
    pub args: Vec<Arg>,
    /// Enclosing host loops, outermost first.
    pub loops: Vec<String>,
    /// Device buffers read / written through the bound arguments.
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Forward,
    /// Producer later in program order; the dependence is carried by a host loop.
    Back,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DfgEdge {
    pub producer: usize,
    pub consumer: usize,
    pub buffer: String,
    pub kind: EdgeKind,
    /// A finish call separates producer and consumer.
    pub synced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopRegion {
    pub id: String,
    pub trips: Trips,
    pub nodes: Vec<usize>,
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KernelDfg {
    pub nodes: Vec<DfgNode>,
    pub edges: Vec<DfgEdge>,
    pub loops: Vec<LoopRegion>,
    /// Op indices of finish calls.
    pub sync_points: Vec<usize>,
    pub cpu_excluded: BTreeSet<usize>,
}

impl KernelDfg {
    pub fn node_by_kernel(&self, kernel: &str) -> Option<&DfgNode> {
        self.nodes.iter().find(|n| n.kernel == kernel)
    }

    pub fn loop_region(&self, id: &str) -> Option<&LoopRegion> {
        self.loops.iter().find(|l| l.id == id)
    }

    /// Distinct kernel names in first-invocation order.
    pub fn kernels(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.nodes
            .iter()
            .filter(|n| seen.insert(n.kernel.clone()))
            .map(|n| n.kernel.clone())
            .collect()
    }

    /// Edges grouped by (producer, consumer) pair, in first-seen order.
    pub fn edge_pairs(&self) -> Vec<((usize, usize), Vec<&DfgEdge>)> {
        let mut order = Vec::new();
        let mut map: BTreeMap<(usize, usize), Vec<&DfgEdge>> = BTreeMap::new();
        for e in &self.edges {
            let key = (e.producer, e.consumer);
            if !map.contains_key(&key) {
                order.push(key);
            }
            map.entry(key).or_default().push(e);
        }
        order
            .into_iter()
            .map(|k| (k, map.remove(&k).unwrap()))
            .collect()
    }
}

pub(crate) fn reqd_size(unit: &KernelUnit) -> Option<&[u32]> {
    unit.attributes
        .iter()
        .chain(unit.stripped.iter())
        .find_map(|a| match a {
            Attribute::ReqdWorkGroupSize(v) => Some(v.as_slice()),
            _ => None,
        })
}

/// Builds nodes and edges; every invoked kernel must be present in `program`.
pub fn build_dfg(host: &HostModel, program: &KernelProgram) -> Result<KernelDfg> {
    let mut dfg = KernelDfg::default();
    let trips = host.loop_trips();
    let mut stack: Vec<String> = Vec::new();
    let mut regions: BTreeMap<String, LoopRegion> = BTreeMap::new();
    let mut region_order = Vec::new();
    let mut access_cache = BTreeMap::new();
    for (i, op) in host.ops.iter().enumerate() {
        match op {
            HostOp::LoopBegin { id, .. } => {
                region_order.push(id.clone());
                regions.insert(
                    id.clone(),
                    LoopRegion {
                        id: id.clone(),
                        trips: trips[id].clone(),
                        nodes: Vec::new(),
                        parent: stack.last().cloned(),
                    },
                );
                stack.push(id.clone());
            }
            HostOp::LoopEnd => {
                stack.pop();
            }
            HostOp::Finish { .. } => dfg.sync_points.push(i),
            HostOp::Enqueue(e) => {
                let unit = program
                    .kernel(&e.kernel)
                    .ok_or_else(|| Error::UnknownKernel(e.kernel.clone()))?;
                if unit.params.len() != e.args.len() {
                    return Err(Error::Host(format!(
                        "kernel `{}` takes {} args but the host binds {}",
                        e.kernel,
                        unit.params.len(),
                        e.args.len()
                    )));
                }
                let acc = access_cache
                    .entry(e.kernel.clone())
                    .or_insert_with(|| extract_accesses(unit));
                let mut reads = BTreeSet::new();
                let mut writes = BTreeSet::new();
                for (p, a) in unit.params.iter().zip(&e.args) {
                    if let (true, Arg::Buffer(b)) = (p.kind.is_buffer(), a) {
                        if acc.reads_buffer(&p.name) {
                            reads.insert(b.clone());
                        }
                        if acc.writes_buffer(&p.name) {
                            writes.insert(b.clone());
                        }
                    }
                }
                let id = dfg.nodes.len();
                for l in &stack {
                    regions.get_mut(l).unwrap().nodes.push(id);
                }
                dfg.nodes.push(DfgNode {
                    id,
                    kernel: e.kernel.clone(),
                    op_index: i,
                    queue: e.queue,
                    launch: e.launch(crate::host::dfg::reqd_size(unit)),
                    args: e.args.clone(),
                    loops: stack.clone(),
                    reads,
                    writes,
                });
            }
            _ => {}
        }
    }
    dfg.loops = region_order
        .into_iter()
        .map(|id| regions.remove(&id).unwrap())
        .collect();

    let finish_between = |a: usize, b: usize| dfg.sync_points.iter().any(|&s| a < s && s < b);
    let mut edges = Vec::new();
    for p in &dfg.nodes {
        for c in &dfg.nodes {
            if p.id == c.id {
                continue;
            }
            let shared_loop = p.loops.iter().any(|l| c.loops.contains(l));
            let kind = if p.id < c.id {
                EdgeKind::Forward
            } else if shared_loop {
                EdgeKind::Back
            } else {
                continue;
            };
            for b in p.writes.intersection(&c.reads) {
                let synced = match kind {
                    EdgeKind::Forward => finish_between(p.op_index, c.op_index),
                    EdgeKind::Back => true,
                };
                edges.push(DfgEdge {
                    producer: p.id,
                    consumer: c.id,
                    buffer: b.clone(),
                    kind,
                    synced,
                });
            }
        }
    }
    edges.sort_by_key(|e| (e.kind == EdgeKind::Back, e.producer, e.consumer));
    dfg.edges = edges;
    Ok(dfg)
}

/// Marks nodes whose inputs pass through host memory or host computation.
pub fn exclude_cpu_dependent(dfg: &KernelDfg, host: &HostModel) -> KernelDfg {
    let mut out = dfg.clone();
    for n in &dfg.nodes {
        let cpu_arg = n.args.iter().any(|a| {
            matches!(
                a,
                Arg::HostVar {
                    from_read: true,
                    ..
                } | Arg::Unknown(_)
            )
        });
        if cpu_arg {
            out.cpu_excluded.insert(n.id);
        }
    }
    for e in &dfg.edges {
        if e.kind != EdgeKind::Forward {
            continue;
        }
        let (p, c) = (&dfg.nodes[e.producer], &dfg.nodes[e.consumer]);
        let host_write = host.ops[p.op_index + 1..c.op_index]
            .iter()
            .any(|op| matches!(op, HostOp::Write { buffer, .. } if *buffer == e.buffer));
        if host_write {
            out.cpu_excluded.insert(c.id);
        }
    }
    out
}
