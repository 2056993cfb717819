//! Host-side rewriting for a transformed kernel set.
//!
//! [`HostEdits`] records every change keyed by the original host op index.
//! It drives both the rewritten [`HostModel`] (used by the interpreter) and
//! the spliced C source.

mod splice;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::Analysis;
use crate::frontend::KernelProgram;
use crate::host::{Arg, Enqueue, HostModel, HostOp, Init, ScanInfo};
use crate::io::{write_atomic, write_bytes_atomic};
use crate::planner::{Decision, PipelinePlan};
use crate::split::{PartitionPlan, SplitDecision};
use crate::transforms::{AuxBuffer, AuxData, Transformed};

pub use splice::splice_host_c;

/// Replacement for one enqueue of the original host.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnqueueEdit {
    pub original_kernel: String,
    pub kernel: String,
    pub args: Vec<Arg>,
    pub queue: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostEdits {
    /// Original enqueue op index to its replacement; `None` removes it.
    pub enqueues: BTreeMap<usize, Option<EnqueueEdit>>,
    /// Finish ops dropped because they separate concurrent kernels.
    pub removed_finishes: BTreeSet<usize>,
    /// Queues added for concurrent kernels; every kept finish also waits on them.
    pub extra_queues: BTreeSet<u32>,
    /// Buffers no kernel or host transfer uses any more.
    pub dead_buffers: BTreeSet<String>,
    pub aux: Vec<AuxBuffer>,
    /// Flags to zero right before an enqueue op.
    pub zero_before: BTreeMap<usize, Vec<String>>,
    /// Bitstream switch placed before an op.
    pub switch_before: BTreeMap<usize, u32>,
    /// Buffers saved and restored around a switch.
    pub transfers: Vec<String>,
    /// Bitstream of each emitted kernel.
    pub kernel_part: BTreeMap<String, u32>,
}

impl HostEdits {
    pub fn is_identity(&self) -> bool {
        self.enqueues.is_empty()
            && self.removed_finishes.is_empty()
            && self.dead_buffers.is_empty()
            && self.aux.is_empty()
            && self.switch_before.is_empty()
    }

    /// Derives the host edits for `t` (the result of applying `plan` to `a`).
    pub fn build(
        a: &Analysis,
        plan: &PipelinePlan,
        t: &Transformed,
        part: &PartitionPlan,
    ) -> Result<HostEdits> {
        let kernels: BTreeSet<String> = a.dfg.kernels().into_iter().collect();
        for e in &plan.edges {
            for k in [&e.producer, &e.consumer] {
                if !kernels.contains(k) {
                    return Err(Error::UnknownKernel(k.clone()));
                }
            }
        }
        let ops = &a.host.ops;

        // Concurrent components: kernels joined by channels or flags.
        let mut comp: BTreeMap<usize, usize> = BTreeMap::new();
        let root = |comp: &BTreeMap<usize, usize>, mut x: usize| {
            while let Some(&p) = comp.get(&x) {
                if p == x {
                    break;
                }
                x = p;
            }
            x
        };
        for e in plan.pipelined().filter(|e| e.decision != Decision::Fuse) {
            let (rp, rc) = (root(&comp, e.producer_node), root(&comp, e.consumer_node));
            comp.entry(rp).or_insert(rp);
            comp.entry(rc).or_insert(rc);
            comp.insert(rp.max(rc), rp.min(rc));
        }
        let base = ops
            .iter()
            .filter_map(|o| match o {
                HostOp::Enqueue(e) => Some(e.queue),
                HostOp::Finish { queue } => Some(*queue),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &n in comp.keys() {
            members.entry(root(&comp, n)).or_default().push(n);
        }
        let mut queue_of: BTreeMap<usize, u32> = BTreeMap::new();
        let mut extra_queues = BTreeSet::new();
        for nodes in members.values() {
            for (rank, &n) in nodes.iter().enumerate().skip(1) {
                let q = base + rank as u32;
                queue_of.insert(n, q);
                extra_queues.insert(q);
            }
        }

        let mut enqueues = BTreeMap::new();
        let mut used: BTreeSet<String> = BTreeSet::new();
        for n in &a.dfg.nodes {
            let HostOp::Enqueue(orig) = &ops[n.op_index] else {
                return Err(Error::Host(format!("op {} is not an enqueue", n.op_index)));
            };
            let rw = t
                .node(n.id)
                .ok_or_else(|| Error::Precondition(format!("no rewrite for node {}", n.id)))?;
            let edit = match &rw.kernel {
                None => None,
                Some(k) => {
                    let unit = t
                        .program
                        .kernel(k)
                        .ok_or_else(|| Error::UnknownKernel(k.clone()))?;
                    if unit.params.len() != rw.args.len() {
                        return Err(Error::Host(format!(
                            "`{k}` takes {} arguments but the host binds {}",
                            unit.params.len(),
                            rw.args.len()
                        )));
                    }
                    used.extend(
                        rw.args
                            .iter()
                            .filter_map(|a| a.buffer().map(str::to_string)),
                    );
                    Some(EnqueueEdit {
                        original_kernel: orig.kernel.clone(),
                        kernel: k.clone(),
                        args: rw.args.clone(),
                        queue: queue_of.get(&n.id).copied().unwrap_or(orig.queue),
                    })
                }
            };
            let unchanged = edit.as_ref().is_some_and(|e| {
                e.kernel == orig.kernel && e.args == orig.args && e.queue == orig.queue
            });
            if !unchanged {
                enqueues.insert(n.op_index, edit);
            }
        }

        let mut removed_finishes = BTreeSet::new();
        for e in plan.pipelined() {
            let (p, c) = (
                a.dfg.nodes[e.producer_node].op_index,
                a.dfg.nodes[e.consumer_node].op_index,
            );
            for i in p.min(c) + 1..p.max(c) {
                if matches!(ops[i], HostOp::Finish { .. }) {
                    removed_finishes.insert(i);
                }
            }
        }

        let host_read: BTreeSet<&str> = ops
            .iter()
            .filter_map(|o| match o {
                HostOp::Read { buffer, .. } => Some(buffer.as_str()),
                _ => None,
            })
            .collect();
        let dead_buffers = a
            .dfg
            .nodes
            .iter()
            .flat_map(|n| n.args.iter().filter_map(Arg::buffer))
            .filter(|b| !used.contains(*b) && !host_read.contains(b))
            .map(str::to_string)
            .collect();

        let mut zero_before: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for f in &t.flags {
            for n in a.dfg.nodes.iter().filter(|n| {
                t.node(n.id).and_then(|r| r.kernel.as_deref()) == Some(f.producer.as_str())
            }) {
                zero_before
                    .entry(n.op_index)
                    .or_default()
                    .push(f.name.clone());
            }
        }

        let mut kernel_part = BTreeMap::new();
        let mut op_part = BTreeMap::new();
        for n in &a.dfg.nodes {
            if let Some(k) = t.node(n.id).and_then(|r| r.kernel.clone()) {
                let p = part.part_of(&n.kernel);
                kernel_part.insert(k, p);
                op_part.insert(n.op_index, p);
            }
        }
        let mut switch_before = BTreeMap::new();
        if part.decision == SplitDecision::Split {
            let ends = loop_ends(ops)?;
            let mut current = Some(1);
            place_switches(
                ops,
                &ends,
                &op_part,
                0,
                ops.len(),
                &mut current,
                &mut switch_before,
            );
        }
        let transfers = if part.decision == SplitDecision::Split {
            part.transfers.clone()
        } else {
            Vec::new()
        };

        Ok(HostEdits {
            enqueues,
            removed_finishes,
            extra_queues,
            dead_buffers,
            aux: t.aux.clone(),
            zero_before,
            switch_before,
            transfers,
            kernel_part,
        })
    }

    /// Applies the edits to the original host model.
    pub fn apply(&self, host: &HostModel) -> Result<HostModel> {
        let ops = &host.ops;
        let first_enqueue = ops
            .iter()
            .position(|o| matches!(o, HostOp::Enqueue(_)))
            .unwrap_or(ops.len());
        let mut out = Vec::new();
        for (i, op) in ops.iter().enumerate() {
            if i == first_enqueue {
                out.extend(self.aux_ops());
            }
            match op {
                HostOp::Buffer { name, .. } | HostOp::Write { buffer: name, .. }
                    if self.dead_buffers.contains(name) => {}
                HostOp::Finish { queue } => {
                    if !self.removed_finishes.contains(&i) {
                        out.push(HostOp::Finish { queue: *queue });
                        out.extend(
                            self.extra_queues
                                .iter()
                                .map(|&q| HostOp::Finish { queue: q }),
                        );
                    }
                }
                HostOp::Enqueue(e) => {
                    if let Some(&p) = self.switch_before.get(&i) {
                        out.push(HostOp::Reprogram { part: p });
                    }
                    for f in self.zero_before.get(&i).into_iter().flatten() {
                        out.push(HostOp::Write {
                            buffer: f.clone(),
                            init: Init::Zeros,
                        });
                    }
                    match self.enqueues.get(&i) {
                        None => out.push(op.clone()),
                        Some(None) => {}
                        Some(Some(ed)) => out.push(HostOp::Enqueue(Enqueue {
                            kernel: ed.kernel.clone(),
                            queue: ed.queue,
                            global: e.global.clone(),
                            local: e.local.clone(),
                            args: ed.args.clone(),
                        })),
                    }
                }
                other => {
                    if let Some(&p) = self.switch_before.get(&i) {
                        out.push(HostOp::Reprogram { part: p });
                    }
                    out.push(other.clone());
                }
            }
        }
        if first_enqueue == ops.len() {
            out.extend(self.aux_ops());
        }
        let m = HostModel { ops: out };
        m.validate()?;
        Ok(m)
    }

    fn aux_ops(&self) -> Vec<HostOp> {
        let mut v = Vec::new();
        for b in &self.aux {
            v.push(HostOp::Buffer {
                name: b.name.clone(),
                elem: b.elem,
                len: b.len(),
            });
            if let AuxData::Table(t) = &b.data {
                v.push(HostOp::Write {
                    buffer: b.name.clone(),
                    init: Init::Values(t.iter().map(|&x| x as i64).collect()),
                });
            }
        }
        v
    }
}

/// Matching `LoopEnd` of every `LoopBegin`.
fn loop_ends(ops: &[HostOp]) -> Result<BTreeMap<usize, usize>> {
    let mut ends = BTreeMap::new();
    let mut open = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        match op {
            HostOp::LoopBegin { .. } => open.push(i),
            HostOp::LoopEnd => {
                let b = open
                    .pop()
                    .ok_or_else(|| Error::Host("unbalanced loop_end".into()))?;
                ends.insert(b, i);
            }
            _ => {}
        }
    }
    Ok(ends)
}

/// Places a bitstream switch before each enqueue whose part differs from the
/// one loaded on every path reaching it.
fn place_switches(
    ops: &[HostOp],
    ends: &BTreeMap<usize, usize>,
    op_part: &BTreeMap<usize, u32>,
    lo: usize,
    hi: usize,
    current: &mut Option<u32>,
    out: &mut BTreeMap<usize, u32>,
) {
    let mut i = lo;
    while i < hi {
        if let HostOp::LoopBegin { trips, .. } = &ops[i] {
            let end = ends[&i];
            let parts: Vec<u32> = op_part.range(i + 1..end).map(|(_, &p)| p).collect();
            if let (Some(&first), Some(&last)) = (parts.first(), parts.last()) {
                if parts.iter().all(|&p| p == first) {
                    // One bitstream for the whole loop: switch once, outside it.
                    if *current != Some(first) {
                        out.insert(i, first);
                        *current = Some(first);
                    }
                } else {
                    // Later iterations start with the last part of the body loaded.
                    let mut entry = if *current == Some(last) {
                        *current
                    } else {
                        None
                    };
                    place_switches(ops, ends, op_part, i + 1, end, &mut entry, out);
                    *current = match trips.count() {
                        Some(0) => *current,
                        Some(_) => Some(last),
                        None => None,
                    };
                }
            }
            i = end + 1;
            continue;
        }
        if let Some(&p) = op_part.get(&i) {
            if *current != Some(p) {
                out.insert(i, p);
                *current = Some(p);
            }
        }
        i += 1;
    }
}

/// Kernels and channels of one bitstream.
pub fn part_program(program: &KernelProgram, edits: &HostEdits, part: u32) -> KernelProgram {
    let in_part = |k: &str| edits.kernel_part.get(k).copied().unwrap_or(1) == part;
    let kernels: Vec<_> = program
        .kernels
        .iter()
        .filter(|k| in_part(&k.name))
        .cloned()
        .collect();
    let used = |c: &str| {
        kernels.iter().any(|k| {
            let mut hit = false;
            crate::transforms::rewrite::body_exprs(&k.body, &mut |e| {
                if let crate::frontend::Expr::Call { args, .. } = e {
                    hit |= args
                        .iter()
                        .any(|a| matches!(a, crate::frontend::Expr::Var(v) if v == c));
                }
            });
            hit
        })
    };
    KernelProgram {
        channels: program
            .channels
            .iter()
            .filter(|c| used(&c.name))
            .cloned()
            .collect(),
        kernels,
    }
}

/// Everything written next to the rewritten host.
#[derive(Debug, Clone, PartialEq)]
pub struct HostArtifacts {
    pub model: HostModel,
    /// Spliced C source, when the original source is available.
    pub source: Option<String>,
    /// Concatenated constant tables as little-endian 32-bit integers.
    pub tables: Vec<u8>,
    pub note: String,
}

/// Name of the generated table file.
pub const TABLE_FILE: &str = "id_queue.bin";

/// Produces the rewritten host model, C source, table file and arg-order note.
pub fn rewrite_host(
    a: &Analysis,
    plan: &PipelinePlan,
    t: &Transformed,
    part: &PartitionPlan,
    scan: Option<&ScanInfo>,
) -> Result<HostArtifacts> {
    let edits = HostEdits::build(a, plan, t, part)?;
    let model = edits.apply(&a.host)?;
    let source = scan
        .map(|s| splice_host_c(s, &a.host, &edits, TABLE_FILE))
        .transpose()?;
    let mut tables = Vec::new();
    let mut note = String::from("# kernel argument order (new parameters are appended)\n");
    for k in &t.program.kernels {
        let params: Vec<String> = k.params.iter().map(|p| p.name.clone()).collect();
        note.push_str(&format!("{}({})\n", k.name, params.join(", ")));
    }
    let mut offset = 0;
    for b in &edits.aux {
        if let AuxData::Table(v) = &b.data {
            note.push_str(&format!(
                "table {} offset {} len {}\n",
                b.name,
                offset,
                v.len()
            ));
            for x in v {
                tables.extend_from_slice(&x.to_le_bytes());
            }
            offset += v.len();
        }
    }
    Ok(HostArtifacts {
        model,
        source,
        tables,
        note,
    })
}

impl HostArtifacts {
    /// Writes `host.toml`, `host.c` (if any), the table file and `args.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("host.toml"), &self.model.to_toml()?)?;
        if let Some(s) = &self.source {
            write_atomic(&dir.join("host.c"), s)?;
        }
        if !self.tables.is_empty() {
            write_bytes_atomic(&dir.join(TABLE_FILE), &self.tables)?;
        }
        write_atomic(&dir.join("args.txt"), &self.note)
    }
}
