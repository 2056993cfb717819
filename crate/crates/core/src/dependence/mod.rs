//! Cross-kernel dependence classification and id queues.

pub mod queue;
pub mod relation;
pub mod space;

use serde::Serialize;

pub use queue::{build_id_queue, item_order_within_groups, readiness_order, unit_deps, IdQueue};
pub use relation::{analyze_dependence, Cardinality, DepClass, DependenceRelation, Side};
pub use space::{
    enumerate_access, footprint, instance_space, Footprint, InstanceSpace, LaunchCtx, Segment,
    Touch,
};

use crate::error::{Error, Result};
use crate::frontend::KernelProgram;
use crate::host::{EdgeKind, KernelDfg};

/// Relation attached to one forward (producer node, consumer node) pair of a DFG.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRelation {
    pub producer_node: usize,
    pub consumer_node: usize,
    pub relation: DependenceRelation,
}

/// Launch context of DFG node `id`.
pub fn node_ctx(dfg: &KernelDfg, program: &KernelProgram, id: usize) -> Result<LaunchCtx> {
    let node = &dfg.nodes[id];
    let unit = program
        .kernel(&node.kernel)
        .ok_or_else(|| Error::UnknownKernel(node.kernel.clone()))?;
    Ok(LaunchCtx::from_node(unit, node))
}

/// Analyzes every forward edge pair of `dfg`.
pub fn analyze_dfg(dfg: &KernelDfg, program: &KernelProgram) -> Result<Vec<PairRelation>> {
    let mut out = Vec::new();
    for ((p, c), edges) in dfg.edge_pairs() {
        if edges[0].kind != EdgeKind::Forward {
            continue;
        }
        let buffers: Vec<String> = edges.iter().map(|e| e.buffer.clone()).collect();
        let (pn, cn) = (&dfg.nodes[p], &dfg.nodes[c]);
        let pu = program
            .kernel(&pn.kernel)
            .ok_or_else(|| Error::UnknownKernel(pn.kernel.clone()))?;
        let cu = program
            .kernel(&cn.kernel)
            .ok_or_else(|| Error::UnknownKernel(cn.kernel.clone()))?;
        let (pc, cc) = (LaunchCtx::from_node(pu, pn), LaunchCtx::from_node(cu, cn));
        let relation = analyze_dependence(
            Side { unit: pu, ctx: &pc },
            Side { unit: cu, ctx: &cc },
            &buffers,
        )?;
        out.push(PairRelation {
            producer_node: p,
            consumer_node: c,
            relation,
        });
    }
    Ok(out)
}
