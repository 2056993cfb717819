//! Kernel rewrites implementing the planned overlap mechanisms.

pub mod apply;
pub mod channel;
pub mod fuse;
pub mod global_mem;
pub mod legality;
pub mod liveness;
pub mod remap;
pub mod rewrite;

use serde::Serialize;

use crate::dependence::LaunchCtx;
use crate::frontend::{KernelUnit, ScalarType};
use crate::host::{Arg, Launch};

pub use apply::{apply_plan, NodeRewrite, Transformed};
pub use channel::{to_channels, ChannelSpec};
pub use fuse::fuse_kernels;
pub use global_mem::{to_global_mem_cke, FlagSpec};
pub use remap::apply_id_remap;

/// A kernel as invoked: source, host arguments and launch geometry.
#[derive(Debug, Clone, Copy)]
pub struct Site<'a> {
    pub unit: &'a KernelUnit,
    pub args: &'a [Arg],
    pub launch: &'a Launch,
}

impl Site<'_> {
    pub fn ctx(&self) -> LaunchCtx {
        LaunchCtx::new(self.unit, self.args, self.launch)
    }

    /// Host buffer bound to kernel parameter `param`.
    pub fn host_buffer(&self, param: &str) -> Option<&str> {
        let i = self.unit.param_index(param)?;
        self.args.get(i).and_then(Arg::buffer)
    }

    /// Kernel parameter bound to host buffer `buffer`.
    pub fn param_for(&self, buffer: &str) -> Option<&str> {
        self.unit
            .params
            .iter()
            .zip(self.args)
            .find(|(p, a)| p.kind.is_buffer() && a.buffer() == Some(buffer))
            .map(|(p, _)| p.name.as_str())
    }
}

/// A rewritten kernel together with the argument list the host must bind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Emitted {
    pub unit: KernelUnit,
    pub args: Vec<Arg>,
}

/// Device buffer introduced by a transform, with its initial contents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxBuffer {
    pub name: String,
    pub elem: ScalarType,
    pub data: AuxData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxData {
    /// Zero-filled before the producer starts.
    Zeros(u64),
    /// Constant table generated at compile time.
    Table(Vec<i32>),
}

impl AuxBuffer {
    pub fn len(&self) -> u64 {
        match &self.data {
            AuxData::Zeros(n) => *n,
            AuxData::Table(v) => v.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Drops parameters (and their arguments) that the body no longer mentions.
pub(crate) fn drop_unused_params(e: &mut Emitted, candidates: &[String]) {
    let mut used = std::collections::BTreeSet::new();
    rewrite::body_exprs(&e.unit.body, &mut |x| match x {
        crate::frontend::Expr::Var(n) | crate::frontend::Expr::Index { base: n, .. } => {
            used.insert(n.clone());
        }
        _ => {}
    });
    let mut keep_params = Vec::new();
    let mut keep_args = Vec::new();
    for (p, a) in e.unit.params.drain(..).zip(e.args.drain(..)) {
        if candidates.contains(&p.name) && !used.contains(&p.name) {
            continue;
        }
        keep_params.push(p);
        keep_args.push(a);
    }
    e.unit.params = keep_params;
    e.args = keep_args;
}
