//! Replacing global-memory communication with on-chip FIFOs.

use serde::Serialize;

use super::legality::{channel_check, Launched};
use super::rewrite::body_exprs_mut;
use super::{drop_unused_params, Emitted, Site};
use crate::dependence::DependenceRelation;
use crate::error::{Error, Result};
use crate::frontend::{AssignOp, ChannelDecl, Expr, ScalarType, Stmt};

/// A FIFO connecting a producer store site to a consumer load site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSpec {
    pub name: String,
    pub buffer: String,
    pub elem: ScalarType,
    /// Declared depth; `None` leaves the depth to the tool.
    pub depth: Option<u32>,
    pub writer: String,
    pub reader: String,
}

impl ChannelSpec {
    pub fn decl(&self) -> ChannelDecl {
        ChannelDecl {
            name: self.name.clone(),
            elem: self.elem,
            depth: self.depth,
        }
    }
}

/// Streams every buffer of `rel` from `p` to `c` through a channel.
///
/// Buffers in `live_out` keep their global store in the producer so later
/// readers still see the data.
pub fn to_channels(
    p: Site,
    c: Site,
    rel: &DependenceRelation,
    depth: u32,
    live_out: &[String],
) -> Result<(Emitted, Emitted, Vec<ChannelSpec>)> {
    let (pctx, cctx) = (p.ctx(), c.ctx());
    channel_check(
        Launched {
            unit: p.unit,
            ctx: &pctx,
        },
        Launched {
            unit: c.unit,
            ctx: &cctx,
        },
        rel,
    )
    .map_err(|detail| Error::OrderMismatch {
        buffer: rel.buffers.join(","),
        detail,
    })?;
    let mut pe = Emitted {
        unit: p.unit.clone(),
        args: p.args.to_vec(),
    };
    let mut ce = Emitted {
        unit: c.unit.clone(),
        args: c.args.to_vec(),
    };
    let mut specs = Vec::new();
    let mut p_dropped = Vec::new();
    let mut c_dropped = Vec::new();
    for b in &rel.buffers {
        let pp = p
            .param_for(b)
            .ok_or_else(|| Error::Precondition(format!("producer does not bind `{b}`")))?;
        let cp = c
            .param_for(b)
            .ok_or_else(|| Error::Precondition(format!("consumer does not bind `{b}`")))?;
        let elem = p.unit.param(pp).unwrap().kind.elem();
        let name = format!("c_{b}");
        let keep = live_out.contains(b);
        rewrite_store(&mut pe.unit.body, pp, &name, keep);
        body_exprs_mut(&mut ce.unit.body, &mut |e| {
            if matches!(e, Expr::Index { base, .. } if base == cp) {
                *e = Expr::call("read_channel_intel", vec![Expr::var(name.clone())]);
            }
        });
        if !keep {
            p_dropped.push(pp.to_string());
        }
        c_dropped.push(cp.to_string());
        specs.push(ChannelSpec {
            name,
            buffer: b.clone(),
            elem,
            depth: (depth > 0).then_some(depth),
            writer: p.unit.name.clone(),
            reader: c.unit.name.clone(),
        });
    }
    drop_unused_params(&mut pe, &p_dropped);
    drop_unused_params(&mut ce, &c_dropped);
    Ok((pe, ce, specs))
}

fn rewrite_store(body: &mut Vec<Stmt>, param: &str, chan: &str, keep: bool) {
    let mut i = 0;
    while i < body.len() {
        let hit = matches!(&body[i], Stmt::Assign { target: Expr::Index { base, .. }, op: AssignOp::Set, .. } if base == param);
        if hit {
            let Stmt::Assign { target, value, .. } = body[i].clone() else {
                unreachable!()
            };
            let sent = if keep { target } else { value };
            let write = Stmt::Expr(Expr::call(
                "write_channel_intel",
                vec![Expr::var(chan), sent],
            ));
            if keep {
                body.insert(i + 1, write);
                i += 1;
            } else {
                body[i] = write;
            }
        } else {
            for l in body[i].child_lists_mut() {
                rewrite_store(l, param, chan, keep);
            }
        }
        i += 1;
    }
}
