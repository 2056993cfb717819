//! Concurrent execution synchronized through completion flags in global memory.
//!
//! The producer raises one flag per instance after a global memory fence. The
//! consumer looks up the writer instance of every element it loads in a
//! host-generated table and spins on that writer's flag before the load.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::legality::{canonical_loop, global_mem_check, writer_table, Launched};
use super::rewrite::{declared_names, fresh, walk_expr};
use super::{AuxBuffer, AuxData, Emitted, Site};
use crate::dependence::{instance_space, DependenceRelation, InstanceSpace};
use crate::error::{Error, Result};
use crate::frontend::{
    extract_accesses, AssignOp, BinOp, Expr, KernelMode, Param, ParamKind, ScalarType, Stmt,
};
use crate::host::{Arg, Launch};

/// Flag buffer shared by a producer and its consumer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlagSpec {
    /// Host buffer holding the flags.
    pub name: String,
    pub len: u64,
    pub producer: String,
    pub consumer: String,
}

/// Rewrites `p` to publish per-instance completion flags and `c` to wait on them.
///
/// `buffer_len` gives the element count of each shared host buffer.
pub fn to_global_mem_cke(
    p: Site,
    c: Site,
    rel: &DependenceRelation,
    buffer_len: &BTreeMap<String, u64>,
) -> Result<(Emitted, Emitted, Vec<AuxBuffer>, FlagSpec)> {
    let (pctx, cctx) = (p.ctx(), c.ctx());
    let pl = Launched {
        unit: p.unit,
        ctx: &pctx,
    };
    global_mem_check(
        pl,
        Launched {
            unit: c.unit,
            ctx: &cctx,
        },
        rel,
    )
    .map_err(Error::Precondition)?;

    let space = instance_space(p.unit, &extract_accesses(p.unit), &pctx);
    let flag_host = format!("flag_{}", p.unit.name);
    let flag = FlagSpec {
        name: flag_host.clone(),
        len: space.count() as u64,
        producer: p.unit.name.clone(),
        consumer: c.unit.name.clone(),
    };
    let mut aux = vec![AuxBuffer {
        name: flag_host.clone(),
        elem: ScalarType::Int,
        data: AuxData::Zeros(flag.len),
    }];

    let mut pe = Emitted {
        unit: p.unit.clone(),
        args: p.args.to_vec(),
    };
    let p_flag = add_param(&mut pe, "flag", &flag_host);
    match p.unit.mode {
        KernelMode::NdRange => {
            pe.unit
                .body
                .extend(publish(&p_flag, ndrange_linear_id(p.launch)));
        }
        KernelMode::SingleWorkItem => publish_segments(&mut pe.unit.body, &p_flag, &space)?,
    }

    let mut ce = Emitted {
        unit: c.unit.clone(),
        args: c.args.to_vec(),
    };
    let c_flag = add_param(&mut ce, "flag", &flag_host);
    let mut tables = BTreeMap::new();
    for b in &rel.buffers {
        let len = *buffer_len
            .get(b)
            .ok_or_else(|| Error::Precondition(format!("unknown length of `{b}`")))?;
        let table = writer_table(pl, b, len).map_err(Error::Precondition)?;
        let host = format!("writer_{}_{b}", p.unit.name);
        aux.push(AuxBuffer {
            name: host.clone(),
            elem: ScalarType::Int,
            data: AuxData::Table(table),
        });
        let cp = c
            .param_for(b)
            .ok_or_else(|| Error::Precondition(format!("consumer does not bind `{b}`")))?
            .to_string();
        let tp = add_param(&mut ce, &format!("writer_{b}"), &host);
        tables.insert(cp, tp);
    }
    let mut taken = declared_names(&ce.unit.body);
    taken.extend(ce.unit.params.iter().map(|x| x.name.clone()));
    insert_waits(&mut ce.unit.body, &tables, &c_flag, &mut taken)?;
    Ok((pe, ce, aux, flag))
}

fn add_param(e: &mut Emitted, base: &str, host: &str) -> String {
    let mut taken: BTreeSet<String> = declared_names(&e.unit.body);
    taken.extend(e.unit.params.iter().map(|x| x.name.clone()));
    let name = fresh(base, &taken);
    e.unit.params.push(Param {
        name: name.clone(),
        kind: ParamKind::global(ScalarType::Int),
    });
    e.args.push(Arg::Buffer(host.to_string()));
    name
}

fn id_call(f: &str, d: usize) -> Expr {
    Expr::call(f, vec![Expr::Int(d as i64)])
}

/// Dispatch-order instance number of the executing work-item.
fn ndrange_linear_id(launch: &Launch) -> Expr {
    let dims = launch.work_dim().max(1);
    let linear = |id: &str, size: &str| {
        (0..dims).rev().fold(None, |acc: Option<Expr>, d| {
            Some(match acc {
                None => id_call(id, d),
                Some(a) => Expr::add(id_call(id, d), Expr::mul(id_call(size, d), a)),
            })
        })
    };
    let group = linear("get_group_id", "get_num_groups").unwrap();
    let local = linear("get_local_id", "get_local_size").unwrap();
    let group_size = (0..dims)
        .map(|d| id_call("get_local_size", d))
        .reduce(Expr::mul)
        .unwrap();
    Expr::add(Expr::mul(group, group_size), local)
}

fn publish(flag: &str, index: Expr) -> Vec<Stmt> {
    vec![
        Stmt::Expr(Expr::call(
            "mem_fence",
            vec![Expr::var("CLK_GLOBAL_MEM_FENCE")],
        )),
        Stmt::assign(Expr::index(flag, index), Expr::Int(1)),
    ]
}

/// Single work-item producers: one flag per loop iteration or top-level statement.
fn publish_segments(body: &mut Vec<Stmt>, flag: &str, space: &InstanceSpace) -> Result<()> {
    let InstanceSpace::Iterations { segments } = space else {
        return Err(Error::Precondition("expected an iteration space".into()));
    };
    let mut offset = 0i64;
    let mut out = Vec::with_capacity(body.len() * 2);
    for (s, seg) in body.drain(..).zip(segments) {
        match canonical_loop(&s) {
            Some((v, lo)) if seg.count > 1 => {
                let mut s = s;
                if let Stmt::For { body, .. } = &mut s {
                    let idx = Expr::add(
                        Expr::Int(offset),
                        Expr::binary(BinOp::Sub, Expr::var(v), lo),
                    );
                    body.extend(publish(flag, idx));
                }
                out.push(s);
            }
            _ => {
                out.push(s);
                out.extend(publish(flag, Expr::Int(offset)));
            }
        }
        offset += seg.count as i64;
    }
    *body = out;
    Ok(())
}

fn collect_loads(e: &Expr, params: &BTreeMap<String, String>, out: &mut Vec<(String, Expr)>) {
    walk_expr(e, &mut |x| {
        if let Expr::Index { base, index } = x {
            if params.contains_key(base) {
                out.push((base.clone(), (**index).clone()));
            }
        }
    })
}

/// Index expressions of loads from any of `params` owned directly by `s`.
fn loads(s: &Stmt, params: &BTreeMap<String, String>) -> Vec<(String, Expr)> {
    let mut out = Vec::new();
    match s {
        Stmt::Decl {
            array_len, init, ..
        } => {
            for e in array_len.iter().chain(init.iter()) {
                collect_loads(e, params, &mut out);
            }
        }
        Stmt::Assign { target, op, value } => {
            collect_loads(value, params, &mut out);
            match target {
                Expr::Index { base, index } => {
                    collect_loads(index, params, &mut out);
                    if *op != AssignOp::Set && params.contains_key(base) {
                        out.push((base.clone(), (**index).clone()));
                    }
                }
                other => collect_loads(other, params, &mut out),
            }
        }
        Stmt::If { cond, .. } | Stmt::While { cond, .. } => collect_loads(cond, params, &mut out),
        Stmt::Expr(e) => collect_loads(e, params, &mut out),
        Stmt::For {
            init, cond, step, ..
        } => {
            for st in init.iter().chain(step.iter()) {
                out.extend(loads(st, params));
            }
            if let Some(c) = cond {
                collect_loads(c, params, &mut out);
            }
        }
        Stmt::Block(_) | Stmt::Return | Stmt::Pragma(_) | Stmt::Opaque(_) => {}
    }
    out
}

fn insert_waits(
    body: &mut Vec<Stmt>,
    tables: &BTreeMap<String, String>,
    flag: &str,
    taken: &mut BTreeSet<String>,
) -> Result<()> {
    let mut out = Vec::with_capacity(body.len());
    for mut s in body.drain(..) {
        let ls = loads(&s, tables);
        if !ls.is_empty() && matches!(s, Stmt::For { .. } | Stmt::While { .. }) {
            return Err(Error::Precondition("shared load in a loop header".into()));
        }
        for (param, index) in ls {
            let id = fresh("wait_id", taken);
            taken.insert(id.clone());
            out.push(Stmt::decl(
                ScalarType::Int,
                id.clone(),
                Expr::index(tables[&param].clone(), index),
            ));
            let pending = Expr::binary(
                BinOp::And,
                Expr::binary(BinOp::Ge, Expr::var(id.clone()), Expr::Int(0)),
                Expr::not(Expr::index(flag, Expr::var(id))),
            );
            out.push(Stmt::While {
                cond: pending,
                body: Vec::new(),
            });
        }
        for l in s.child_lists_mut() {
            insert_waits(l, tables, flag, taken)?;
        }
        out.push(s);
    }
    *body = out;
    Ok(())
}
