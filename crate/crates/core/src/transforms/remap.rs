//! Reordering consumer work-groups (and items) by producer completion order.
//!
//! The kernel reads its logical ids from host-generated tables indexed by the
//! hardware dispatch slot, so the n-th dispatched group works on the n-th
//! entry of the id queue.

use super::rewrite::{body_exprs_mut, declared_names, fresh};
use super::{AuxBuffer, AuxData, Emitted, Site};
use crate::config::Granularity;
use crate::dependence::{build_id_queue, item_order_within_groups, DependenceRelation};
use crate::error::{Error, Result};
use crate::frontend::{Expr, KernelMode, Param, ParamKind, ScalarType, Stmt};
use crate::host::Arg;
use crate::planner::RemapVariant;

const AXES: [&str; 3] = ["x", "y", "z"];

/// Applies `variant` to consumer `c` of `rel`; returns the kernel and its id tables.
pub fn apply_id_remap(
    c: Site,
    rel: &DependenceRelation,
    variant: RemapVariant,
    cap: usize,
) -> Result<(Emitted, Vec<AuxBuffer>)> {
    let mut e = Emitted {
        unit: c.unit.clone(),
        args: c.args.to_vec(),
    };
    if variant == RemapVariant::NoRemap {
        return Ok((e, Vec::new()));
    }
    if c.unit.mode != KernelMode::NdRange {
        return Err(Error::Precondition(
            "id remapping needs an NDRange consumer".into(),
        ));
    }
    let space = &rel.consumer_space;
    let dims = space.dims();
    let queue = build_id_queue(rel, Granularity::WorkGroup, cap)?;
    let with_items = variant == RemapVariant::GroupAndItemRemap;

    let mut taken = declared_names(&e.unit.body);
    taken.extend(e.unit.params.iter().map(|p| p.name.clone()));
    let mut name = |base: &str| {
        let n = fresh(base, &taken);
        taken.insert(n.clone());
        n
    };
    let wg_slot = name("wg_slot");
    let wi_slot = name("wi_slot");
    let group_vars: Vec<String> = (0..dims)
        .map(|d| name(&format!("remap_g{}", AXES[d])))
        .collect();
    let local_vars: Vec<String> = (0..dims)
        .map(|d| name(&format!("remap_l{}", AXES[d])))
        .collect();
    let group_tables: Vec<String> = (0..dims)
        .map(|d| name(&format!("id_queue_b{}", AXES[d])))
        .collect();
    let item_tables: Vec<String> = (0..dims)
        .map(|d| name(&format!("id_queue_t{}", AXES[d])))
        .collect();

    let mut bad = None;
    body_exprs_mut(&mut e.unit.body, &mut |x| {
        let Expr::Call { name, args } = x else { return };
        let f = name.as_str();
        if !matches!(f, "get_group_id" | "get_global_id" | "get_local_id") {
            return;
        }
        let d = match args.as_slice() {
            [Expr::Int(d)] if (*d as usize) < dims => *d as usize,
            _ => {
                bad = Some(f.to_string());
                return;
            }
        };
        let local = if with_items {
            Expr::var(local_vars[d].clone())
        } else {
            id_call("get_local_id", d)
        };
        *x = match f {
            "get_group_id" => Expr::var(group_vars[d].clone()),
            "get_global_id" => Expr::add(
                Expr::mul(
                    Expr::var(group_vars[d].clone()),
                    id_call("get_local_size", d),
                ),
                local,
            ),
            _ if with_items => local,
            _ => return,
        };
    });
    if let Some(f) = bad {
        return Err(Error::Precondition(format!(
            "`{f}` called with a non-constant dimension"
        )));
    }

    let mut prologue = vec![Stmt::decl(
        ScalarType::Int,
        wg_slot.clone(),
        linear("get_group_id", "get_num_groups", dims),
    )];
    let mut aux = Vec::new();
    let host = |kind: &str, d: usize| format!("id_queue_{}_{kind}{}", c.unit.name, AXES[d]);
    for d in 0..dims {
        let data: Vec<i32> = queue
            .order
            .iter()
            .map(|&g| space.group_tuple(g)[d] as i32)
            .collect();
        push_table(&mut e, &mut aux, &group_tables[d], &host("b", d), data);
        prologue.push(Stmt::decl(
            ScalarType::Int,
            group_vars[d].clone(),
            Expr::index(group_tables[d].clone(), Expr::var(wg_slot.clone())),
        ));
    }
    if with_items {
        let items = item_order_within_groups(rel, &queue);
        let gs = space.group_size() as i64;
        prologue.push(Stmt::decl(
            ScalarType::Int,
            wi_slot.clone(),
            linear("get_local_id", "get_local_size", dims),
        ));
        let slot = Expr::add(
            Expr::mul(Expr::var(wg_slot.clone()), Expr::Int(gs)),
            Expr::var(wi_slot),
        );
        for d in 0..dims {
            let data: Vec<i32> = items
                .iter()
                .flat_map(|order| order.iter().map(|&l| space.local_tuple(l)[d] as i32))
                .collect();
            push_table(&mut e, &mut aux, &item_tables[d], &host("t", d), data);
            prologue.push(Stmt::decl(
                ScalarType::Int,
                local_vars[d].clone(),
                Expr::index(item_tables[d].clone(), slot.clone()),
            ));
        }
    }
    prologue.append(&mut e.unit.body);
    e.unit.body = prologue;
    Ok((e, aux))
}

fn id_call(f: &str, d: usize) -> Expr {
    Expr::call(f, vec![Expr::Int(d as i64)])
}

/// Row-major linearization with dimension 0 fastest.
fn linear(id: &str, extent: &str, dims: usize) -> Expr {
    (0..dims)
        .rev()
        .fold(None, |acc: Option<Expr>, d| {
            Some(match acc {
                None => id_call(id, d),
                Some(a) => Expr::add(id_call(id, d), Expr::mul(id_call(extent, d), a)),
            })
        })
        .unwrap_or(Expr::Int(0))
}

fn push_table(e: &mut Emitted, aux: &mut Vec<AuxBuffer>, param: &str, host: &str, data: Vec<i32>) {
    e.unit.params.push(Param {
        name: param.to_string(),
        kind: ParamKind::Pointer {
            space: crate::frontend::AddrSpace::Global,
            elem: ScalarType::Int,
            is_const: true,
        },
    });
    e.args.push(Arg::Buffer(host.to_string()));
    aux.push(AuxBuffer {
        name: host.to_string(),
        elem: ScalarType::Int,
        data: AuxData::Table(data),
    });
}
