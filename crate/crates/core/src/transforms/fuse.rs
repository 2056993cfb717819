//! Merging a producer and consumer into one kernel.

use std::collections::{BTreeMap, BTreeSet};

use super::legality::canonical_loop;
use super::rewrite::{body_exprs_mut, declared_names, fresh, rename};
use super::{drop_unused_params, Emitted, Site};
use crate::error::{Error, Result};
use crate::frontend::{AddrSpace, AssignOp, Expr, KernelMode, KernelUnit, Param, ParamKind, Stmt};
use crate::host::Arg;

/// Fuses `c` into `p`; shared buffers listed in `eliminate` become per-instance scalars.
///
/// Legality (see `legality::fusion_check`) is the caller's responsibility;
/// only structural requirements are checked here.
pub fn fuse_kernels(p: Site, c: Site, eliminate: &[String]) -> Result<Emitted> {
    if p.unit.mode != c.unit.mode {
        return Err(Error::Precondition(
            "kernels use different execution modes".into(),
        ));
    }
    if p.unit.mode == KernelMode::NdRange && p.launch != c.launch {
        return Err(Error::Precondition(
            "workgroup size or count differs".into(),
        ));
    }
    let name = format!("{}_{}", p.unit.name, c.unit.name);
    let mut params = p.unit.params.clone();
    let mut args = p.args.to_vec();
    let mut taken: BTreeSet<String> = declared_names(&p.unit.body);
    taken.extend(params.iter().map(|x| x.name.clone()));
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    let c_written = written_params(&c.unit.body);
    for (cp, ca) in c.unit.params.iter().zip(c.args) {
        let shared = params
            .iter()
            .zip(&args)
            .position(|(pp, pa)| match (ca, pa) {
                (Arg::Buffer(x), Arg::Buffer(y)) => {
                    x == y && cp.kind.is_buffer() && pp.kind.is_buffer()
                }
                (Arg::Int(x), Arg::Int(y)) => x == y && cp.name == pp.name,
                _ => false,
            });
        match shared {
            Some(i) => {
                if c_written.contains(&cp.name) {
                    if let ParamKind::Pointer { is_const, .. } = &mut params[i].kind {
                        *is_const = false;
                    }
                }
                map.insert(cp.name.clone(), params[i].name.clone());
            }
            None => {
                let n = fresh(&cp.name, &taken);
                taken.insert(n.clone());
                if n != cp.name {
                    map.insert(cp.name.clone(), n.clone());
                }
                params.push(Param {
                    name: n,
                    kind: cp.kind,
                });
                args.push(ca.clone());
            }
        }
    }
    for local in declared_names(&c.unit.body) {
        if taken.contains(&local) {
            let n = fresh(&local, &taken);
            taken.insert(n.clone());
            map.insert(local, n);
        }
    }
    let mut c_body = c.unit.body.clone();
    rename(&mut c_body, &map);

    let mut body = match p.unit.mode {
        _ if c.unit.body.is_empty() => p.unit.body.clone(),
        _ if p.unit.body.is_empty() => c_body,
        KernelMode::NdRange => {
            let mut b = p.unit.body.clone();
            b.extend(c_body);
            b
        }
        KernelMode::SingleWorkItem => fuse_loops(&p.unit.body, c_body)?,
    };

    let mut dropped = Vec::new();
    for b in eliminate {
        let param = p
            .param_for(b)
            .ok_or_else(|| Error::Precondition(format!("producer does not bind `{b}`")))?
            .to_string();
        let elem = p.unit.param(&param).map(|x| x.kind.elem()).unwrap();
        let tmp = fresh(&format!("{b}_tmp"), &taken);
        taken.insert(tmp.clone());
        scalarize(&mut body, &param, &tmp, elem)?;
        dropped.push(param);
    }
    let mut out = Emitted {
        unit: KernelUnit {
            name,
            mode: p.unit.mode,
            params,
            body,
            attributes: p.unit.attributes.clone(),
            stripped: Vec::new(),
        },
        args,
    };
    drop_unused_params(&mut out, &dropped);
    Ok(out)
}

fn written_params(body: &[Stmt]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    fn go(body: &[Stmt], out: &mut BTreeSet<String>) {
        for s in body {
            if let Stmt::Assign {
                target: Expr::Index { base, .. },
                ..
            } = s
            {
                out.insert(base.clone());
            }
            for l in s.child_lists() {
                go(l, out);
            }
        }
    }
    go(body, &mut out);
    out
}

/// Classical loop fusion of two single canonical loops with equal trip counts.
fn fuse_loops(p: &[Stmt], mut c: Vec<Stmt>) -> Result<Vec<Stmt>> {
    let (Some((pv, plo)), Some((cv, clo))) = (
        p.first().filter(|_| p.len() == 1).and_then(canonical_loop),
        c.first().filter(|_| c.len() == 1).and_then(canonical_loop),
    ) else {
        return Err(Error::Precondition(
            "fusion needs one canonical loop per kernel".into(),
        ));
    };
    let Stmt::For { body: c_inner, .. } = c.remove(0) else {
        unreachable!()
    };
    let mut c_inner = c_inner;
    // Consumer iteration `k` runs alongside producer iteration `k`.
    let replacement = if plo == clo {
        Expr::var(pv.clone())
    } else {
        Expr::add(
            Expr::binary(crate::frontend::BinOp::Sub, Expr::var(pv.clone()), plo),
            clo,
        )
    };
    body_exprs_mut(&mut c_inner, &mut |e| {
        if matches!(e, Expr::Var(n) if *n == cv) {
            *e = replacement.clone();
        }
    });
    let mut fused = p[0].clone();
    if let Stmt::For { body, .. } = &mut fused {
        body.extend(c_inner);
    }
    Ok(vec![fused])
}

/// Replaces the single store to `param` by a scalar declaration and its loads by the scalar.
fn scalarize(
    body: &mut [Stmt],
    param: &str,
    tmp: &str,
    elem: crate::frontend::ScalarType,
) -> Result<()> {
    let mut stores = 0;
    fn go(
        body: &mut [Stmt],
        param: &str,
        tmp: &str,
        elem: crate::frontend::ScalarType,
        stores: &mut usize,
    ) {
        for s in body.iter_mut() {
            if let Stmt::Assign {
                target: Expr::Index { base, .. },
                op: AssignOp::Set,
                value,
            } = s
            {
                if base == param {
                    *s = Stmt::Decl {
                        space: AddrSpace::Private,
                        ty: elem,
                        name: tmp.to_string(),
                        array_len: None,
                        init: Some(value.clone()),
                    };
                    *stores += 1;
                }
            }
            for l in s.child_lists_mut() {
                go(l, param, tmp, elem, stores);
            }
        }
    }
    go(body, param, tmp, elem, &mut stores);
    if stores != 1 {
        return Err(Error::Precondition(format!(
            "expected one store to `{param}`, found {stores}"
        )));
    }
    body_exprs_mut(body, &mut |e| {
        if matches!(e, Expr::Index { base, .. } if base == param) {
            *e = Expr::var(tmp);
        }
    });
    Ok(())
}
