//! Preconditions for running a producer/consumer pair fused or concurrently.
//!
//! All checks work on the concrete footprints of one launch of each kernel:
//! every conflicting pair of accesses (same element, at least one write) must
//! still be ordered producer-first under the proposed execution scheme.

use std::collections::BTreeMap;

use crate::dependence::{
    enumerate_access, instance_space, DependenceRelation, InstanceSpace, LaunchCtx,
};
use crate::frontend::{
    extract_accesses, AccessSet, Direction, Expr, KernelMode, KernelUnit, Stmt, StmtPath,
};

/// Upper bound on conflicting access pairs examined per check.
const CONFLICT_CAP: usize = 1 << 22;

/// One kernel launch under analysis.
#[derive(Clone, Copy)]
pub struct Launched<'a> {
    pub unit: &'a KernelUnit,
    pub ctx: &'a LaunchCtx,
}

#[derive(Debug, Clone)]
pub(crate) struct Access {
    pub instance: usize,
    pub element: i64,
    pub write: bool,
    pub path: StmtPath,
}

/// Ordered touches per host buffer, plus buffers that cannot be enumerated.
pub(crate) struct Touches {
    pub by_buffer: BTreeMap<String, Vec<Access>>,
    pub opaque: Vec<String>,
    pub space: InstanceSpace,
    pub acc: AccessSet,
}

fn host(ctx: &LaunchCtx, param: &str) -> String {
    ctx.bindings
        .get(param)
        .cloned()
        .unwrap_or_else(|| param.to_string())
}

pub(crate) fn touches(k: Launched) -> Result<Touches, String> {
    let acc = extract_accesses(k.unit);
    let space = instance_space(k.unit, &acc, k.ctx);
    let mut by_buffer: BTreeMap<String, Vec<Access>> = BTreeMap::new();
    let mut opaque: Vec<String> = acc.opaque.iter().map(|b| host(k.ctx, b)).collect();
    for a in &acc.accesses {
        let hb = host(k.ctx, &a.buffer);
        let mut v = Vec::new();
        let ok = enumerate_access(&space, k.ctx, a, &mut |t| {
            v.push(Access {
                instance: t.instance,
                element: t.element,
                write: a.direction == Direction::Write,
                path: a.path.clone(),
            })
        })
        .map_err(|e| e.to_string())?;
        if ok {
            by_buffer.entry(hb).or_default().extend(v);
        } else {
            opaque.push(hb);
        }
    }
    opaque.sort();
    opaque.dedup();
    Ok(Touches {
        by_buffer,
        opaque,
        space,
        acc,
    })
}

/// A producer access and a consumer access to the same element, at least one a write.
#[derive(Debug, Clone)]
pub(crate) struct Conflict {
    pub buffer: String,
    pub p: Access,
    pub c: Access,
}

fn writes_host(t: &Touches, ctx: &LaunchCtx, acc: &AccessSet, b: &str) -> bool {
    t.by_buffer
        .get(b)
        .is_some_and(|v| v.iter().any(|a| a.write))
        || acc
            .accesses
            .iter()
            .any(|a| a.direction == Direction::Write && host(ctx, &a.buffer) == b)
}

pub(crate) fn conflicts(
    p: Launched,
    pt: &Touches,
    c: Launched,
    ct: &Touches,
) -> Result<Vec<Conflict>, String> {
    // Opaque buffers conflict as soon as both touch them and one writes.
    for b in pt.opaque.iter().chain(&ct.opaque) {
        let p_touch = pt.opaque.contains(b) || pt.by_buffer.contains_key(b);
        let c_touch = ct.opaque.contains(b) || ct.by_buffer.contains_key(b);
        if p_touch
            && c_touch
            && (writes_host(pt, p.ctx, &pt.acc, b) || writes_host(ct, c.ctx, &ct.acc, b))
        {
            return Err(format!("buffer `{b}` is accessed opaquely by both kernels"));
        }
    }
    let mut out = Vec::new();
    for (b, pv) in &pt.by_buffer {
        let Some(cv) = ct.by_buffer.get(b) else {
            continue;
        };
        let mut by_elem: BTreeMap<i64, Vec<&Access>> = BTreeMap::new();
        for a in pv {
            by_elem.entry(a.element).or_default().push(a);
        }
        for ca in cv {
            let Some(ps) = by_elem.get(&ca.element) else {
                continue;
            };
            for pa in ps {
                if pa.write || ca.write {
                    out.push(Conflict {
                        buffer: b.clone(),
                        p: (*pa).clone(),
                        c: ca.clone(),
                    });
                    if out.len() > CONFLICT_CAP {
                        return Err("too many conflicting accesses to check".into());
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Statement-order position of an access inside one instance; writes follow reads of the same statement.
fn pos(a: &Access) -> (StmtPath, bool) {
    (a.path.clone(), a.write)
}

fn contains_return(body: &[Stmt]) -> bool {
    body.iter().any(|s| {
        matches!(s, Stmt::Return) || s.child_lists().into_iter().any(|l| contains_return(l))
    })
}

/// `for (int v = lo; v < hi; ++v)` headers: returns the iterator name.
pub(crate) fn canonical_loop(s: &Stmt) -> Option<(String, Expr)> {
    let Stmt::For { init, step, .. } = s else {
        return None;
    };
    let (var, lo) = match init.as_deref()? {
        Stmt::Decl {
            name,
            init: Some(e),
            array_len: None,
            ..
        } => (name.clone(), e.clone()),
        Stmt::Assign {
            target: Expr::Var(n),
            op: crate::frontend::AssignOp::Set,
            value,
        } => (n.clone(), value.clone()),
        _ => return None,
    };
    let unit_step = match step.as_deref()? {
        Stmt::Assign {
            target: Expr::Var(n),
            op: crate::frontend::AssignOp::Add,
            value: Expr::Int(1),
        } => n == &var,
        Stmt::Assign {
            target: Expr::Var(n),
            op: crate::frontend::AssignOp::Set,
            value,
        } => {
            n == &var
                && matches!(value, Expr::Binary { op: crate::frontend::BinOp::Add, lhs, rhs }
                    if matches!(&**lhs, Expr::Var(x) if x == &var) && matches!(&**rhs, Expr::Int(1)))
        }
        _ => false,
    };
    unit_step.then_some((var, lo))
}

fn same_instances(p: &InstanceSpace, c: &InstanceSpace) -> bool {
    p.count() == c.count()
}

/// Kernels that can be merged into one: equal geometry and producer-first order per instance.
pub fn fusion_check(
    p: Launched,
    c: Launched,
    rel: &DependenceRelation,
    eliminate: &[String],
) -> Result<(), String> {
    if p.unit.mode != c.unit.mode {
        return Err("kernels use different execution modes".into());
    }
    let pt = touches(p)?;
    let ct = touches(c)?;
    match p.unit.mode {
        KernelMode::NdRange => {
            if p.ctx.launch != c.ctx.launch {
                return Err("workgroup size or count differs".into());
            }
            if contains_return(&p.unit.body) {
                return Err("producer returns early".into());
            }
        }
        KernelMode::SingleWorkItem => {
            for k in [p.unit, c.unit] {
                if k.body.len() != 1 || canonical_loop(&k.body[0]).is_none() {
                    return Err(format!("`{}` is not a single canonical loop", k.name));
                }
            }
            if !same_instances(&pt.space, &ct.space) {
                return Err("loop trip counts differ".into());
            }
        }
    }
    if !rel
        .buffers
        .iter()
        .all(|b| !pt.opaque.contains(b) && !ct.opaque.contains(b))
    {
        return Err("shared buffer accessed opaquely".into());
    }
    let ordered = |i: usize, j: usize| match p.unit.mode {
        KernelMode::NdRange => i == j,
        KernelMode::SingleWorkItem => i <= j,
    };
    for x in conflicts(p, &pt, c, &ct)? {
        if !ordered(x.p.instance, x.c.instance) {
            return Err(format!(
                "`{}`: producer instance {} conflicts with consumer instance {}",
                x.buffer, x.p.instance, x.c.instance
            ));
        }
    }
    for b in eliminate {
        eliminable(p, &pt, c, &ct, b)?;
    }
    Ok(())
}

/// Host buffer `b` can be replaced by a per-instance scalar in the fused kernel.
pub(crate) fn eliminable(
    p: Launched,
    pt: &Touches,
    c: Launched,
    ct: &Touches,
    b: &str,
) -> Result<(), String> {
    let pw: Vec<_> = pt
        .acc
        .accesses
        .iter()
        .filter(|a| host(p.ctx, &a.buffer) == b)
        .collect();
    if pw.len() != 1 || pw[0].direction != Direction::Write {
        return Err(format!(
            "`{b}` is not written by exactly one producer store"
        ));
    }
    let top_len = match p.unit.mode {
        KernelMode::NdRange => 1,
        KernelMode::SingleWorkItem => 2,
    };
    if pw[0].path.len() != top_len || !pw[0].loops.iter().all(|l| l.path.len() < top_len) {
        return Err(format!("store to `{b}` is nested inside control flow"));
    }
    let stmt = crate::frontend::stmt_at(&p.unit.body, &pw[0].path);
    if !matches!(
        stmt,
        Some(Stmt::Assign {
            op: crate::frontend::AssignOp::Set,
            target: Expr::Index { .. },
            ..
        })
    ) {
        return Err(format!("store to `{b}` is not a plain assignment"));
    }
    if ct
        .acc
        .accesses
        .iter()
        .any(|a| host(c.ctx, &a.buffer) == b && a.direction == Direction::Write)
    {
        return Err(format!("consumer writes `{b}`"));
    }
    let written: BTreeMap<usize, i64> = pt.by_buffer[b]
        .iter()
        .map(|a| (a.instance, a.element))
        .collect();
    if written.len() != pt.by_buffer[b].len() {
        return Err(format!("`{b}` written more than once per instance"));
    }
    for a in ct.by_buffer.get(b).into_iter().flatten() {
        if written.get(&a.instance) != Some(&a.element) {
            return Err(format!(
                "consumer instance {} reads `{b}` from another instance",
                a.instance
            ));
        }
    }
    Ok(())
}

/// Progress the consumer may assume: producer instances strictly below are complete,
/// the returned instance itself has reached its communicating store.
fn progress(rel: &DependenceRelation) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let mut before = Vec::with_capacity(rel.deps.len());
    let mut after = Vec::with_capacity(rel.deps.len());
    let mut m: Option<usize> = None;
    for d in &rel.deps {
        before.push(m);
        if let Some(&x) = d.iter().next_back() {
            m = Some(m.map_or(x, |v| v.max(x)));
        }
        after.push(m);
    }
    (before, after)
}

/// Producer and consumer can stream `rel.buffers` through FIFOs.
pub fn channel_check(p: Launched, c: Launched, rel: &DependenceRelation) -> Result<(), String> {
    if p.unit.mode == KernelMode::NdRange || c.unit.mode == KernelMode::NdRange {
        // Work-items of one group run in lock step between barriers; the FIFO
        // order is only defined for in-order pipelines without barriers.
        if has_barrier(&p.unit.body) || has_barrier(&c.unit.body) {
            return Err("barriers make the channel order undefined".into());
        }
    }
    let pt = touches(p)?;
    let ct = touches(c)?;
    let mut p_site = BTreeMap::new();
    let mut c_site = BTreeMap::new();
    for b in &rel.buffers {
        if pt.opaque.contains(b) || ct.opaque.contains(b) {
            return Err(format!("`{b}` accessed opaquely"));
        }
        let pw: Vec<_> = pt
            .acc
            .accesses
            .iter()
            .filter(|a| &host(p.ctx, &a.buffer) == b)
            .collect();
        let cr: Vec<_> = ct
            .acc
            .accesses
            .iter()
            .filter(|a| &host(c.ctx, &a.buffer) == b)
            .collect();
        if pw.len() != 1 || pw[0].direction != Direction::Write {
            return Err(format!(
                "`{b}` needs exactly one producer store and no producer loads"
            ));
        }
        if cr.len() != 1 || cr[0].direction != Direction::Read {
            return Err(format!(
                "`{b}` needs exactly one consumer load and no consumer stores"
            ));
        }
        let stmt = crate::frontend::stmt_at(&p.unit.body, &pw[0].path);
        if !matches!(
            stmt,
            Some(Stmt::Assign {
                op: crate::frontend::AssignOp::Set,
                ..
            })
        ) {
            return Err(format!("store to `{b}` is not a plain assignment"));
        }
        if !matches!(
            crate::frontend::stmt_at(&c.unit.body, &cr[0].path),
            Some(Stmt::Assign { .. } | Stmt::Decl { .. } | Stmt::Expr(_))
        ) {
            return Err(format!("load of `{b}` is not in a simple statement"));
        }
        let ws: Vec<i64> = pt
            .by_buffer
            .get(b)
            .into_iter()
            .flatten()
            .map(|a| a.element)
            .collect();
        let rs: Vec<i64> = ct
            .by_buffer
            .get(b)
            .into_iter()
            .flatten()
            .map(|a| a.element)
            .collect();
        if ws != rs {
            return Err(format!("write order of `{b}` differs from its read order"));
        }
        let mut uniq = ws.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != ws.len() {
            return Err(format!("`{b}` elements are written more than once"));
        }
        p_site.insert(b.clone(), pw[0].path.clone());
        c_site.insert(b.clone(), cr[0].path.clone());
    }
    let (before, after) = progress(rel);
    for x in conflicts(p, &pt, c, &ct)? {
        if rel.buffers.contains(&x.buffer) {
            continue;
        }
        let j = x.c.instance;
        // The consumer access is past a channel read of instance `j` if it
        // follows any read site in statement order.
        let past_read = c_site.values().any(|s| pos(&x.c) > (s.clone(), false));
        let bound = if past_read { after[j] } else { before[j] };
        let p_early = p_site.values().all(|s| pos(&x.p) < (s.clone(), true));
        let safe = match bound {
            Some(m) => x.p.instance < m || (x.p.instance == m && p_early),
            None => false,
        };
        if !safe {
            return Err(format!(
                "`{}`: concurrent access by producer instance {} and consumer instance {} is unordered",
                x.buffer, x.p.instance, j
            ));
        }
    }
    Ok(())
}

fn has_barrier(body: &[Stmt]) -> bool {
    body.iter().any(|s| match s {
        Stmt::Expr(Expr::Call { name, .. }) if name == "barrier" => true,
        _ => s.child_lists().into_iter().any(|l| has_barrier(l)),
    })
}

/// Producer and consumer can overlap through per-instance flags in global memory.
pub fn global_mem_check(p: Launched, c: Launched, rel: &DependenceRelation) -> Result<(), String> {
    if rel.conservative {
        return Err("relation is conservative".into());
    }
    match p.unit.mode {
        KernelMode::NdRange => {
            if contains_return(&p.unit.body) {
                return Err("producer returns early".into());
            }
        }
        KernelMode::SingleWorkItem => {
            for s in &p.unit.body {
                if matches!(s, Stmt::For { .. } | Stmt::While { .. }) && canonical_loop(s).is_none()
                {
                    return Err("producer loop is not in canonical form".into());
                }
            }
        }
    }
    let pt = touches(p)?;
    let ct = touches(c)?;
    for b in &rel.buffers {
        if pt.opaque.contains(b) || ct.opaque.contains(b) {
            return Err(format!("`{b}` accessed opaquely"));
        }
        let mut writer: BTreeMap<i64, usize> = BTreeMap::new();
        for a in pt
            .by_buffer
            .get(b)
            .into_iter()
            .flatten()
            .filter(|a| a.write)
        {
            if let Some(&w) = writer.get(&a.element) {
                if w != a.instance {
                    return Err(format!(
                        "element {} of `{b}` has several writers",
                        a.element
                    ));
                }
            }
            writer.insert(a.element, a.instance);
        }
        for a in ct
            .acc
            .accesses
            .iter()
            .filter(|a| &host(c.ctx, &a.buffer) == b && a.direction == Direction::Read)
        {
            if matches!(
                crate::frontend::stmt_at(&c.unit.body, &a.path),
                Some(Stmt::For { .. } | Stmt::While { .. })
            ) {
                return Err(format!("load of `{b}` sits in a loop header"));
            }
        }
    }
    for x in conflicts(p, &pt, c, &ct)? {
        if !rel.buffers.contains(&x.buffer) {
            return Err(format!("`{}` is shared outside the dependence", x.buffer));
        }
    }
    Ok(())
}

/// Element -> producer instance writing it, for each shared buffer.
pub fn writer_table(p: Launched, buffer: &str, len: u64) -> Result<Vec<i32>, String> {
    let pt = touches(p)?;
    let mut t = vec![-1i32; len as usize];
    for a in pt
        .by_buffer
        .get(buffer)
        .into_iter()
        .flatten()
        .filter(|a| a.write)
    {
        let slot = usize::try_from(a.element)
            .ok()
            .filter(|&e| e < t.len())
            .ok_or_else(|| format!("element {} of `{buffer}` out of bounds", a.element))?;
        t[slot] = a.instance as i32;
    }
    Ok(t)
}
