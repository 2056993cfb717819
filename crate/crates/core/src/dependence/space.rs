//! Instance spaces and concrete access enumeration.
//!
//! An NDRange instance is one work-item, numbered in dispatch order (groups
//! in row-major order, dimension 0 fastest; items likewise inside a group).
//! A single work-item instance is one iteration of a top-level loop, or a
//! whole top-level statement that is not an analyzable loop.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frontend::{
    AccessSet, AffineAccess, Direction, Guard, KernelMode, KernelUnit, LoopCtx, ParamKind, Poly,
    Stmt, Sym,
};
use crate::host::{Arg, DfgNode, Launch};

/// Upper bound on enumerated (instance, iteration) points per kernel.
pub const ENUMERATION_CAP: usize = 1 << 23;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    /// Top-level statement index.
    pub stmt: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSpace {
    Items { global: Vec<u64>, local: Vec<u64> },
    Iterations { segments: Vec<Segment> },
}

fn unflatten(mut v: u64, extents: &[u64]) -> Vec<u64> {
    extents
        .iter()
        .map(|&e| {
            let e = e.max(1);
            let d = v % e;
            v /= e;
            d
        })
        .collect()
}

fn flatten(t: &[u64], extents: &[u64]) -> u64 {
    t.iter()
        .zip(extents)
        .rev()
        .fold(0, |acc, (&d, &e)| acc * e + d)
}

impl InstanceSpace {
    pub fn is_ndrange(&self) -> bool {
        matches!(self, InstanceSpace::Items { .. })
    }

    pub fn dims(&self) -> usize {
        match self {
            InstanceSpace::Items { global, .. } => global.len(),
            InstanceSpace::Iterations { .. } => 1,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            InstanceSpace::Items { global, .. } => global.iter().product::<u64>() as usize,
            InstanceSpace::Iterations { segments } => {
                segments.iter().map(|s| s.count).sum::<u64>() as usize
            }
        }
    }

    /// Workgroup extents per dimension; a single work-item kernel is one group.
    pub fn groups(&self) -> Vec<u64> {
        match self {
            InstanceSpace::Items { global, local } => {
                global.iter().zip(local).map(|(g, l)| g / l).collect()
            }
            InstanceSpace::Iterations { .. } => vec![1],
        }
    }

    pub fn local(&self) -> Vec<u64> {
        match self {
            InstanceSpace::Items { local, .. } => local.clone(),
            InstanceSpace::Iterations { .. } => vec![self.count() as u64],
        }
    }

    pub fn group_count(&self) -> usize {
        self.groups().iter().product::<u64>() as usize
    }

    pub fn group_size(&self) -> usize {
        self.local().iter().product::<u64>() as usize
    }

    pub fn group_of(&self, instance: usize) -> usize {
        instance / self.group_size().max(1)
    }

    /// Group id tuple, dimension 0 first.
    pub fn group_tuple(&self, group: usize) -> Vec<u64> {
        unflatten(group as u64, &self.groups())
    }

    pub fn local_tuple(&self, local: usize) -> Vec<u64> {
        unflatten(local as u64, &self.local())
    }

    pub fn group_index(&self, tuple: &[u64]) -> usize {
        flatten(tuple, &self.groups()) as usize
    }

    /// Dispatch index of the item with the given group and local tuples.
    pub fn item_index(&self, group: &[u64], local: &[u64]) -> usize {
        self.group_index(group) * self.group_size() + flatten(local, &self.local()) as usize
    }

    /// Global id tuple of an NDRange item, dimension 0 first.
    pub fn global_tuple(&self, instance: usize) -> Vec<u64> {
        let gs = self.group_size();
        let g = self.group_tuple(instance / gs);
        let l = self.local_tuple(instance % gs);
        let local = self.local();
        (0..g.len()).map(|d| g[d] * local[d] + l[d]).collect()
    }
}

/// Concrete launch of one kernel: geometry, integer scalars and buffer bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct LaunchCtx {
    pub launch: Launch,
    /// Integer scalar parameter values.
    pub scalars: BTreeMap<String, i64>,
    /// Kernel parameter -> host buffer.
    pub bindings: BTreeMap<String, String>,
}

impl LaunchCtx {
    pub fn from_node(unit: &KernelUnit, node: &DfgNode) -> LaunchCtx {
        LaunchCtx::new(unit, &node.args, &node.launch)
    }

    pub fn new(unit: &KernelUnit, args: &[Arg], launch: &Launch) -> LaunchCtx {
        let mut scalars = BTreeMap::new();
        let mut bindings = BTreeMap::new();
        for (p, a) in unit.params.iter().zip(args) {
            match (p.kind, a) {
                (ParamKind::Scalar(_), Arg::Int(v)) => {
                    scalars.insert(p.name.clone(), *v);
                }
                (k, Arg::Buffer(b)) if k.is_buffer() => {
                    bindings.insert(p.name.clone(), b.clone());
                }
                _ => {}
            }
        }
        LaunchCtx {
            launch: launch.clone(),
            scalars,
            bindings,
        }
    }

    /// Same launch with group counts and integer scalars multiplied by `f`.
    pub fn scaled(&self, f: u64) -> LaunchCtx {
        let launch = match &self.launch {
            Launch::Task => Launch::Task,
            Launch::NdRange { global, local } => Launch::NdRange {
                global: global.iter().map(|g| g * f).collect(),
                local: local.clone(),
            },
        };
        LaunchCtx {
            launch,
            scalars: self
                .scalars
                .iter()
                .map(|(k, v)| (k.clone(), v * f as i64))
                .collect(),
            bindings: self.bindings.clone(),
        }
    }

    fn host_buffer(&self, param: &str) -> String {
        self.bindings
            .get(param)
            .cloned()
            .unwrap_or_else(|| param.to_string())
    }
}

/// Value of a symbol that does not depend on the instance.
fn static_sym(ctx: &LaunchCtx, s: &Sym) -> Option<i64> {
    let launch = &ctx.launch;
    match s {
        Sym::Param(n) => ctx.scalars.get(n).copied(),
        Sym::LocalSize(d) => Some(launch.local(*d as usize) as i64),
        Sym::NumGroups(d) => Some(launch.groups(*d as usize) as i64),
        Sym::GlobalSize(d) => Some(launch.global(*d as usize) as i64),
        _ => None,
    }
}

fn trip_values(l: &LoopCtx, eval: &impl Fn(&Poly) -> Option<i64>) -> Option<Vec<i64>> {
    let (start, end) = (eval(&l.start)?, eval(&l.end)?);
    if l.step == 0 {
        return None;
    }
    let mut out = Vec::new();
    let mut v = start;
    while (l.step > 0 && v < end) || (l.step < 0 && v > end) {
        out.push(v);
        if out.len() > ENUMERATION_CAP {
            return None;
        }
        v += l.step;
    }
    Some(out)
}

/// Builds the instance space of `unit` under `ctx`.
pub fn instance_space(unit: &KernelUnit, acc: &AccessSet, ctx: &LaunchCtx) -> InstanceSpace {
    match (&ctx.launch, unit.mode) {
        (Launch::NdRange { global, local }, _) => InstanceSpace::Items {
            global: global.clone(),
            local: local.clone(),
        },
        (Launch::Task, _) if unit.mode == KernelMode::NdRange => InstanceSpace::Items {
            global: vec![1],
            local: vec![1],
        },
        (Launch::Task, _) => {
            let segments = unit
                .body
                .iter()
                .enumerate()
                .map(|(t, s)| Segment {
                    stmt: t,
                    count: top_loop_count(acc, ctx, t, s).unwrap_or(1),
                })
                .collect();
            InstanceSpace::Iterations { segments }
        }
    }
}

fn top_loop(acc: &AccessSet, t: usize) -> Option<&LoopCtx> {
    acc.accesses
        .iter()
        .filter_map(|a| a.loops.first())
        .find(|l| l.path == [t])
}

fn top_loop_count(acc: &AccessSet, ctx: &LaunchCtx, t: usize, s: &Stmt) -> Option<u64> {
    if !matches!(s, Stmt::For { .. }) {
        return None;
    }
    let l = top_loop(acc, t)?;
    let eval = |p: &Poly| p.eval(&|s| static_sym(ctx, s));
    Some(trip_values(l, &eval)?.len() as u64)
}

/// One executed access: instance, element and position in the instance's iteration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Touch {
    pub instance: usize,
    pub element: i64,
}

/// Calls `f` for every execution of `access`, in dispatch then iteration order.
///
/// Returns `false` if the access cannot be evaluated concretely.
pub fn enumerate_access(
    space: &InstanceSpace,
    ctx: &LaunchCtx,
    access: &AffineAccess,
    f: &mut dyn FnMut(Touch),
) -> Result<bool> {
    let mut budget = ENUMERATION_CAP;
    match space {
        InstanceSpace::Items { .. } => {
            let gs = space.group_size();
            for inst in 0..space.count() {
                let g = space.group_tuple(inst / gs);
                let l = space.local_tuple(inst % gs);
                let ids = |s: &Sym| -> Option<i64> {
                    let local = space.local();
                    match s {
                        Sym::GroupId(d) => g.get(*d as usize).map(|&v| v as i64).or(Some(0)),
                        Sym::LocalId(d) => l.get(*d as usize).map(|&v| v as i64).or(Some(0)),
                        Sym::GlobalId(d) => {
                            let d = *d as usize;
                            Some(g.get(d).map_or(0, |&gv| (gv * local[d] + l[d]) as i64))
                        }
                        _ => static_sym(ctx, s),
                    }
                };
                if !walk(
                    access,
                    0,
                    &ids,
                    &mut HashMap::new(),
                    &mut |e| {
                        f(Touch {
                            instance: inst,
                            element: e,
                        })
                    },
                    &mut budget,
                )? {
                    return Ok(false);
                }
            }
        }
        InstanceSpace::Iterations { segments } => {
            let top = access.path.first().copied().unwrap_or(0);
            let base: u64 = segments
                .iter()
                .take_while(|s| s.stmt != top)
                .map(|s| s.count)
                .sum();
            let seg = segments.iter().find(|s| s.stmt == top);
            let ids = |s: &Sym| -> Option<i64> {
                match s {
                    Sym::GroupId(_) | Sym::LocalId(_) | Sym::GlobalId(_) => Some(0),
                    _ => static_sym(ctx, s),
                }
            };
            let in_top_loop = access.loops.first().is_some_and(|l| l.path == [top]);
            if in_top_loop {
                let l0 = &access.loops[0];
                let eval = |p: &Poly| p.eval(&ids);
                let Some(vals) = trip_values(l0, &eval) else {
                    return Ok(false);
                };
                if seg.map(|s| s.count) != Some(vals.len() as u64) {
                    return Ok(false);
                }
                for (k, v) in vals.into_iter().enumerate() {
                    let mut iters = HashMap::new();
                    iters.insert(l0.iter.clone(), v);
                    let inst = (base + k as u64) as usize;
                    if !walk(
                        access,
                        1,
                        &ids,
                        &mut iters,
                        &mut |e| {
                            f(Touch {
                                instance: inst,
                                element: e,
                            })
                        },
                        &mut budget,
                    )? {
                        return Ok(false);
                    }
                }
            } else if !walk(
                access,
                0,
                &ids,
                &mut HashMap::new(),
                &mut |e| {
                    f(Touch {
                        instance: base as usize,
                        element: e,
                    })
                },
                &mut budget,
            )? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Enumerates loops `depth..` of `access`, then checks guards and evaluates the index.
fn walk(
    access: &AffineAccess,
    depth: usize,
    ids: &dyn Fn(&Sym) -> Option<i64>,
    iters: &mut HashMap<String, i64>,
    f: &mut dyn FnMut(i64),
    budget: &mut usize,
) -> Result<bool> {
    let lookup = |iters: &HashMap<String, i64>, s: &Sym| match s {
        Sym::Iter(n) => iters.get(n).copied(),
        _ => ids(s),
    };
    if depth == access.loops.len() {
        *budget = budget.checked_sub(1).ok_or_else(|| {
            Error::Dependence("access enumeration exceeds the interpreter cap".into())
        })?;
        for g in &access.guards {
            if let Guard::Affine { expr, cmp } = g {
                match expr.eval(&|s| lookup(iters, s)) {
                    Some(v) if !cmp.holds(v) => return Ok(true),
                    Some(_) => {}
                    None => return Ok(false),
                }
            }
        }
        return match access.index.eval(&|s| lookup(iters, s)) {
            Some(e) => {
                f(e);
                Ok(true)
            }
            None => Ok(false),
        };
    }
    let l = &access.loops[depth];
    let Some(vals) = trip_values(l, &|p| p.eval(&|s| lookup(iters, s))) else {
        return Ok(false);
    };
    for v in vals {
        iters.insert(l.iter.clone(), v);
        if !walk(access, depth + 1, ids, iters, f, budget)? {
            return Ok(false);
        }
    }
    iters.remove(&l.iter);
    Ok(true)
}

/// Element sets touched by every instance of one launch, keyed by host buffer.
#[derive(Debug, Clone, Default)]
pub struct Footprint {
    /// Buffer -> element -> instances reading it.
    pub reads: BTreeMap<String, BTreeMap<i64, BTreeSet<usize>>>,
    pub writes: BTreeMap<String, BTreeMap<i64, BTreeSet<usize>>>,
    /// Buffers whose accesses could not be enumerated.
    pub opaque: BTreeSet<String>,
}

impl Footprint {
    pub fn touches(&self, buffer: &str) -> bool {
        self.reads.contains_key(buffer)
            || self.writes.contains_key(buffer)
            || self.opaque.contains(buffer)
    }
}

pub fn footprint(acc: &AccessSet, ctx: &LaunchCtx, space: &InstanceSpace) -> Result<Footprint> {
    let mut fp = Footprint::default();
    for b in &acc.opaque {
        fp.opaque.insert(ctx.host_buffer(b));
    }
    for a in &acc.accesses {
        let host = ctx.host_buffer(&a.buffer);
        let mut touches = Vec::new();
        let ok = enumerate_access(space, ctx, a, &mut |t| touches.push(t))?;
        if !ok {
            fp.opaque.insert(host);
            continue;
        }
        let map = match a.direction {
            Direction::Read => &mut fp.reads,
            Direction::Write => &mut fp.writes,
        };
        let per = map.entry(host).or_default();
        for t in touches {
            per.entry(t.element).or_default().insert(t.instance);
        }
    }
    Ok(fp)
}
