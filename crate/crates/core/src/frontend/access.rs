//! Extraction of affine global-memory accesses.
//!
//! Integer locals are propagated symbolically so that subscripts like
//! `m[peri_row_array_offset + tx]` resolve to polynomials over ids, loop
//! iterators and scalar parameters. Induction variables updated by a
//! loop-invariant `v += c` at the top level of a loop body are expressed in
//! terms of the loop iterator.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::ast::*;
use super::poly::{Poly, Sym};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Cmp {
    pub fn negate(self) -> Cmp {
        match self {
            Cmp::Lt => Cmp::Ge,
            Cmp::Le => Cmp::Gt,
            Cmp::Gt => Cmp::Le,
            Cmp::Ge => Cmp::Lt,
            Cmp::Eq => Cmp::Ne,
            Cmp::Ne => Cmp::Eq,
        }
    }

    pub fn holds(self, v: i64) -> bool {
        match self {
            Cmp::Lt => v < 0,
            Cmp::Le => v <= 0,
            Cmp::Gt => v > 0,
            Cmp::Ge => v >= 0,
            Cmp::Eq => v == 0,
            Cmp::Ne => v != 0,
        }
    }
}

/// Condition under which an access executes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Guard {
    /// `expr cmp 0`.
    Affine { expr: Poly, cmp: Cmp },
    /// Condition the analysis cannot model; the access may or may not execute.
    Unknown,
}

/// An analyzable loop enclosing an access.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopCtx {
    /// Unique iterator symbol name.
    pub iter: String,
    pub start: Poly,
    /// Exclusive end in the direction of `step`.
    pub end: Poly,
    pub step: i64,
    pub path: StmtPath,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineAccess {
    pub buffer: String,
    pub direction: Direction,
    pub index: Poly,
    /// Sequential number in traversal order.
    pub site: usize,
    /// Statement holding the subscript.
    pub path: StmtPath,
    /// Enclosing loops, outermost first.
    pub loops: Vec<LoopCtx>,
    pub guards: Vec<Guard>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AccessSet {
    pub accesses: Vec<AffineAccess>,
    /// Buffers with at least one subscript the analysis cannot express.
    pub opaque: BTreeSet<String>,
}

impl AccessSet {
    pub fn on<'a>(&'a self, buffer: &'a str) -> impl Iterator<Item = &'a AffineAccess> + 'a {
        self.accesses.iter().filter(move |a| a.buffer == buffer)
    }

    pub fn reads<'a>(&'a self, buffer: &'a str) -> impl Iterator<Item = &'a AffineAccess> + 'a {
        self.on(buffer).filter(|a| a.direction == Direction::Read)
    }

    pub fn writes<'a>(&'a self, buffer: &'a str) -> impl Iterator<Item = &'a AffineAccess> + 'a {
        self.on(buffer).filter(|a| a.direction == Direction::Write)
    }

    pub fn is_opaque(&self, buffer: &str) -> bool {
        self.opaque.contains(buffer)
    }

    pub fn reads_buffer(&self, buffer: &str) -> bool {
        self.is_opaque(buffer) || self.reads(buffer).next().is_some()
    }

    pub fn writes_buffer(&self, buffer: &str) -> bool {
        self.is_opaque(buffer) || self.writes(buffer).next().is_some()
    }
}

/// Collects every global-buffer subscript of `unit`.
pub fn extract_accesses(unit: &KernelUnit) -> AccessSet {
    let mut x = Extractor {
        unit,
        env: HashMap::new(),
        loops: Vec::new(),
        guards: Vec::new(),
        path: Vec::new(),
        opaque_depth: 0,
        iter_count: HashMap::new(),
        out: AccessSet::default(),
    };
    x.list(&unit.body, 0);
    x.out
}

struct Extractor<'a> {
    unit: &'a KernelUnit,
    /// Integer locals: `Some` when symbolically known, `None` when unknown.
    env: HashMap<String, Option<Poly>>,
    loops: Vec<LoopCtx>,
    guards: Vec<Guard>,
    path: StmtPath,
    opaque_depth: usize,
    iter_count: HashMap<String, usize>,
    out: AccessSet,
}

fn is_int(ty: ScalarType) -> bool {
    matches!(ty, ScalarType::Int | ScalarType::Uint)
}

/// Names assigned anywhere inside `stmts` (including loop headers).
pub(crate) fn assigned_vars(stmts: &[Stmt], out: &mut BTreeSet<String>) {
    for s in stmts {
        match s {
            Stmt::Assign {
                target: Expr::Var(v),
                ..
            } => {
                out.insert(v.clone());
            }
            Stmt::Decl { name, .. } => {
                out.insert(name.clone());
            }
            Stmt::For {
                init, step, body, ..
            } => {
                for h in init.iter().chain(step.iter()) {
                    assigned_vars(std::slice::from_ref(h), out);
                }
                assigned_vars(body, out);
            }
            Stmt::Opaque(text) => {
                for w in text.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
                    if !w.is_empty() {
                        out.insert(w.to_string());
                    }
                }
            }
            _ => {
                for l in s.child_lists() {
                    assigned_vars(l, out);
                }
            }
        }
    }
}

fn contains_return(stmts: &[Stmt]) -> bool {
    stmts.iter().any(|s| match s {
        Stmt::Return => true,
        Stmt::Opaque(t) => t
            .split_whitespace()
            .any(|w| w == "return" || w == "break" || w == "continue"),
        _ => s.child_lists().into_iter().any(|l| contains_return(l)),
    })
}

impl<'a> Extractor<'a> {
    fn is_buffer(&self, name: &str) -> bool {
        self.unit.param(name).is_some_and(|p| p.kind.is_buffer())
    }

    /// Polynomial value of an integer expression, if expressible.
    fn poly(&self, e: &Expr) -> Option<Poly> {
        match e {
            Expr::Int(v) => Some(Poly::constant(*v)),
            Expr::Var(n) => {
                if let Some(v) = self.env.get(n) {
                    return v.clone();
                }
                match self.unit.param(n).map(|p| p.kind) {
                    Some(ParamKind::Scalar(t)) if is_int(t) => {
                        Some(Poly::sym(Sym::Param(n.clone())))
                    }
                    _ => None,
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let l = self.poly(lhs)?;
                let r = self.poly(rhs)?;
                match op {
                    BinOp::Add => Some(l.add(&r)),
                    BinOp::Sub => Some(l.sub(&r)),
                    BinOp::Mul => Some(l.mul(&r)),
                    BinOp::Shl => {
                        let k = r.as_const()?;
                        (0..31).contains(&k).then(|| l.scale(1 << k))
                    }
                    _ => None,
                }
            }
            Expr::Unary {
                op: UnOp::Neg,
                expr,
            } => Some(self.poly(expr)?.scale(-1)),
            Expr::Cast { ty, expr } if is_int(*ty) => self.poly(expr),
            Expr::Call { name, args } if args.len() == 1 => {
                let Expr::Int(d) = args[0] else { return None };
                if !(0..3).contains(&d) {
                    return None;
                }
                let d = d as u8;
                let s = match name.as_str() {
                    "get_local_id" => Sym::LocalId(d),
                    "get_group_id" => Sym::GroupId(d),
                    "get_global_id" => Sym::GlobalId(d),
                    "get_local_size" => Sym::LocalSize(d),
                    "get_num_groups" => Sym::NumGroups(d),
                    "get_global_size" => Sym::GlobalSize(d),
                    _ => return None,
                };
                Some(Poly::sym(s))
            }
            _ => None,
        }
    }

    fn record(&mut self, buffer: &str, direction: Direction, index: &Expr) {
        let poly = self.poly(index).filter(|p| p.is_affine());
        match poly {
            Some(index) if self.opaque_depth == 0 => {
                let site = self.out.accesses.len();
                self.out.accesses.push(AffineAccess {
                    buffer: buffer.to_string(),
                    direction,
                    index,
                    site,
                    path: self.path.clone(),
                    loops: self.loops.clone(),
                    guards: self.guards.clone(),
                });
            }
            _ => {
                self.out.opaque.insert(buffer.to_string());
            }
        }
    }

    fn reads(&mut self, e: &Expr) {
        match e {
            Expr::Index { base, index } => {
                self.reads(index);
                if self.is_buffer(base) {
                    self.record(base, Direction::Read, index);
                }
            }
            Expr::Var(v) => {
                if self.is_buffer(v) {
                    self.out.opaque.insert(v.clone());
                }
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| self.reads(a)),
            Expr::Unary { expr, .. } | Expr::Cast { expr, .. } => self.reads(expr),
            Expr::Binary { lhs, rhs, .. } => {
                self.reads(lhs);
                self.reads(rhs);
            }
            Expr::Cond { cond, then, els } => {
                self.reads(cond);
                self.reads(then);
                self.reads(els);
            }
            Expr::Int(_) | Expr::Float { .. } => {}
        }
    }

    /// Affine guard for `cond`, or `Unknown`.
    fn guard(&self, cond: &Expr, negate: bool) -> Vec<Guard> {
        if let Expr::Binary {
            op: BinOp::And,
            lhs,
            rhs,
        } = cond
        {
            if !negate {
                let mut g = self.guard(lhs, false);
                g.extend(self.guard(rhs, false));
                return g;
            }
            return vec![Guard::Unknown];
        }
        if let Expr::Unary {
            op: UnOp::Not,
            expr,
        } = cond
        {
            return self.guard(expr, !negate);
        }
        let cmp = |op: &BinOp| match op {
            BinOp::Lt => Some(Cmp::Lt),
            BinOp::Le => Some(Cmp::Le),
            BinOp::Gt => Some(Cmp::Gt),
            BinOp::Ge => Some(Cmp::Ge),
            BinOp::Eq => Some(Cmp::Eq),
            BinOp::Ne => Some(Cmp::Ne),
            _ => None,
        };
        if let Expr::Binary { op, lhs, rhs } = cond {
            if let (Some(c), Some(l), Some(r)) = (cmp(op), self.poly(lhs), self.poly(rhs)) {
                let c = if negate { c.negate() } else { c };
                return vec![Guard::Affine {
                    expr: l.sub(&r),
                    cmp: c,
                }];
            }
        }
        vec![Guard::Unknown]
    }

    fn kill(&mut self, vars: &BTreeSet<String>) {
        for v in vars {
            if self.env.contains_key(v) {
                self.env.insert(v.clone(), None);
            }
        }
    }

    fn list(&mut self, stmts: &[Stmt], offset: usize) {
        let guards_before = self.guards.len();
        for (i, s) in stmts.iter().enumerate() {
            self.path.push(offset + i);
            self.stmt(s);
            self.path.pop();
            // Statements after a conditional return run only when it was not taken.
            if let Stmt::If {
                cond,
                then,
                els: None,
            } = s
            {
                if then.len() == 1 && then[0] == Stmt::Return {
                    let g = self.guard(cond, true);
                    self.guards.extend(g);
                    continue;
                }
            }
            if contains_return(std::slice::from_ref(s)) {
                self.guards.push(Guard::Unknown);
            }
        }
        self.guards.truncate(guards_before);
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Decl {
                ty,
                name,
                array_len,
                init,
                ..
            } => {
                if let Some(l) = array_len {
                    self.reads(l);
                }
                if let Some(i) = init {
                    self.reads(i);
                }
                let value = if is_int(*ty) && array_len.is_none() {
                    init.as_ref().and_then(|i| self.poly(i))
                } else {
                    None
                };
                self.env.insert(name.clone(), value);
            }
            Stmt::Assign { target, op, value } => {
                self.reads(value);
                match target {
                    Expr::Index { base, index } => {
                        self.reads(index);
                        if self.is_buffer(base) {
                            if *op != AssignOp::Set {
                                self.record(base, Direction::Read, index);
                            }
                            self.record(base, Direction::Write, index);
                        }
                    }
                    Expr::Var(v) => {
                        if self.is_buffer(v) {
                            self.out.opaque.insert(v.clone());
                        }
                        if self.env.contains_key(v) {
                            let old = self.env.get(v).cloned().flatten();
                            let rhs = self.poly(value);
                            let new = match op {
                                AssignOp::Set => rhs,
                                AssignOp::Add => old.zip(rhs).map(|(o, r)| o.add(&r)),
                                AssignOp::Sub => old.zip(rhs).map(|(o, r)| o.sub(&r)),
                                AssignOp::Mul => old.zip(rhs).map(|(o, r)| o.mul(&r)),
                                AssignOp::Div => None,
                            };
                            self.env.insert(v.clone(), new);
                        }
                    }
                    other => self.reads(other),
                }
            }
            Stmt::For {
                init,
                cond,
                step,
                body,
            } => self.for_loop(init.as_deref(), cond.as_ref(), step.as_deref(), body),
            Stmt::If { cond, then, els } => {
                self.reads(cond);
                let saved = self.env.clone();
                let n = self.guards.len();
                let g = self.guard(cond, false);
                self.guards.extend(g);
                self.list(then, 0);
                self.guards.truncate(n);
                self.env = saved.clone();
                if let Some(e) = els {
                    let g = self.guard(cond, true);
                    self.guards.extend(g);
                    self.list(e, then.len());
                    self.guards.truncate(n);
                    self.env = saved;
                }
                let mut assigned = BTreeSet::new();
                assigned_vars(then, &mut assigned);
                if let Some(e) = els {
                    assigned_vars(e, &mut assigned);
                }
                self.kill(&assigned);
            }
            Stmt::While { cond, body } => {
                let mut assigned = BTreeSet::new();
                assigned_vars(body, &mut assigned);
                self.kill(&assigned);
                self.opaque_depth += 1;
                self.reads(cond);
                self.list(body, 0);
                self.opaque_depth -= 1;
                self.kill(&assigned);
            }
            Stmt::Block(body) => self.list(body, 0),
            Stmt::Expr(e) => self.reads(e),
            Stmt::Opaque(text) => {
                let words: BTreeSet<String> = text
                    .split(|c: char| !(c.is_alphanumeric() || c == '_'))
                    .filter(|w| !w.is_empty())
                    .map(str::to_string)
                    .collect();
                for p in self.unit.buffer_params() {
                    if words.contains(&p.name) {
                        self.out.opaque.insert(p.name.clone());
                    }
                }
                self.kill(&words);
            }
            Stmt::Return | Stmt::Pragma(_) => {}
        }
    }

    fn loop_header(
        &self,
        init: Option<&Stmt>,
        cond: Option<&Expr>,
        step: Option<&Stmt>,
    ) -> Option<(String, Poly, Poly, i64)> {
        let (name, start) = match init? {
            Stmt::Decl {
                ty,
                name,
                init: Some(v),
                array_len: None,
                ..
            } if is_int(*ty) => (name.clone(), self.poly(v)?),
            Stmt::Assign {
                target: Expr::Var(name),
                op: AssignOp::Set,
                value,
            } => (name.clone(), self.poly(value)?),
            _ => return None,
        };
        let step = match step? {
            Stmt::Assign {
                target: Expr::Var(v),
                op,
                value: Expr::Int(c),
            } if *v == name && *c > 0 => match op {
                AssignOp::Add => *c,
                AssignOp::Sub => -*c,
                _ => return None,
            },
            _ => return None,
        };
        let Expr::Binary { op, lhs, rhs } = cond? else {
            return None;
        };
        let (op, bound) = match (&**lhs, &**rhs) {
            (Expr::Var(v), b) if *v == name => (*op, b),
            (b, Expr::Var(v)) if *v == name => (
                match op {
                    BinOp::Lt => BinOp::Gt,
                    BinOp::Le => BinOp::Ge,
                    BinOp::Gt => BinOp::Lt,
                    BinOp::Ge => BinOp::Le,
                    o => *o,
                },
                b,
            ),
            _ => return None,
        };
        let bound = self.poly(bound)?;
        if bound.mentions(|s| *s == Sym::Param(name.clone())) {
            return None;
        }
        let end = match (op, step > 0) {
            (BinOp::Lt | BinOp::Ne, true) => bound,
            (BinOp::Le, true) => bound.add(&Poly::constant(1)),
            (BinOp::Gt | BinOp::Ne, false) => bound,
            (BinOp::Ge, false) => bound.sub(&Poly::constant(1)),
            _ => return None,
        };
        if !start.is_affine() || !end.is_affine() {
            return None;
        }
        Some((name, start, end, step))
    }

    fn for_loop(
        &mut self,
        init: Option<&Stmt>,
        cond: Option<&Expr>,
        step: Option<&Stmt>,
        body: &[Stmt],
    ) {
        if let Some(i) = init {
            match i {
                Stmt::Decl { init: Some(v), .. } | Stmt::Assign { value: v, .. } => self.reads(v),
                _ => {}
            }
        }
        let mut assigned = BTreeSet::new();
        assigned_vars(body, &mut assigned);
        let header = self.loop_header(init, cond, step);
        let header = header.filter(|(name, ..)| !assigned.contains(name));
        let Some((name, start, end, step_v)) = header else {
            // Unanalyzable loop: everything inside is opaque.
            if let Some(
                Stmt::Decl { name, .. }
                | Stmt::Assign {
                    target: Expr::Var(name),
                    ..
                },
            ) = init
            {
                assigned.insert(name.clone());
            }
            self.kill(&assigned);
            self.opaque_depth += 1;
            if let Some(c) = cond {
                self.reads(c);
            }
            self.list(body, 0);
            self.opaque_depth -= 1;
            self.kill(&assigned);
            return;
        };
        let n = self.iter_count.entry(name.clone()).or_insert(0);
        *n += 1;
        let sym_name = if *n == 1 {
            name.clone()
        } else {
            format!("{name}#{n}")
        };
        let it = Poly::sym(Sym::Iter(sym_name.clone()));
        let trip_so_far = if step_v > 0 {
            it.sub(&start)
        } else {
            start.sub(&it)
        };
        let unit_steps = step_v.abs() == 1;

        // Induction variables: single top-level `v += e` with loop-invariant `e`.
        let mut inductions = Vec::new();
        for v in &assigned {
            let Some(Some(v0)) = self.env.get(v).cloned() else {
                continue;
            };
            let updates: Vec<&Stmt> = body
                .iter()
                .filter(|s| matches!(s, Stmt::Assign { target: Expr::Var(t), .. } if t == v))
                .collect();
            let mut nested = BTreeSet::new();
            for s in body {
                if !matches!(s, Stmt::Assign { target: Expr::Var(t), .. } if t == v) {
                    assigned_vars(std::slice::from_ref(s), &mut nested);
                }
            }
            if updates.len() != 1 || nested.contains(v) || !unit_steps {
                continue;
            }
            let Stmt::Assign { op, value, .. } = updates[0] else {
                continue;
            };
            let sign = match op {
                AssignOp::Add => 1,
                AssignOp::Sub => -1,
                _ => continue,
            };
            // Evaluate the increment with body-assigned variables unknown.
            let mut probe = self.env.clone();
            for a in &assigned {
                if probe.contains_key(a) {
                    probe.insert(a.clone(), None);
                }
            }
            let saved = std::mem::replace(&mut self.env, probe);
            let inc = self.poly(value);
            self.env = saved;
            if let Some(inc) = inc.filter(|p| !p.mentions(|s| *s == Sym::Iter(sym_name.clone()))) {
                inductions.push((v.clone(), v0, inc.scale(sign)));
            }
        }
        self.kill(&assigned);
        for (v, v0, inc) in &inductions {
            self.env
                .insert(v.clone(), Some(v0.add(&inc.mul(&trip_so_far))));
        }
        self.env.insert(name.clone(), Some(it));
        self.loops.push(LoopCtx {
            iter: sym_name,
            start: start.clone(),
            end: end.clone(),
            step: step_v,
            path: self.path.clone(),
        });
        if let Some(c) = cond {
            self.reads(c);
        }
        self.list(body, 0);
        self.loops.pop();
        self.kill(&assigned);
        let trips = if step_v > 0 {
            end.sub(&start)
        } else {
            start.sub(&end)
        };
        for (v, v0, inc) in inductions {
            self.env.insert(v, Some(v0.add(&inc.mul(&trips))));
        }
        self.env.insert(name, None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_kernel;

    #[test]
    fn non_affine_subscript_is_opaque() {
        let k = parse_kernel("__kernel void k(__global int* a, int n){ for (int i = 0; i < n; i++) { a[i * i] = 1; } }")
            .unwrap();
        let acc = extract_accesses(&k);
        assert!(acc.accesses.is_empty());
        assert!(acc.is_opaque("a"));
    }

    #[test]
    fn induction_variable_resolves() {
        let k = parse_kernel(
            "__kernel void k(__global int* a, int n, int s){ int off = 3; \
             for (int i = 0; i < n; i++) { a[off] = i; off += s; } a[off] = 0; }",
        )
        .unwrap();
        let acc = extract_accesses(&k);
        assert_eq!(acc.accesses[0].index.to_string(), "i*s + 3");
        assert_eq!(acc.accesses[1].index.to_string(), "n*s + 3");
    }

    #[test]
    fn early_return_adds_guard() {
        let k = parse_kernel(
            "__kernel void k(__global int* a, int n){ int g = get_global_id(0); if (g >= n) return; a[g] = 1; }",
        )
        .unwrap();
        let acc = extract_accesses(&k);
        assert_eq!(acc.accesses[0].guards.len(), 1);
    }
}
