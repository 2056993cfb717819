//! Small AST rewriting utilities shared by the transforms.

use std::collections::{BTreeMap, BTreeSet};

use crate::frontend::{Expr, Stmt};

/// Visits `e` and all sub-expressions, children first.
pub fn walk_expr_mut(e: &mut Expr, f: &mut dyn FnMut(&mut Expr)) {
    match e {
        Expr::Index { index, .. } => walk_expr_mut(index, f),
        Expr::Call { args, .. } => args.iter_mut().for_each(|a| walk_expr_mut(a, f)),
        Expr::Unary { expr, .. } | Expr::Cast { expr, .. } => walk_expr_mut(expr, f),
        Expr::Binary { lhs, rhs, .. } => {
            walk_expr_mut(lhs, f);
            walk_expr_mut(rhs, f);
        }
        Expr::Cond { cond, then, els } => {
            walk_expr_mut(cond, f);
            walk_expr_mut(then, f);
            walk_expr_mut(els, f);
        }
        Expr::Int(_) | Expr::Float { .. } | Expr::Var(_) => {}
    }
    f(e);
}

pub fn walk_expr(e: &Expr, f: &mut dyn FnMut(&Expr)) {
    match e {
        Expr::Index { index, .. } => walk_expr(index, f),
        Expr::Call { args, .. } => args.iter().for_each(|a| walk_expr(a, f)),
        Expr::Unary { expr, .. } | Expr::Cast { expr, .. } => walk_expr(expr, f),
        Expr::Binary { lhs, rhs, .. } => {
            walk_expr(lhs, f);
            walk_expr(rhs, f);
        }
        Expr::Cond { cond, then, els } => {
            walk_expr(cond, f);
            walk_expr(then, f);
            walk_expr(els, f);
        }
        Expr::Int(_) | Expr::Float { .. } | Expr::Var(_) => {}
    }
    f(e);
}

/// Applies `f` to every expression owned directly by `s` (not by nested statement lists).
pub fn stmt_exprs_mut(s: &mut Stmt, f: &mut dyn FnMut(&mut Expr)) {
    match s {
        Stmt::Decl {
            array_len, init, ..
        } => {
            if let Some(e) = array_len {
                walk_expr_mut(e, f);
            }
            if let Some(e) = init {
                walk_expr_mut(e, f);
            }
        }
        Stmt::Assign { target, value, .. } => {
            walk_expr_mut(value, f);
            walk_expr_mut(target, f);
        }
        Stmt::For {
            init, cond, step, ..
        } => {
            if let Some(i) = init {
                stmt_exprs_mut(i, f);
            }
            if let Some(c) = cond {
                walk_expr_mut(c, f);
            }
            if let Some(st) = step {
                stmt_exprs_mut(st, f);
            }
        }
        Stmt::If { cond, .. } | Stmt::While { cond, .. } => walk_expr_mut(cond, f),
        Stmt::Expr(e) => walk_expr_mut(e, f),
        Stmt::Block(_) | Stmt::Return | Stmt::Pragma(_) | Stmt::Opaque(_) => {}
    }
}

/// Applies `f` to every expression in `body`, recursively.
pub fn body_exprs_mut(body: &mut [Stmt], f: &mut dyn FnMut(&mut Expr)) {
    for s in body {
        stmt_exprs_mut(s, f);
        for l in s.child_lists_mut() {
            body_exprs_mut(l, f);
        }
    }
}

pub fn body_exprs(body: &[Stmt], f: &mut dyn FnMut(&Expr)) {
    for s in body {
        match s {
            Stmt::Decl {
                array_len, init, ..
            } => {
                array_len
                    .iter()
                    .chain(init.iter())
                    .for_each(|e| walk_expr(e, f));
            }
            Stmt::Assign { target, value, .. } => {
                walk_expr(value, f);
                walk_expr(target, f);
            }
            Stmt::For {
                init, cond, step, ..
            } => {
                for st in init.iter().chain(step.iter()) {
                    body_exprs(std::slice::from_ref(&**st), f);
                }
                if let Some(c) = cond {
                    walk_expr(c, f);
                }
            }
            Stmt::If { cond, .. } | Stmt::While { cond, .. } => walk_expr(cond, f),
            Stmt::Expr(e) => walk_expr(e, f),
            Stmt::Block(_) | Stmt::Return | Stmt::Pragma(_) | Stmt::Opaque(_) => {}
        }
        for l in s.child_lists() {
            body_exprs(l, f);
        }
    }
}

/// Names declared anywhere in `body`, including loop iterators.
pub fn declared_names(body: &[Stmt]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    fn go(body: &[Stmt], out: &mut BTreeSet<String>) {
        for s in body {
            match s {
                Stmt::Decl { name, .. } => {
                    out.insert(name.clone());
                }
                Stmt::For { init: Some(i), .. } => {
                    if let Stmt::Decl { name, .. } = &**i {
                        out.insert(name.clone());
                    }
                }
                _ => {}
            }
            for l in s.child_lists() {
                go(l, out);
            }
        }
    }
    go(body, &mut out);
    out
}

/// Renames variables, array bases and declarations according to `map`.
pub fn rename(body: &mut [Stmt], map: &BTreeMap<String, String>) {
    if map.is_empty() {
        return;
    }
    body_exprs_mut(body, &mut |e| match e {
        Expr::Var(n) | Expr::Index { base: n, .. } => {
            if let Some(r) = map.get(n) {
                *n = r.clone();
            }
        }
        _ => {}
    });
    fn decls(body: &mut [Stmt], map: &BTreeMap<String, String>) {
        for s in body.iter_mut() {
            match s {
                Stmt::Decl { name, .. } => {
                    if let Some(r) = map.get(name) {
                        *name = r.clone();
                    }
                }
                Stmt::For { init: Some(i), .. } => {
                    if let Stmt::Decl { name, .. } = &mut **i {
                        if let Some(r) = map.get(name) {
                            *name = r.clone();
                        }
                    }
                }
                _ => {}
            }
            for l in s.child_lists_mut() {
                decls(l, map);
            }
        }
    }
    decls(body, map);
}

/// First name of the form `base`, `base_1`, `base_2`, ... not in `taken`.
pub fn fresh(base: &str, taken: &BTreeSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (1..)
        .map(|i| format!("{base}_{i}"))
        .find(|n| !taken.contains(n))
        .unwrap()
}

/// True if `e` reads `buffer` through a subscript.
pub fn mentions_buffer(e: &Expr, buffer: &str) -> bool {
    let mut hit = false;
    walk_expr(e, &mut |x| {
        if matches!(x, Expr::Index { base, .. } if base == buffer) {
            hit = true;
        }
    });
    hit
}
