//! Integer polynomials over index symbols.
//!
//! Access subscripts are kept as polynomials so that parametric coefficients
//! (`i * mat_dim`) survive; an access is affine when no monomial multiplies two
//! instance dimensions together.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display, Formatter};

use serde::{Serialize, Serializer};

use super::ast::{BinOp, Expr};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    LocalId(u8),
    GroupId(u8),
    GlobalId(u8),
    LocalSize(u8),
    NumGroups(u8),
    GlobalSize(u8),
    /// Loop iterator (unique within a kernel).
    Iter(String),
    /// Scalar kernel parameter, kept uninterpreted.
    Param(String),
}

impl Sym {
    /// Instance dimensions: work-item ids and loop iterators.
    pub fn is_instance_dim(&self) -> bool {
        matches!(
            self,
            Sym::LocalId(_) | Sym::GroupId(_) | Sym::GlobalId(_) | Sym::Iter(_)
        )
    }

    /// Symbols whose value depends on the launch size.
    pub fn is_size(&self) -> bool {
        matches!(
            self,
            Sym::LocalSize(_) | Sym::NumGroups(_) | Sym::GlobalSize(_)
        )
    }

    /// Source expression evaluating this symbol inside a kernel.
    pub fn to_expr(&self) -> Expr {
        let call = |name: &str, d: u8| Expr::call(name, vec![Expr::Int(d as i64)]);
        match self {
            Sym::LocalId(d) => call("get_local_id", *d),
            Sym::GroupId(d) => call("get_group_id", *d),
            Sym::GlobalId(d) => call("get_global_id", *d),
            Sym::LocalSize(d) => call("get_local_size", *d),
            Sym::NumGroups(d) => call("get_num_groups", *d),
            Sym::GlobalSize(d) => call("get_global_size", *d),
            Sym::Iter(n) | Sym::Param(n) => Expr::var(n.clone()),
        }
    }
}

impl Display for Sym {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Sym::LocalId(d) => write!(f, "local_id.{d}"),
            Sym::GroupId(d) => write!(f, "group_id.{d}"),
            Sym::GlobalId(d) => write!(f, "global_id.{d}"),
            Sym::LocalSize(d) => write!(f, "local_size.{d}"),
            Sym::NumGroups(d) => write!(f, "num_groups.{d}"),
            Sym::GlobalSize(d) => write!(f, "global_size.{d}"),
            Sym::Iter(n) | Sym::Param(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Poly {
    /// Sorted monomial -> non-zero coefficient.
    terms: BTreeMap<Vec<Sym>, i64>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn constant(c: i64) -> Self {
        let mut p = Poly::zero();
        if c != 0 {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    pub fn sym(s: Sym) -> Self {
        let mut p = Poly::zero();
        p.terms.insert(vec![s], 1);
        p
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[Sym], i64)> {
        self.terms.iter().map(|(m, c)| (m.as_slice(), *c))
    }

    fn add_term(&mut self, mono: Vec<Sym>, c: i64) {
        let e = self.terms.entry(mono).or_insert(0);
        *e += c;
        if *e == 0 {
            self.terms.retain(|_, v| *v != 0);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1))
    }

    pub fn scale(&self, k: i64) -> Poly {
        if k == 0 {
            return Poly::zero();
        }
        Poly {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * k)).collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = ma.clone();
                m.extend(mb.iter().cloned());
                m.sort();
                out.add_term(m, ca * cb);
            }
        }
        out
    }

    pub fn as_const(&self) -> Option<i64> {
        match self.terms.len() {
            0 => Some(0),
            1 => self.terms.get(&Vec::new()).copied(),
            _ => None,
        }
    }

    pub fn constant_term(&self) -> i64 {
        self.terms.get(&Vec::new()).copied().unwrap_or(0)
    }

    /// True when no monomial contains more than one instance dimension.
    pub fn is_affine(&self) -> bool {
        self.terms
            .keys()
            .all(|m| m.iter().filter(|s| s.is_instance_dim()).count() <= 1)
    }

    pub fn syms(&self) -> BTreeSet<Sym> {
        self.terms.keys().flatten().cloned().collect()
    }

    pub fn mentions(&self, pred: impl Fn(&Sym) -> bool) -> bool {
        self.terms.keys().flatten().any(pred)
    }

    /// Coefficient of `s` in an expression of degree one in `s`.
    pub fn coeff_of(&self, s: &Sym) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            if let Some(pos) = m.iter().position(|x| x == s) {
                let mut rest = m.clone();
                rest.remove(pos);
                out.add_term(rest, *c);
            }
        }
        out
    }

    /// Replaces symbols for which `f` returns a polynomial.
    pub fn subst(&self, f: &impl Fn(&Sym) -> Option<Poly>) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            let mut term = Poly::constant(*c);
            for s in m {
                let factor = f(s).unwrap_or_else(|| Poly::sym(s.clone()));
                term = term.mul(&factor);
            }
            out = out.add(&term);
        }
        out
    }

    /// Evaluates with concrete symbol values; `None` if a symbol is unbound or on overflow.
    pub fn eval(&self, f: &impl Fn(&Sym) -> Option<i64>) -> Option<i64> {
        let mut total: i64 = 0;
        for (m, c) in &self.terms {
            let mut v = *c;
            for s in m {
                v = v.checked_mul(f(s)?)?;
            }
            total = total.checked_add(v)?;
        }
        Some(total)
    }

    /// Builds a source expression using `sym_expr` for each symbol.
    pub fn to_expr_with(&self, sym_expr: &impl Fn(&Sym) -> Expr) -> Expr {
        let mut acc: Option<Expr> = None;
        // Constant term last, to read like `a*x + b`.
        let mut ordered: Vec<(&Vec<Sym>, &i64)> =
            self.terms.iter().filter(|(m, _)| !m.is_empty()).collect();
        if let Some(c) = self.terms.get_key_value(&Vec::new()) {
            ordered.push(c);
        }
        for (m, c) in ordered {
            let mut term: Option<Expr> = None;
            for s in m {
                let e = sym_expr(s);
                term = Some(match term {
                    None => e,
                    Some(t) => Expr::binary(BinOp::Mul, t, e),
                });
            }
            let mag = c.abs();
            let term = match term {
                None => Expr::Int(mag),
                Some(t) if mag == 1 => t,
                Some(t) => Expr::binary(BinOp::Mul, Expr::Int(mag), t),
            };
            acc = Some(match acc {
                None if *c < 0 => match term {
                    Expr::Int(v) => Expr::Int(-v),
                    t => Expr::binary(BinOp::Sub, Expr::Int(0), t),
                },
                None => term,
                Some(a) if *c < 0 => Expr::binary(BinOp::Sub, a, term),
                Some(a) => Expr::binary(BinOp::Add, a, term),
            });
        }
        acc.unwrap_or(Expr::Int(0))
    }

    pub fn to_expr(&self) -> Expr {
        self.to_expr_with(&|s| s.to_expr())
    }
}

impl Display for Poly {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        let mut ordered: Vec<(&Vec<Sym>, &i64)> =
            self.terms.iter().filter(|(m, _)| !m.is_empty()).collect();
        if let Some(c) = self.terms.get_key_value(&Vec::new()) {
            ordered.push(c);
        }
        for (m, c) in ordered {
            let mag = c.abs();
            if first {
                if *c < 0 {
                    f.write_str("-")?;
                }
            } else if *c < 0 {
                f.write_str(" - ")?;
            } else {
                f.write_str(" + ")?;
            }
            first = false;
            let syms: Vec<String> = m.iter().map(|s| s.to_string()).collect();
            match (mag, syms.is_empty()) {
                (_, true) => write!(f, "{mag}")?,
                (1, false) => write!(f, "{}", syms.join("*"))?,
                _ => write!(f, "{mag}*{}", syms.join("*"))?,
            }
        }
        Ok(())
    }
}

impl Serialize for Poly {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}
