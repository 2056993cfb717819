//! Pretty-printer producing source that re-parses to the same tree.

use std::fmt::{self, Display, Formatter, Write};

use super::ast::*;
use super::lexer::format_float;

fn needs_parens_as_operand(e: &Expr) -> bool {
    match e {
        Expr::Binary { .. } | Expr::Cond { .. } | Expr::Unary { .. } => true,
        Expr::Int(v) => *v < 0,
        Expr::Float { value, .. } => value.is_sign_negative(),
        _ => false,
    }
}

fn write_operand(f: &mut Formatter<'_>, e: &Expr) -> fmt::Result {
    if needs_parens_as_operand(e) {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Float { value, single } => f.write_str(&format_float(*value, *single)),
            Expr::Var(v) => f.write_str(v),
            Expr::Index { base, index } => write!(f, "{base}[{index}]"),
            Expr::Call { name, args } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Unary { op, expr } => {
                f.write_str(match op {
                    UnOp::Neg => "-",
                    UnOp::Not => "!",
                    UnOp::BitNot => "~",
                })?;
                write_operand(f, expr)
            }
            Expr::Cast { ty, expr } => {
                write!(f, "({})", ty.keyword())?;
                write_operand(f, expr)
            }
            Expr::Binary { op, lhs, rhs } => {
                let prec = op.precedence();
                let lhs_parens = match &**lhs {
                    Expr::Binary { op: l, .. } => l.precedence() < prec,
                    Expr::Cond { .. } => true,
                    _ => false,
                };
                let rhs_parens = match &**rhs {
                    Expr::Binary { op: r, .. } => r.precedence() <= prec,
                    Expr::Cond { .. } => true,
                    _ => false,
                };
                if lhs_parens {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs_parens {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
            Expr::Cond { cond, then, els } => {
                if matches!(**cond, Expr::Cond { .. }) {
                    write!(f, "({cond})")?;
                } else {
                    write!(f, "{cond}")?;
                }
                write!(f, " ? {then} : {els}")
            }
        }
    }
}

/// Prints a statement without trailing `;`, for use inside `for (...)` headers.
fn inline_stmt(s: &Stmt) -> String {
    match s {
        Stmt::Decl { ty, name, init, .. } => match init {
            Some(i) => format!("{} {name} = {i}", ty.keyword()),
            None => format!("{} {name}", ty.keyword()),
        },
        Stmt::Assign { target, op, value } => format!("{target} {} {value}", op.symbol()),
        Stmt::Expr(e) => e.to_string(),
        other => {
            let mut s = String::new();
            write_stmt(&mut s, other, 0);
            s.trim().trim_end_matches(';').to_string()
        }
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn write_block(out: &mut String, body: &[Stmt], level: usize) {
    if body.is_empty() {
        out.push_str("{}");
        return;
    }
    out.push_str("{\n");
    for s in body {
        write_stmt(out, s, level + 1);
    }
    indent(out, level);
    out.push('}');
}

pub(crate) fn write_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match s {
        Stmt::Decl {
            space,
            ty,
            name,
            array_len,
            init,
        } => {
            if *space != AddrSpace::Private {
                out.push_str(space.qualifier());
                out.push(' ');
            }
            let _ = write!(out, "{} {name}", ty.keyword());
            if let Some(len) = array_len {
                let _ = write!(out, "[{len}]");
            }
            if let Some(init) = init {
                let _ = write!(out, " = {init}");
            }
            out.push(';');
        }
        Stmt::Assign { target, op, value } => {
            let _ = write!(out, "{target} {} {value};", op.symbol());
        }
        Stmt::For {
            init,
            cond,
            step,
            body,
        } => {
            out.push_str("for (");
            if let Some(i) = init {
                out.push_str(&inline_stmt(i));
            }
            out.push(';');
            if let Some(c) = cond {
                let _ = write!(out, " {c}");
            }
            out.push(';');
            if let Some(st) = step {
                let _ = write!(out, " {}", inline_stmt(st));
            }
            out.push_str(") ");
            write_block(out, body, level);
        }
        Stmt::If { cond, then, els } => {
            let _ = write!(out, "if ({cond}) ");
            write_block(out, then, level);
            if let Some(els) = els {
                out.push_str(" else ");
                write_block(out, els, level);
            }
        }
        Stmt::While { cond, body } => {
            let _ = write!(out, "while ({cond}) ");
            write_block(out, body, level);
        }
        Stmt::Block(body) => write_block(out, body, level),
        Stmt::Expr(e) => {
            let _ = write!(out, "{e};");
        }
        Stmt::Return => out.push_str("return;"),
        Stmt::Pragma(Pragma::Unroll(None)) => out.push_str("#pragma unroll"),
        Stmt::Pragma(Pragma::Unroll(Some(n))) => {
            let _ = write!(out, "#pragma unroll {n}");
        }
        Stmt::Pragma(Pragma::Other(t)) => {
            let _ = write!(out, "#pragma {t}");
        }
        Stmt::Opaque(text) => out.push_str(text),
    }
    out.push('\n');
}

impl Display for Stmt {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_stmt(&mut s, self, 0);
        f.write_str(s.trim_end())
    }
}

impl Display for Param {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self.kind {
            ParamKind::Pointer {
                space,
                elem,
                is_const,
            } => {
                let q = if space == AddrSpace::Private {
                    ""
                } else {
                    space.qualifier()
                };
                let c = if is_const { "const " } else { "" };
                if q.is_empty() {
                    write!(f, "{c}{}* {}", elem.keyword(), self.name)
                } else {
                    write!(f, "{q} {c}{}* {}", elem.keyword(), self.name)
                }
            }
            ParamKind::Scalar(t) => write!(f, "{} {}", t.keyword(), self.name),
        }
    }
}

impl Display for Attribute {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Attribute::NumSimdWorkItems(n) => {
                write!(f, "__attribute__((num_simd_work_items({n})))")
            }
            Attribute::NumComputeUnits(n) => write!(f, "__attribute__((num_compute_units({n})))"),
            Attribute::ReqdWorkGroupSize(dims) => {
                let d: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                write!(f, "__attribute__((reqd_work_group_size({})))", d.join(","))
            }
            Attribute::Unroll(None) => f.write_str("#pragma unroll"),
            Attribute::Unroll(Some(n)) => write!(f, "#pragma unroll {n}"),
        }
    }
}

impl Display for KernelUnit {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for a in &self.attributes {
            if !matches!(a, Attribute::Unroll(_)) {
                writeln!(f, "{a}")?;
            }
        }
        write!(f, "__kernel void {}(", self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(") ")?;
        let mut body = String::new();
        write_block(&mut body, &self.body, 0);
        writeln!(f, "{body}")
    }
}

impl Display for ChannelDecl {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self.depth {
            Some(d) => write!(
                f,
                "channel {} {} __attribute__((depth({d})));",
                self.elem.keyword(),
                self.name
            ),
            None => write!(f, "channel {} {};", self.elem.keyword(), self.name),
        }
    }
}

impl Display for KernelProgram {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        if !self.channels.is_empty() {
            writeln!(f, "#pragma OPENCL EXTENSION cl_intel_channels : enable")?;
            for c in &self.channels {
                writeln!(f, "{c}")?;
            }
            writeln!(f)?;
        }
        for (i, k) in self.kernels.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}
