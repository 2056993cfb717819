//! Recursive-descent parser for the kernel subset.
//!
//! Statements that fall outside the subset are not errors: they are captured
//! as [`Stmt::Opaque`] so that the rest of the kernel stays analyzable.

use std::collections::BTreeSet;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use crate::error::{Error, Result};

/// Parses a source file holding exactly one kernel.
pub fn parse_kernel(source: &str) -> Result<KernelUnit> {
    let program = parse_program(source)?;
    let mut kernels = program.kernels.into_iter();
    match (kernels.next(), kernels.next()) {
        (Some(k), None) => Ok(k),
        (None, _) => Err(Error::Parse {
            line: 1,
            col: 1,
            msg: "no __kernel function found".into(),
        }),
        (Some(_), Some(second)) => Err(Error::Parse {
            line: 1,
            col: 1,
            msg: format!("expected one kernel, found another: `{}`", second.name),
        }),
    }
}

/// Parses a translation unit with any number of kernels and channel declarations.
pub fn parse_program(source: &str) -> Result<KernelProgram> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        toks: tokens,
        pos: 0,
    };
    let mut program = KernelProgram::default();
    let mut names = BTreeSet::new();
    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Pragma(_) => {
                p.pos += 1;
            }
            Tok::Ident(id) if id == "channel" => {
                program.channels.push(p.channel_decl()?);
            }
            _ => {
                let k = p.kernel()?;
                if !names.insert(k.name.clone()) {
                    return Err(Error::DuplicateKernel(k.name));
                }
                program.kernels.push(k);
            }
        }
    }
    Ok(program)
}

/// Parses a standalone expression (used by tests and the host scanner).
pub fn parse_expr(source: &str) -> Result<Expr> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        toks: tokens,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.err("trailing tokens after expression"));
    }
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn type_keyword(id: &str) -> Option<ScalarType> {
    Some(match id {
        "int" | "long" | "short" | "char" => ScalarType::Int,
        "uint" | "unsigned" | "size_t" | "ulong" | "ushort" | "uchar" => ScalarType::Uint,
        "float" => ScalarType::Float,
        "double" => ScalarType::Double,
        _ => return None,
    })
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let t = &self.toks[self.pos];
        Error::Parse {
            line: t.line,
            col: t.col,
            msg: msg.into(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(q) if q == s)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{p}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn int_lit(&mut self) -> Result<i64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err("expected integer literal")),
        }
    }

    fn scalar_type(&mut self) -> Result<ScalarType> {
        let id = self.ident()?;
        let ty = type_keyword(&id).ok_or_else(|| {
            self.pos -= 1;
            self.err(format!("unsupported type `{id}`"))
        })?;
        // `unsigned int`, `long long`, ...
        while let Tok::Ident(next) = self.peek() {
            if matches!(next.as_str(), "int" | "long" | "short" | "char") {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(ty)
    }

    fn channel_decl(&mut self) -> Result<ChannelDecl> {
        self.ident()?; // channel
        let elem = self.scalar_type()?;
        let name = self.ident()?;
        let mut depth = None;
        if self.is_ident("__attribute__") {
            self.pos += 1;
            self.expect_punct("(")?;
            self.expect_punct("(")?;
            let attr = self.ident()?;
            if attr != "depth" {
                return Err(self.err(format!("unsupported channel attribute `{attr}`")));
            }
            self.expect_punct("(")?;
            depth = Some(self.int_lit()? as u32);
            self.expect_punct(")")?;
            self.expect_punct(")")?;
            self.expect_punct(")")?;
        }
        self.expect_punct(";")?;
        Ok(ChannelDecl { name, elem, depth })
    }

    fn attribute(&mut self, out: &mut Vec<Attribute>) -> Result<()> {
        self.pos += 1; // __attribute__
        self.expect_punct("(")?;
        self.expect_punct("(")?;
        loop {
            let name = self.ident()?;
            self.expect_punct("(")?;
            let mut args = vec![self.int_lit()? as u32];
            while self.eat_punct(",") {
                args.push(self.int_lit()? as u32);
            }
            self.expect_punct(")")?;
            out.push(match name.as_str() {
                "num_simd_work_items" => Attribute::NumSimdWorkItems(args[0]),
                "num_compute_units" => Attribute::NumComputeUnits(args[0]),
                "reqd_work_group_size" => Attribute::ReqdWorkGroupSize(args),
                other => return Err(self.err(format!("unsupported attribute `{other}`"))),
            });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        self.expect_punct(")")?;
        Ok(())
    }

    fn kernel(&mut self) -> Result<KernelUnit> {
        let mut attributes = Vec::new();
        let mut saw_kernel = false;
        loop {
            if self.is_ident("__attribute__") {
                self.attribute(&mut attributes)?;
            } else if self.is_ident("__kernel") || self.is_ident("kernel") {
                self.pos += 1;
                saw_kernel = true;
            } else {
                break;
            }
        }
        if !saw_kernel {
            return Err(self.err("expected `__kernel`"));
        }
        if !self.is_ident("void") {
            return Err(self.err("kernels must return void"));
        }
        self.pos += 1;
        while self.is_ident("__attribute__") {
            self.attribute(&mut attributes)?;
        }
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                params.push(self.param()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        let body = self.stmts_until_close()?;
        let mode = if body_uses_ids(&body)
            || attributes
                .iter()
                .any(|a| matches!(a, Attribute::ReqdWorkGroupSize(_)))
        {
            KernelMode::NdRange
        } else {
            KernelMode::SingleWorkItem
        };
        Ok(KernelUnit {
            name,
            mode,
            params,
            body,
            attributes,
            stripped: Vec::new(),
        })
    }

    fn param(&mut self) -> Result<Param> {
        let mut space = None;
        let mut is_const = false;
        loop {
            match self.peek() {
                Tok::Ident(s) if s == "__global" || s == "global" => {
                    space = Some(AddrSpace::Global)
                }
                Tok::Ident(s) if s == "__local" || s == "local" => space = Some(AddrSpace::Local),
                Tok::Ident(s) if s == "__constant" || s == "constant" => {
                    space = Some(AddrSpace::Constant)
                }
                Tok::Ident(s) if s == "const" => is_const = true,
                _ => break,
            }
            self.pos += 1;
        }
        let elem = self.scalar_type()?;
        if self.is_ident("const") {
            self.pos += 1;
            is_const = true;
        }
        let pointer = self.eat_punct("*");
        while self.is_ident("restrict") || self.is_ident("__restrict") || self.is_ident("const") {
            self.pos += 1;
        }
        let name = self.ident()?;
        let kind = if pointer {
            ParamKind::Pointer {
                space: space.unwrap_or(AddrSpace::Global),
                elem,
                is_const,
            }
        } else {
            if space.is_some() {
                return Err(self.err("address-space qualifier on a scalar parameter"));
            }
            ParamKind::Scalar(elem)
        };
        Ok(Param { name, kind })
    }

    fn stmts_until_close(&mut self) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        while !self.eat_punct("}") {
            if *self.peek() == Tok::Eof {
                return Err(self.err("unexpected end of input, expected `}`"));
            }
            self.stmt_into(&mut out)?;
        }
        Ok(out)
    }

    /// Parses one statement (possibly expanding to several, e.g. multi-declarators).
    fn stmt_into(&mut self, out: &mut Vec<Stmt>) -> Result<()> {
        let start = self.pos;
        let mut tmp = Vec::new();
        match self.stmt_strict(&mut tmp) {
            Ok(()) => {
                out.extend(tmp);
                Ok(())
            }
            Err(e) => {
                self.pos = start;
                if matches!(self.peek(), Tok::Eof) || self.is_punct("}") {
                    return Err(e);
                }
                out.push(self.opaque()?);
                Ok(())
            }
        }
    }

    fn opaque(&mut self) -> Result<Stmt> {
        let mut parts = Vec::new();
        let mut depth = 0i32;
        loop {
            let tok = self.toks[self.pos].clone();
            match &tok.tok {
                Tok::Eof => return Err(self.err("unterminated statement")),
                Tok::Punct("(") | Tok::Punct("[") => depth += 1,
                Tok::Punct(")") | Tok::Punct("]") => depth -= 1,
                Tok::Punct("{") if depth == 0 => {
                    parts.push("{".to_string());
                    self.pos += 1;
                    let mut braces = 1;
                    while braces > 0 {
                        let t = self.toks[self.pos].clone();
                        match t.tok {
                            Tok::Eof => return Err(self.err("unbalanced `{`")),
                            Tok::Punct("{") => braces += 1,
                            Tok::Punct("}") => braces -= 1,
                            _ => {}
                        }
                        parts.push(t.text());
                        self.pos += 1;
                    }
                    return Ok(Stmt::Opaque(parts.join(" ")));
                }
                Tok::Punct("}") if depth == 0 => return Err(self.err("unexpected `}`")),
                _ => {}
            }
            parts.push(tok.text());
            self.pos += 1;
            if matches!(tok.tok, Tok::Punct(";")) && depth == 0 {
                return Ok(Stmt::Opaque(parts.join(" ")));
            }
        }
    }

    fn body(&mut self) -> Result<Vec<Stmt>> {
        if self.eat_punct("{") {
            self.stmts_until_close()
        } else if self.eat_punct(";") {
            Ok(Vec::new())
        } else {
            let mut v = Vec::new();
            self.stmt_into(&mut v)?;
            Ok(v)
        }
    }

    fn is_decl_start(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => {
                matches!(
                    s.as_str(),
                    "__local" | "local" | "__private" | "private" | "const"
                ) || (type_keyword(s).is_some() && matches!(self.peek_at(1), Tok::Ident(_)))
            }
            _ => false,
        }
    }

    fn stmt_strict(&mut self, out: &mut Vec<Stmt>) -> Result<()> {
        match self.peek().clone() {
            Tok::Punct("{") => {
                self.pos += 1;
                out.push(Stmt::Block(self.stmts_until_close()?));
            }
            Tok::Punct(";") => {
                self.pos += 1;
            }
            Tok::Pragma(text) => {
                self.pos += 1;
                out.push(Stmt::Pragma(parse_pragma(&text)));
            }
            Tok::Ident(id) if id == "for" => {
                self.pos += 1;
                self.expect_punct("(")?;
                let init = if self.eat_punct(";") {
                    None
                } else {
                    let mut v = Vec::new();
                    if self.is_decl_start() {
                        self.decl(&mut v)?;
                    } else {
                        self.simple(&mut v)?;
                    }
                    self.expect_punct(";")?;
                    if v.len() != 1 {
                        return Err(self.err("for-init must be a single declaration or assignment"));
                    }
                    v.pop().map(Box::new)
                };
                let cond = if self.is_punct(";") {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect_punct(";")?;
                let step = if self.is_punct(")") {
                    None
                } else {
                    let mut v = Vec::new();
                    self.simple(&mut v)?;
                    if v.len() != 1 {
                        return Err(self.err("for-step must be a single update"));
                    }
                    v.pop().map(Box::new)
                };
                self.expect_punct(")")?;
                let body = self.body()?;
                out.push(Stmt::For {
                    init,
                    cond,
                    step,
                    body,
                });
            }
            Tok::Ident(id) if id == "if" => {
                self.pos += 1;
                self.expect_punct("(")?;
                let cond = self.expr()?;
                self.expect_punct(")")?;
                let then = self.body()?;
                let els = if self.is_ident("else") {
                    self.pos += 1;
                    Some(self.body()?)
                } else {
                    None
                };
                out.push(Stmt::If { cond, then, els });
            }
            Tok::Ident(id) if id == "while" => {
                self.pos += 1;
                self.expect_punct("(")?;
                let cond = self.expr()?;
                self.expect_punct(")")?;
                let body = self.body()?;
                out.push(Stmt::While { cond, body });
            }
            Tok::Ident(id) if id == "return" => {
                self.pos += 1;
                self.expect_punct(";")?;
                out.push(Stmt::Return);
            }
            _ if self.is_decl_start() => {
                self.decl(out)?;
                self.expect_punct(";")?;
            }
            _ => {
                self.simple(out)?;
                while self.eat_punct(",") {
                    self.simple(out)?;
                }
                self.expect_punct(";")?;
            }
        }
        Ok(())
    }

    fn decl(&mut self, out: &mut Vec<Stmt>) -> Result<()> {
        let mut space = AddrSpace::Private;
        loop {
            match self.peek() {
                Tok::Ident(s) if s == "__local" || s == "local" => space = AddrSpace::Local,
                Tok::Ident(s) if s == "__private" || s == "private" || s == "const" => {}
                _ => break,
            }
            self.pos += 1;
        }
        let ty = self.scalar_type()?;
        loop {
            let name = self.ident()?;
            let array_len = if self.eat_punct("[") {
                let e = self.expr()?;
                self.expect_punct("]")?;
                Some(e)
            } else {
                None
            };
            let init = if self.eat_punct("=") {
                Some(self.expr()?)
            } else {
                None
            };
            out.push(Stmt::Decl {
                space,
                ty,
                name,
                array_len,
                init,
            });
            if !self.eat_punct(",") {
                break;
            }
        }
        Ok(())
    }

    /// Assignment, increment, or expression statement (without the `;`).
    fn simple(&mut self, out: &mut Vec<Stmt>) -> Result<()> {
        if self.is_punct("++") || self.is_punct("--") {
            let op = if self.eat_punct("++") {
                AssignOp::Add
            } else {
                self.pos += 1;
                AssignOp::Sub
            };
            let target = self.postfix()?;
            check_lvalue(&target).map_err(|m| self.err(m))?;
            out.push(Stmt::Assign {
                target,
                op,
                value: Expr::Int(1),
            });
            return Ok(());
        }
        let lhs = self.expr()?;
        let op = match self.peek() {
            Tok::Punct("=") => Some(AssignOp::Set),
            Tok::Punct("+=") => Some(AssignOp::Add),
            Tok::Punct("-=") => Some(AssignOp::Sub),
            Tok::Punct("*=") => Some(AssignOp::Mul),
            Tok::Punct("/=") => Some(AssignOp::Div),
            Tok::Punct("++") | Tok::Punct("--") => {
                let op = if self.is_punct("++") {
                    AssignOp::Add
                } else {
                    AssignOp::Sub
                };
                self.pos += 1;
                check_lvalue(&lhs).map_err(|m| self.err(m))?;
                out.push(Stmt::Assign {
                    target: lhs,
                    op,
                    value: Expr::Int(1),
                });
                return Ok(());
            }
            _ => None,
        };
        match op {
            Some(op) => {
                self.pos += 1;
                check_lvalue(&lhs).map_err(|m| self.err(m))?;
                let value = self.expr()?;
                out.push(Stmt::Assign {
                    target: lhs,
                    op,
                    value,
                });
            }
            None => {
                if !matches!(lhs, Expr::Call { .. }) {
                    return Err(self.err("expression statement without effect"));
                }
                out.push(Stmt::Expr(lhs));
            }
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr> {
        let cond = self.binary(1)?;
        if self.eat_punct("?") {
            let then = self.expr()?;
            self.expect_punct(":")?;
            let els = self.expr()?;
            return Ok(Expr::Cond {
                cond: Box::new(cond),
                then: Box::new(then),
                els: Box::new(els),
            });
        }
        Ok(cond)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        let Tok::Punct(p) = self.peek() else {
            return None;
        };
        Some(match *p {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "<<" => BinOp::Shl,
            ">>" => BinOp::Shr,
            "&" => BinOp::BitAnd,
            "|" => BinOp::BitOr,
            "^" => BinOp::BitXor,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "&&" => BinOp::And,
            "||" => BinOp::Or,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_punct("-") {
            let e = self.unary()?;
            return Ok(match e {
                Expr::Int(v) => Expr::Int(-v),
                Expr::Float { value, single } => Expr::Float {
                    value: -value,
                    single,
                },
                e => Expr::Unary {
                    op: UnOp::Neg,
                    expr: Box::new(e),
                },
            });
        }
        if self.eat_punct("+") {
            return self.unary();
        }
        if self.eat_punct("!") {
            return Ok(Expr::not(self.unary()?));
        }
        if self.eat_punct("~") {
            return Ok(Expr::Unary {
                op: UnOp::BitNot,
                expr: Box::new(self.unary()?),
            });
        }
        // Cast: `(type) expr`.
        if self.is_punct("(") {
            if let Tok::Ident(id) = self.peek_at(1) {
                if type_keyword(id).is_some() {
                    self.pos += 1;
                    let ty = self.scalar_type()?;
                    self.expect_punct(")")?;
                    let e = self.unary()?;
                    return Ok(Expr::Cast {
                        ty,
                        expr: Box::new(e),
                    });
                }
            }
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.pos += 1;
                Ok(Expr::Int(v))
            }
            Tok::Float { value, single } => {
                self.pos += 1;
                Ok(Expr::Float { value, single })
            }
            Tok::Punct("(") => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if self.eat_punct("(") {
                    let mut args = Vec::new();
                    if !self.is_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_punct(",") {
                                break;
                            }
                        }
                    }
                    self.expect_punct(")")?;
                    Ok(Expr::Call { name, args })
                } else if self.eat_punct("[") {
                    let index = self.expr()?;
                    self.expect_punct("]")?;
                    if self.is_punct("[") {
                        return Err(self.err("multi-dimensional subscripts are not supported"));
                    }
                    Ok(Expr::index(name, index))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            _ => Err(self.err("expected expression")),
        }
    }
}

fn check_lvalue(e: &Expr) -> std::result::Result<(), &'static str> {
    match e {
        Expr::Var(_) | Expr::Index { .. } => Ok(()),
        _ => Err("assignment target must be a variable or subscript"),
    }
}

fn parse_pragma(text: &str) -> Pragma {
    let mut parts = text.split_whitespace();
    if parts.next() == Some("unroll") {
        match parts.next() {
            None => return Pragma::Unroll(None),
            Some(n) => {
                if let Ok(v) = n.parse() {
                    return Pragma::Unroll(Some(v));
                }
            }
        }
    }
    Pragma::Other(text.to_string())
}

fn expr_uses_ids(e: &Expr) -> bool {
    match e {
        Expr::Call { name, args } => {
            ID_INTRINSICS.contains(&name.as_str()) || args.iter().any(expr_uses_ids)
        }
        Expr::Index { index, .. } => expr_uses_ids(index),
        Expr::Unary { expr, .. } | Expr::Cast { expr, .. } => expr_uses_ids(expr),
        Expr::Binary { lhs, rhs, .. } => expr_uses_ids(lhs) || expr_uses_ids(rhs),
        Expr::Cond { cond, then, els } => {
            expr_uses_ids(cond) || expr_uses_ids(then) || expr_uses_ids(els)
        }
        Expr::Int(_) | Expr::Float { .. } | Expr::Var(_) => false,
    }
}

pub(crate) fn body_uses_ids(body: &[Stmt]) -> bool {
    body.iter().any(|s| match s {
        Stmt::Decl {
            array_len, init, ..
        } => {
            array_len.as_ref().is_some_and(expr_uses_ids)
                || init.as_ref().is_some_and(expr_uses_ids)
        }
        Stmt::Assign { target, value, .. } => expr_uses_ids(target) || expr_uses_ids(value),
        Stmt::For {
            init,
            cond,
            step,
            body,
        } => {
            init.as_deref()
                .is_some_and(|s| body_uses_ids(std::slice::from_ref(s)))
                || cond.as_ref().is_some_and(expr_uses_ids)
                || step
                    .as_deref()
                    .is_some_and(|s| body_uses_ids(std::slice::from_ref(s)))
                || body_uses_ids(body)
        }
        Stmt::If { cond, then, els } => {
            expr_uses_ids(cond) || body_uses_ids(then) || els.as_deref().is_some_and(body_uses_ids)
        }
        Stmt::While { cond, body } => expr_uses_ids(cond) || body_uses_ids(body),
        Stmt::Block(b) => body_uses_ids(b),
        Stmt::Expr(e) => expr_uses_ids(e),
        Stmt::Opaque(text) => ID_INTRINSICS.iter().any(|i| text.contains(i)),
        Stmt::Return | Stmt::Pragma(_) => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_kernel() {
        let k = parse_kernel("__kernel void k(){}").unwrap();
        assert_eq!(k.name, "k");
        assert!(k.body.is_empty());
        assert_eq!(k.mode, KernelMode::SingleWorkItem);
    }

    #[test]
    fn multi_declarators_split() {
        let k = parse_kernel(
            "__kernel void k(__global float* a){ int tx = get_local_id(0), bx = get_group_id(0); a[tx] = bx; }",
        )
        .unwrap();
        assert_eq!(k.body.len(), 3);
        assert_eq!(k.mode, KernelMode::NdRange);
    }

    #[test]
    fn increments_become_compound_assignments() {
        let k = parse_kernel("__kernel void k(int n){ for (int i = 0; i < n; ++i) { } }").unwrap();
        let Stmt::For { step, .. } = &k.body[0] else {
            panic!()
        };
        assert_eq!(
            **step.as_ref().unwrap(),
            Stmt::Assign {
                target: Expr::var("i"),
                op: AssignOp::Add,
                value: Expr::Int(1)
            }
        );
    }

    #[test]
    fn unsupported_statement_is_opaque() {
        let k = parse_kernel(
            "__kernel void k(__global int* a){ switch (a[0]) { case 1: a[1] = 2; } a[2] = 3; }",
        )
        .unwrap();
        assert!(matches!(&k.body[0], Stmt::Opaque(t) if t.starts_with("switch")));
        assert!(matches!(&k.body[1], Stmt::Assign { .. }));
    }

    #[test]
    fn duplicate_kernel_rejected() {
        let err = parse_program("__kernel void a(){} __kernel void a(){}").unwrap_err();
        assert!(matches!(err, Error::DuplicateKernel(n) if n == "a"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_kernel("__kernel void k(__global float* a {}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn attributes_and_channels() {
        let p = parse_program(
            "#pragma OPENCL EXTENSION cl_intel_channels : enable\nchannel float c __attribute__((depth(4)));\n\
             __attribute__((reqd_work_group_size(16,1,1))) __attribute__((num_simd_work_items(4)))\n\
             __kernel void k(__global float* a){ a[get_global_id(0)] = read_channel_intel(c); }",
        )
        .unwrap();
        assert_eq!(p.channels[0].depth, Some(4));
        assert_eq!(p.kernels[0].attributes.len(), 2);
    }
}
