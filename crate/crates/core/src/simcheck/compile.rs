//! Lowering of kernel ASTs to a small stack bytecode.
//!
//! Threads must be suspendable at barriers, blocking channel operations and
//! spin-waits, so kernels are flattened into jump-based code that keeps all
//! state in explicit slots.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::frontend::{
    AddrSpace, AssignOp, BinOp, Expr, KernelUnit, ParamKind, ScalarType, Stmt, UnOp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdKind {
    Global,
    Local,
    Group,
    LocalSize,
    NumGroups,
    GlobalSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Math {
    Sqrt,
    Fabs,
    Exp,
    Log,
    Sin,
    Cos,
    Floor,
    Ceil,
    Pow,
    Fmin,
    Fmax,
    Min,
    Max,
    Abs,
    Mad,
}

impl Math {
    pub fn arity(self) -> usize {
        match self {
            Math::Pow | Math::Fmin | Math::Fmax | Math::Min | Math::Max => 2,
            Math::Mad => 3,
            _ => 1,
        }
    }

    fn parse(name: &str) -> Option<(Math, usize)> {
        Some(match name {
            "sqrt" | "native_sqrt" => (Math::Sqrt, 1),
            "fabs" => (Math::Fabs, 1),
            "exp" | "native_exp" => (Math::Exp, 1),
            "log" | "native_log" => (Math::Log, 1),
            "sin" | "native_sin" => (Math::Sin, 1),
            "cos" | "native_cos" => (Math::Cos, 1),
            "floor" => (Math::Floor, 1),
            "ceil" => (Math::Ceil, 1),
            "pow" | "powr" => (Math::Pow, 2),
            "fmin" => (Math::Fmin, 2),
            "fmax" => (Math::Fmax, 2),
            "min" => (Math::Min, 2),
            "max" => (Math::Max, 2),
            "abs" => (Math::Abs, 1),
            "mad" | "fma" => (Math::Mad, 3),
            _ => return None,
        })
    }
}

/// Array operand of a load or store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arr {
    /// Kernel parameter index of a global buffer.
    Global(u32),
    /// Work-group local array.
    Local(u32),
    /// Per-thread private array.
    Private(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Int(i64),
    Float(f64),
    Load(u32),
    Store(u32, ScalarType),
    /// Pops an index, pushes the element.
    LoadArr(Arr),
    /// Pops a value then an index.
    StoreArr(Arr),
    Dup,
    Pop,
    Bin(BinOp),
    Un(UnOp),
    Cast(ScalarType),
    Jmp(u32),
    Jz(u32),
    Jnz(u32),
    /// Pops a dimension, pushes the id.
    Id(IdKind),
    WorkDim,
    Math(Math),
    ChanRead(u32),
    /// Pops the value to send.
    ChanWrite(u32),
    /// Work-group barrier; `global` also orders global memory.
    Barrier {
        global: bool,
    },
    Fence,
    /// Give up the turn and resume at the target (spin-wait iteration).
    Yield(u32),
    Ret,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Code {
    pub name: String,
    pub ops: Vec<Op>,
    pub slots: usize,
    pub slot_types: Vec<ScalarType>,
    /// Parameter index -> slot, for scalar parameters.
    pub scalar_params: Vec<(usize, u32)>,
    pub param_count: usize,
    /// Element type of each parameter (pointer element or scalar type).
    pub param_types: Vec<ScalarType>,
    pub local_arrays: Vec<(usize, ScalarType)>,
    pub private_arrays: Vec<(usize, ScalarType)>,
}

const CLK_LOCAL_MEM_FENCE: i64 = 1;
const CLK_GLOBAL_MEM_FENCE: i64 = 2;

#[derive(Clone, Copy)]
enum Name {
    Slot(u32),
    Arr(Arr),
}

struct Compiler<'a> {
    ops: Vec<Op>,
    scopes: Vec<BTreeMap<String, Name>>,
    slot_types: Vec<ScalarType>,
    local_arrays: Vec<(usize, ScalarType)>,
    private_arrays: Vec<(usize, ScalarType)>,
    channels: &'a BTreeMap<String, u32>,
    kernel: &'a str,
}

fn err(kernel: &str, msg: impl std::fmt::Display) -> Error {
    Error::Sim(format!("`{kernel}`: {msg}"))
}

/// Compiles `unit`; `channels` maps channel names to ids shared by all kernels.
pub fn compile(unit: &KernelUnit, channels: &BTreeMap<String, u32>) -> Result<Code> {
    let mut c = Compiler {
        ops: Vec::new(),
        scopes: vec![BTreeMap::new()],
        slot_types: Vec::new(),
        local_arrays: Vec::new(),
        private_arrays: Vec::new(),
        channels,
        kernel: &unit.name,
    };
    let mut scalar_params = Vec::new();
    let mut param_types = Vec::new();
    for (i, p) in unit.params.iter().enumerate() {
        param_types.push(p.kind.elem());
        match p.kind {
            ParamKind::Scalar(t) => {
                let s = c.slot(&p.name, t);
                scalar_params.push((i, s));
            }
            ParamKind::Pointer {
                space: AddrSpace::Global | AddrSpace::Constant,
                ..
            } => {
                c.scopes[0].insert(p.name.clone(), Name::Arr(Arr::Global(i as u32)));
            }
            ParamKind::Pointer { .. } => {
                return Err(err(
                    &unit.name,
                    format!("unsupported pointer parameter `{}`", p.name),
                ))
            }
        }
    }
    c.block(&unit.body)?;
    c.ops.push(Op::Ret);
    Ok(Code {
        name: unit.name.clone(),
        slots: c.slot_types.len(),
        ops: c.ops,
        slot_types: c.slot_types,
        scalar_params,
        param_count: unit.params.len(),
        param_types,
        local_arrays: c.local_arrays,
        private_arrays: c.private_arrays,
    })
}

/// Evaluates a constant integer expression (array lengths).
fn const_int(e: &Expr) -> Option<i64> {
    match e {
        Expr::Int(v) => Some(*v),
        Expr::Binary { op, lhs, rhs } => {
            let (a, b) = (const_int(lhs)?, const_int(rhs)?);
            match op {
                BinOp::Add => Some(a + b),
                BinOp::Sub => Some(a - b),
                BinOp::Mul => Some(a * b),
                BinOp::Div if b != 0 => Some(a / b),
                BinOp::Shl => Some(a << b),
                _ => None,
            }
        }
        _ => None,
    }
}

impl Compiler<'_> {
    fn slot(&mut self, name: &str, ty: ScalarType) -> u32 {
        let s = self.slot_types.len() as u32;
        self.slot_types.push(ty);
        self.scopes
            .last_mut()
            .unwrap()
            .insert(name.to_string(), Name::Slot(s));
        s
    }

    fn lookup(&self, name: &str) -> Option<Name> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn here(&self) -> u32 {
        self.ops.len() as u32
    }

    fn patch(&mut self, at: u32, target: u32) {
        match &mut self.ops[at as usize] {
            Op::Jmp(t) | Op::Jz(t) | Op::Jnz(t) | Op::Yield(t) => *t = target,
            _ => unreachable!("patching a non-jump"),
        }
    }

    fn block(&mut self, body: &[Stmt]) -> Result<()> {
        self.scopes.push(BTreeMap::new());
        for s in body {
            self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<()> {
        match s {
            Stmt::Decl {
                space,
                ty,
                name,
                array_len,
                init,
            } => match array_len {
                Some(len) => {
                    let n = const_int(len).ok_or_else(|| {
                        err(
                            self.kernel,
                            format!("array `{name}` needs a constant length"),
                        )
                    })?;
                    let arr = match space {
                        AddrSpace::Local => {
                            self.local_arrays.push((n as usize, *ty));
                            Arr::Local(self.local_arrays.len() as u32 - 1)
                        }
                        _ => {
                            self.private_arrays.push((n as usize, *ty));
                            Arr::Private(self.private_arrays.len() as u32 - 1)
                        }
                    };
                    self.scopes
                        .last_mut()
                        .unwrap()
                        .insert(name.clone(), Name::Arr(arr));
                }
                None => {
                    match init {
                        Some(e) => self.expr(e)?,
                        None => self.ops.push(Op::Int(0)),
                    }
                    let s = self.slot(name, *ty);
                    self.ops.push(Op::Store(s, *ty));
                }
            },
            Stmt::Assign { target, op, value } => self.assign(target, *op, value)?,
            Stmt::For {
                init,
                cond,
                step,
                body,
            } => {
                self.scopes.push(BTreeMap::new());
                if let Some(i) = init {
                    self.stmt(i)?;
                }
                let head = self.here();
                let exit = match cond {
                    Some(c) => {
                        self.expr(c)?;
                        self.ops.push(Op::Jz(0));
                        Some(self.here() - 1)
                    }
                    None => None,
                };
                self.block(body)?;
                if let Some(st) = step {
                    self.stmt(st)?;
                }
                self.ops.push(Op::Jmp(head));
                if let Some(x) = exit {
                    let end = self.here();
                    self.patch(x, end);
                }
                self.scopes.pop();
            }
            Stmt::While { cond, body } => {
                let head = self.here();
                self.expr(cond)?;
                self.ops.push(Op::Jz(0));
                let exit = self.here() - 1;
                if body.is_empty() {
                    self.ops.push(Op::Yield(head));
                } else {
                    self.block(body)?;
                    self.ops.push(Op::Jmp(head));
                }
                let end = self.here();
                self.patch(exit, end);
            }
            Stmt::If { cond, then, els } => {
                self.expr(cond)?;
                self.ops.push(Op::Jz(0));
                let to_else = self.here() - 1;
                self.block(then)?;
                match els {
                    Some(e) => {
                        self.ops.push(Op::Jmp(0));
                        let to_end = self.here() - 1;
                        let else_at = self.here();
                        self.patch(to_else, else_at);
                        self.block(e)?;
                        let end = self.here();
                        self.patch(to_end, end);
                    }
                    None => {
                        let end = self.here();
                        self.patch(to_else, end);
                    }
                }
            }
            Stmt::Block(b) => self.block(b)?,
            Stmt::Expr(e) => {
                self.expr(e)?;
                self.ops.push(Op::Pop);
            }
            Stmt::Return => self.ops.push(Op::Ret),
            Stmt::Pragma(_) => {}
            Stmt::Opaque(t) => return Err(err(self.kernel, format!("cannot execute `{t}`"))),
        }
        Ok(())
    }

    fn array(&self, base: &str) -> Result<Arr> {
        match self.lookup(base) {
            Some(Name::Arr(a)) => Ok(a),
            _ => Err(err(self.kernel, format!("`{base}` is not an array"))),
        }
    }

    fn assign(&mut self, target: &Expr, op: AssignOp, value: &Expr) -> Result<()> {
        match target {
            Expr::Var(n) => {
                let Some(Name::Slot(s)) = self.lookup(n) else {
                    return Err(err(self.kernel, format!("unknown variable `{n}`")));
                };
                let ty = self.slot_types[s as usize];
                match op.bin_op() {
                    Some(b) => {
                        self.ops.push(Op::Load(s));
                        self.expr(value)?;
                        self.ops.push(Op::Bin(b));
                    }
                    None => self.expr(value)?,
                }
                self.ops.push(Op::Store(s, ty));
            }
            Expr::Index { base, index } => {
                let arr = self.array(base)?;
                self.expr(index)?;
                match op.bin_op() {
                    Some(b) => {
                        self.ops.push(Op::Dup);
                        self.ops.push(Op::LoadArr(arr));
                        self.expr(value)?;
                        self.ops.push(Op::Bin(b));
                    }
                    None => self.expr(value)?,
                }
                self.ops.push(Op::StoreArr(arr));
            }
            other => return Err(err(self.kernel, format!("cannot assign to `{other}`"))),
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> Result<()> {
        match e {
            Expr::Int(v) => self.ops.push(Op::Int(*v)),
            Expr::Float { value, .. } => self.ops.push(Op::Float(*value)),
            Expr::Var(n) => match self.lookup(n) {
                Some(Name::Slot(s)) => self.ops.push(Op::Load(s)),
                Some(Name::Arr(_)) => {
                    return Err(err(self.kernel, format!("array `{n}` used as a value")))
                }
                None => match n.as_str() {
                    "CLK_LOCAL_MEM_FENCE" => self.ops.push(Op::Int(CLK_LOCAL_MEM_FENCE)),
                    "CLK_GLOBAL_MEM_FENCE" => self.ops.push(Op::Int(CLK_GLOBAL_MEM_FENCE)),
                    _ => return Err(err(self.kernel, format!("unknown name `{n}`"))),
                },
            },
            Expr::Index { base, index } => {
                let arr = self.array(base)?;
                self.expr(index)?;
                self.ops.push(Op::LoadArr(arr));
            }
            Expr::Call { name, args } => self.call(name, args)?,
            Expr::Unary { op, expr } => {
                self.expr(expr)?;
                self.ops.push(Op::Un(*op));
            }
            Expr::Binary {
                op: BinOp::And,
                lhs,
                rhs,
            } => self.short_circuit(lhs, rhs, true)?,
            Expr::Binary {
                op: BinOp::Or,
                lhs,
                rhs,
            } => self.short_circuit(lhs, rhs, false)?,
            Expr::Binary { op, lhs, rhs } => {
                self.expr(lhs)?;
                self.expr(rhs)?;
                self.ops.push(Op::Bin(*op));
            }
            Expr::Cast { ty, expr } => {
                self.expr(expr)?;
                self.ops.push(Op::Cast(*ty));
            }
            Expr::Cond { cond, then, els } => {
                self.expr(cond)?;
                self.ops.push(Op::Jz(0));
                let to_else = self.here() - 1;
                self.expr(then)?;
                self.ops.push(Op::Jmp(0));
                let to_end = self.here() - 1;
                let at = self.here();
                self.patch(to_else, at);
                self.expr(els)?;
                let end = self.here();
                self.patch(to_end, end);
            }
        }
        Ok(())
    }

    /// `a && b` / `a || b` yielding 0 or 1.
    fn short_circuit(&mut self, lhs: &Expr, rhs: &Expr, and: bool) -> Result<()> {
        let jump = |t| if and { Op::Jz(t) } else { Op::Jnz(t) };
        self.expr(lhs)?;
        self.ops.push(jump(0));
        let first = self.here() - 1;
        self.expr(rhs)?;
        self.ops.push(jump(0));
        let second = self.here() - 1;
        self.ops.push(Op::Int(if and { 1 } else { 0 }));
        self.ops.push(Op::Jmp(0));
        let to_end = self.here() - 1;
        let short = self.here();
        self.ops.push(Op::Int(if and { 0 } else { 1 }));
        let end = self.here();
        self.patch(first, short);
        self.patch(second, short);
        self.patch(to_end, end);
        Ok(())
    }

    fn channel(&self, e: Option<&Expr>) -> Result<u32> {
        match e {
            Some(Expr::Var(n)) => self
                .channels
                .get(n)
                .copied()
                .ok_or_else(|| err(self.kernel, format!("undeclared channel `{n}`"))),
            _ => Err(err(self.kernel, "channel operand must be a channel name")),
        }
    }

    fn call(&mut self, name: &str, args: &[Expr]) -> Result<()> {
        let id = match name {
            "get_global_id" => Some(IdKind::Global),
            "get_local_id" => Some(IdKind::Local),
            "get_group_id" => Some(IdKind::Group),
            "get_local_size" => Some(IdKind::LocalSize),
            "get_num_groups" => Some(IdKind::NumGroups),
            "get_global_size" => Some(IdKind::GlobalSize),
            _ => None,
        };
        if let Some(k) = id {
            let [d] = args else {
                return Err(err(self.kernel, format!("`{name}` takes one argument")));
            };
            self.expr(d)?;
            self.ops.push(Op::Id(k));
            return Ok(());
        }
        match name {
            "get_work_dim" => self.ops.push(Op::WorkDim),
            "read_channel_intel" | "read_channel_altera" => {
                let ch = self.channel(args.first())?;
                self.ops.push(Op::ChanRead(ch));
            }
            "write_channel_intel" | "write_channel_altera" => {
                let ch = self.channel(args.first())?;
                let v = args
                    .get(1)
                    .ok_or_else(|| err(self.kernel, "channel write needs a value"))?;
                self.expr(v)?;
                self.ops.push(Op::ChanWrite(ch));
                self.ops.push(Op::Int(0));
            }
            "barrier" => {
                let global = args
                    .first()
                    .and_then(|a| self.fence_flags(a))
                    .is_none_or(|f| f & CLK_GLOBAL_MEM_FENCE != 0);
                self.ops.push(Op::Barrier { global });
                self.ops.push(Op::Int(0));
            }
            "mem_fence" | "write_mem_fence" | "read_mem_fence" => {
                let global = args
                    .first()
                    .and_then(|a| self.fence_flags(a))
                    .is_none_or(|f| f & CLK_GLOBAL_MEM_FENCE != 0);
                if global {
                    self.ops.push(Op::Fence);
                }
                self.ops.push(Op::Int(0));
            }
            _ => {
                let (m, arity) = Math::parse(name)
                    .ok_or_else(|| err(self.kernel, format!("unsupported call `{name}`")))?;
                if args.len() != arity {
                    return Err(err(
                        self.kernel,
                        format!("`{name}` takes {arity} arguments"),
                    ));
                }
                for a in args {
                    self.expr(a)?;
                }
                self.ops.push(Op::Math(m));
            }
        }
        Ok(())
    }

    fn fence_flags(&self, e: &Expr) -> Option<i64> {
        match e {
            Expr::Var(n) if n == "CLK_LOCAL_MEM_FENCE" => Some(CLK_LOCAL_MEM_FENCE),
            Expr::Var(n) if n == "CLK_GLOBAL_MEM_FENCE" => Some(CLK_GLOBAL_MEM_FENCE),
            Expr::Binary {
                op: BinOp::BitOr,
                lhs,
                rhs,
            } => Some(self.fence_flags(lhs)? | self.fence_flags(rhs)?),
            _ => None,
        }
    }
}
