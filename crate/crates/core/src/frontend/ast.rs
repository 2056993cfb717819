//! Syntax tree for the supported OpenCL-C kernel subset.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarType {
    Int,
    Uint,
    Float,
    Double,
}

impl ScalarType {
    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::Float | ScalarType::Double)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            ScalarType::Int => "int",
            ScalarType::Uint => "uint",
            ScalarType::Float => "float",
            ScalarType::Double => "double",
        }
    }

    /// Size in bytes of one element on the device.
    pub fn size_bytes(self) -> u64 {
        match self {
            ScalarType::Double => 8,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddrSpace {
    Global,
    Local,
    Constant,
    Private,
}

impl AddrSpace {
    pub fn qualifier(self) -> &'static str {
        match self {
            AddrSpace::Global => "__global",
            AddrSpace::Local => "__local",
            AddrSpace::Constant => "__constant",
            AddrSpace::Private => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Pointer {
        space: AddrSpace,
        elem: ScalarType,
        is_const: bool,
    },
    Scalar(ScalarType),
}

impl ParamKind {
    pub fn global(elem: ScalarType) -> Self {
        ParamKind::Pointer {
            space: AddrSpace::Global,
            elem,
            is_const: false,
        }
    }

    /// Pointer params living in device DRAM (global or constant).
    pub fn is_buffer(&self) -> bool {
        matches!(
            self,
            ParamKind::Pointer {
                space: AddrSpace::Global | AddrSpace::Constant,
                ..
            }
        )
    }

    pub fn elem(&self) -> ScalarType {
        match *self {
            ParamKind::Pointer { elem, .. } => elem,
            ParamKind::Scalar(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    NdRange,
    SingleWorkItem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    NumSimdWorkItems(u32),
    NumComputeUnits(u32),
    ReqdWorkGroupSize(Vec<u32>),
    /// `#pragma unroll [N]` found in the body (only ever appears in the strip log).
    Unroll(Option<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Shl,
    Shr,
    BitAnd,
    BitOr,
    BitXor,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::BitAnd => "&",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding power; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::BitOr => 3,
            BinOp::BitXor => 4,
            BinOp::BitAnd => 5,
            BinOp::Eq | BinOp::Ne => 6,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 7,
            BinOp::Shl | BinOp::Shr => 8,
            BinOp::Add | BinOp::Sub => 9,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
    BitNot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Int(i64),
    /// Floating literal; `single` marks an `f` suffix.
    Float {
        value: f64,
        single: bool,
    },
    Var(String),
    Index {
        base: String,
        index: Box<Expr>,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
    Unary {
        op: UnOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Cast {
        ty: ScalarType,
        expr: Box<Expr>,
    },
    Cond {
        cond: Box<Expr>,
        then: Box<Expr>,
        els: Box<Expr>,
    },
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn index(base: impl Into<String>, index: Expr) -> Self {
        Expr::Index {
            base: base.into(),
            index: Box::new(index),
        }
    }

    pub fn call(name: impl Into<String>, args: Vec<Expr>) -> Self {
        Expr::Call {
            name: name.into(),
            args,
        }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn not(expr: Expr) -> Self {
        Expr::Unary {
            op: UnOp::Not,
            expr: Box::new(expr),
        }
    }

    /// Builds `a + b`, folding integer literals and zero terms.
    pub fn add(lhs: Expr, rhs: Expr) -> Self {
        match (&lhs, &rhs) {
            (Expr::Int(0), _) => rhs,
            (_, Expr::Int(0)) => lhs,
            (Expr::Int(a), Expr::Int(b)) => Expr::Int(a + b),
            (_, Expr::Int(b)) if *b < 0 => Expr::binary(BinOp::Sub, lhs, Expr::Int(-b)),
            _ => Expr::binary(BinOp::Add, lhs, rhs),
        }
    }

    /// Builds `a * b`, folding integer literals and unit factors.
    pub fn mul(lhs: Expr, rhs: Expr) -> Self {
        match (&lhs, &rhs) {
            (Expr::Int(1), _) => rhs,
            (_, Expr::Int(1)) => lhs,
            (Expr::Int(0), _) | (_, Expr::Int(0)) => Expr::Int(0),
            (Expr::Int(a), Expr::Int(b)) => Expr::Int(a * b),
            _ => Expr::binary(BinOp::Mul, lhs, rhs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
    Div,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
            AssignOp::Mul => "*=",
            AssignOp::Div => "/=",
        }
    }

    pub fn bin_op(self) -> Option<BinOp> {
        match self {
            AssignOp::Set => None,
            AssignOp::Add => Some(BinOp::Add),
            AssignOp::Sub => Some(BinOp::Sub),
            AssignOp::Mul => Some(BinOp::Mul),
            AssignOp::Div => Some(BinOp::Div),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pragma {
    Unroll(Option<u32>),
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stmt {
    Decl {
        space: AddrSpace,
        ty: ScalarType,
        name: String,
        array_len: Option<Expr>,
        init: Option<Expr>,
    },
    /// `target op= value`; the target is a `Var` or an `Index`.
    Assign {
        target: Expr,
        op: AssignOp,
        value: Expr,
    },
    For {
        init: Option<Box<Stmt>>,
        cond: Option<Expr>,
        step: Option<Box<Stmt>>,
        body: Vec<Stmt>,
    },
    If {
        cond: Expr,
        then: Vec<Stmt>,
        els: Option<Vec<Stmt>>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    Block(Vec<Stmt>),
    Expr(Expr),
    Return,
    Pragma(Pragma),
    /// Statement outside the subset, kept verbatim (token text joined by spaces).
    Opaque(String),
}

impl Stmt {
    pub fn decl(ty: ScalarType, name: impl Into<String>, init: Expr) -> Self {
        Stmt::Decl {
            space: AddrSpace::Private,
            ty,
            name: name.into(),
            array_len: None,
            init: Some(init),
        }
    }

    pub fn assign(target: Expr, value: Expr) -> Self {
        Stmt::Assign {
            target,
            op: AssignOp::Set,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelUnit {
    pub name: String,
    pub mode: KernelMode,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    /// Optimization attributes currently attached to the kernel.
    pub attributes: Vec<Attribute>,
    /// Attributes and pragmas removed by `strip_optimizations`.
    pub stripped: Vec<Attribute>,
}

impl KernelUnit {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn buffer_params(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.kind.is_buffer())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDecl {
    pub name: String,
    pub elem: ScalarType,
    pub depth: Option<u32>,
}

/// A translation unit: channel declarations followed by kernels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelProgram {
    pub channels: Vec<ChannelDecl>,
    pub kernels: Vec<KernelUnit>,
}

impl KernelProgram {
    pub fn kernel(&self, name: &str) -> Option<&KernelUnit> {
        self.kernels.iter().find(|k| k.name == name)
    }
}

/// Work-item id intrinsics recognized by the analyses.
pub const ID_INTRINSICS: &[&str] = &[
    "get_global_id",
    "get_local_id",
    "get_group_id",
    "get_local_size",
    "get_num_groups",
    "get_global_size",
];

/// Location of a statement: indices through nested statement lists.
///
/// The children of an `if` are its then-branch followed by its else-branch.
pub type StmtPath = Vec<usize>;

impl Stmt {
    /// Nested statement lists in path order.
    pub fn child_lists(&self) -> Vec<&Vec<Stmt>> {
        match self {
            Stmt::For { body, .. } | Stmt::While { body, .. } | Stmt::Block(body) => vec![body],
            Stmt::If { then, els, .. } => {
                let mut v = vec![then];
                if let Some(e) = els {
                    v.push(e);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn child_lists_mut(&mut self) -> Vec<&mut Vec<Stmt>> {
        match self {
            Stmt::For { body, .. } | Stmt::While { body, .. } | Stmt::Block(body) => vec![body],
            Stmt::If { then, els, .. } => {
                let mut v = vec![then];
                if let Some(e) = els {
                    v.push(e);
                }
                v
            }
            _ => Vec::new(),
        }
    }
}

/// Returns the statement at `path`.
pub fn stmt_at<'a>(body: &'a [Stmt], path: &[usize]) -> Option<&'a Stmt> {
    let (&first, rest) = path.split_first()?;
    let s = body.get(first)?;
    if rest.is_empty() {
        return Some(s);
    }
    let mut idx = rest[0];
    for list in s.child_lists() {
        if idx < list.len() {
            let mut sub = vec![idx];
            sub.extend_from_slice(&rest[1..]);
            return stmt_at(list, &sub);
        }
        idx -= list.len();
    }
    None
}

/// Returns the list containing the statement at `path` and its position in that list.
pub fn container_mut<'a>(
    body: &'a mut Vec<Stmt>,
    path: &[usize],
) -> Option<(&'a mut Vec<Stmt>, usize)> {
    let (&first, rest) = path.split_first()?;
    if rest.is_empty() {
        return (first < body.len()).then_some((body, first));
    }
    let s = body.get_mut(first)?;
    let mut idx = rest[0];
    for list in s.child_lists_mut() {
        if idx < list.len() {
            let mut sub = vec![idx];
            sub.extend_from_slice(&rest[1..]);
            return container_mut(list, &sub);
        }
        idx -= list.len();
    }
    None
}
