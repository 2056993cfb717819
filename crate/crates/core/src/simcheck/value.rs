//! Dynamic values and arithmetic of the interpreter.
//!
//! Floating-point work is done in double precision whatever the declared
//! type; integers are wrapped to their declared width on stores.

use serde::Serialize;

use super::compile::Math;
use crate::frontend::{BinOp, ScalarType, UnOp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Val {
    I(i64),
    F(f64),
}

impl Default for Val {
    fn default() -> Self {
        Val::I(0)
    }
}

impl Val {
    pub fn as_i64(self) -> i64 {
        match self {
            Val::I(v) => v,
            Val::F(f) => f as i64,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Val::I(v) => v as f64,
            Val::F(f) => f,
        }
    }

    pub fn truthy(self) -> bool {
        match self {
            Val::I(v) => v != 0,
            Val::F(f) => f != 0.0,
        }
    }

    /// Converts to the representation of `ty`.
    pub fn coerce(self, ty: ScalarType) -> Val {
        match ty {
            ScalarType::Int => Val::I(self.as_i64() as i32 as i64),
            ScalarType::Uint => Val::I(self.as_i64() as u32 as i64),
            ScalarType::Float | ScalarType::Double => Val::F(self.as_f64()),
        }
    }

    /// Bytes written to binary buffer files.
    pub fn to_le_bytes(self, ty: ScalarType) -> Vec<u8> {
        match ty {
            ScalarType::Int => (self.as_i64() as i32).to_le_bytes().to_vec(),
            ScalarType::Uint => (self.as_i64() as u32).to_le_bytes().to_vec(),
            ScalarType::Float => (self.as_f64() as f32).to_le_bytes().to_vec(),
            ScalarType::Double => self.as_f64().to_le_bytes().to_vec(),
        }
    }
}

fn bool_val(b: bool) -> Val {
    Val::I(b as i64)
}

/// Applies a binary operator; `None` on integer division by zero.
pub fn binary(op: BinOp, a: Val, b: Val) -> Option<Val> {
    use BinOp::*;
    let float = matches!(a, Val::F(_)) || matches!(b, Val::F(_));
    Some(match op {
        Add | Sub | Mul | Div | Rem if float => {
            let (x, y) = (a.as_f64(), b.as_f64());
            Val::F(match op {
                Add => x + y,
                Sub => x - y,
                Mul => x * y,
                Div => x / y,
                _ => x % y,
            })
        }
        Add => Val::I(a.as_i64().wrapping_add(b.as_i64())),
        Sub => Val::I(a.as_i64().wrapping_sub(b.as_i64())),
        Mul => Val::I(a.as_i64().wrapping_mul(b.as_i64())),
        Div => Val::I(a.as_i64().checked_div(b.as_i64())?),
        Rem => Val::I(a.as_i64().checked_rem(b.as_i64())?),
        Shl => Val::I(a.as_i64().wrapping_shl(b.as_i64() as u32)),
        Shr => Val::I(a.as_i64().wrapping_shr(b.as_i64() as u32)),
        BitAnd => Val::I(a.as_i64() & b.as_i64()),
        BitOr => Val::I(a.as_i64() | b.as_i64()),
        BitXor => Val::I(a.as_i64() ^ b.as_i64()),
        Lt | Le | Gt | Ge | Eq | Ne if float => {
            let (x, y) = (a.as_f64(), b.as_f64());
            bool_val(match op {
                Lt => x < y,
                Le => x <= y,
                Gt => x > y,
                Ge => x >= y,
                Eq => x == y,
                _ => x != y,
            })
        }
        Lt => bool_val(a.as_i64() < b.as_i64()),
        Le => bool_val(a.as_i64() <= b.as_i64()),
        Gt => bool_val(a.as_i64() > b.as_i64()),
        Ge => bool_val(a.as_i64() >= b.as_i64()),
        Eq => bool_val(a.as_i64() == b.as_i64()),
        Ne => bool_val(a.as_i64() != b.as_i64()),
        And => bool_val(a.truthy() && b.truthy()),
        Or => bool_val(a.truthy() || b.truthy()),
    })
}

pub fn unary(op: UnOp, a: Val) -> Val {
    match (op, a) {
        (UnOp::Neg, Val::I(v)) => Val::I(v.wrapping_neg()),
        (UnOp::Neg, Val::F(f)) => Val::F(-f),
        (UnOp::Not, v) => bool_val(!v.truthy()),
        (UnOp::BitNot, v) => Val::I(!v.as_i64()),
    }
}

/// Applies a math builtin to arguments in call order.
pub fn math(m: Math, args: &[Val]) -> Val {
    let f = |i: usize| args[i].as_f64();
    let any_float = args.iter().any(|v| matches!(v, Val::F(_)));
    match m {
        Math::Sqrt => Val::F(f(0).sqrt()),
        Math::Fabs => Val::F(f(0).abs()),
        Math::Exp => Val::F(f(0).exp()),
        Math::Log => Val::F(f(0).ln()),
        Math::Sin => Val::F(f(0).sin()),
        Math::Cos => Val::F(f(0).cos()),
        Math::Floor => Val::F(f(0).floor()),
        Math::Ceil => Val::F(f(0).ceil()),
        Math::Pow => Val::F(f(0).powf(f(1))),
        Math::Fmin => Val::F(f(0).min(f(1))),
        Math::Fmax => Val::F(f(0).max(f(1))),
        Math::Min if any_float => Val::F(f(0).min(f(1))),
        Math::Max if any_float => Val::F(f(0).max(f(1))),
        Math::Min => Val::I(args[0].as_i64().min(args[1].as_i64())),
        Math::Max => Val::I(args[0].as_i64().max(args[1].as_i64())),
        Math::Abs if any_float => Val::F(f(0).abs()),
        Math::Abs => Val::I(args[0].as_i64().wrapping_abs()),
        Math::Mad => Val::F(f(0) * f(1) + f(2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_semantics() {
        assert_eq!(binary(BinOp::Div, Val::I(-7), Val::I(2)), Some(Val::I(-3)));
        assert_eq!(binary(BinOp::Rem, Val::I(-7), Val::I(2)), Some(Val::I(-1)));
        assert_eq!(binary(BinOp::Div, Val::I(1), Val::I(0)), None);
        assert_eq!(
            Val::I(1 << 31).coerce(ScalarType::Int),
            Val::I(i32::MIN as i64)
        );
        assert_eq!(Val::F(2.9).coerce(ScalarType::Int), Val::I(2));
    }

    #[test]
    fn mixed_arithmetic_promotes() {
        assert_eq!(
            binary(BinOp::Mul, Val::I(3), Val::F(0.5)),
            Some(Val::F(1.5))
        );
        assert_eq!(binary(BinOp::Lt, Val::F(0.5), Val::I(1)), Some(Val::I(1)));
        assert_eq!(unary(UnOp::Not, Val::F(0.0)), Val::I(1));
    }
}
