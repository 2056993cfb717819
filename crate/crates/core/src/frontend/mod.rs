//! Kernel-source front end: lexing, parsing, printing and access extraction.

pub mod access;
pub mod ast;
pub mod lexer;
pub mod parser;
pub mod poly;
mod printer;
mod strip;

pub use access::{extract_accesses, AccessSet, AffineAccess, Cmp, Direction, Guard, LoopCtx};
pub use ast::*;
pub use parser::{parse_expr, parse_kernel, parse_program};
pub use poly::{Poly, Sym};
pub use strip::strip_optimizations;
