use super::ast::*;

/// Removes SIMD/CU/work-group-size attributes and unroll pragmas, logging them in `stripped`.
pub fn strip_optimizations(unit: &KernelUnit) -> KernelUnit {
    let mut out = unit.clone();
    out.stripped.append(&mut out.attributes);
    let mut log = Vec::new();
    strip_body(&mut out.body, &mut log);
    out.stripped.extend(log);
    out
}

fn strip_body(body: &mut Vec<Stmt>, log: &mut Vec<Attribute>) {
    body.retain(|s| match s {
        Stmt::Pragma(Pragma::Unroll(n)) => {
            log.push(Attribute::Unroll(*n));
            false
        }
        _ => true,
    });
    for s in body.iter_mut() {
        match s {
            Stmt::For { body, .. } | Stmt::While { body, .. } | Stmt::Block(body) => {
                strip_body(body, log)
            }
            Stmt::If { then, els, .. } => {
                strip_body(then, log);
                if let Some(e) = els {
                    strip_body(e, log);
                }
            }
            _ => {}
        }
    }
}
