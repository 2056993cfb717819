//! Scanner for host C code that calls the OpenCL API one call per statement.
//!
//! The scanner tracks `#define`/literal integer variables, kernel and queue
//! handles, `clSetKernelArg` bindings and the `for`/`while` loops enclosing
//! enqueues. Statement spans are kept so host rewriting can splice edits into
//! the original text.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use regex::Regex;
use serde::Serialize;

use super::model::{Arg, Enqueue, HostModel, HostOp, Init, Trips};
use crate::error::{Error, Result};
use crate::frontend::ScalarType;

/// Byte range `[start, end)` in the scanned source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScanInfo {
    pub text: String,
    /// Source span of each op, parallel to `HostModel::ops`.
    pub op_spans: Vec<Span>,
    /// Every `clSetKernelArg` statement.
    pub setarg_spans: Vec<Span>,
    /// Kernel name -> `cl_kernel` variable.
    pub kernel_vars: BTreeMap<String, String>,
    /// Kernel name -> span of its `clCreateKernel` statement.
    pub create_kernel_spans: BTreeMap<String, Span>,
    /// Queue id -> variable name.
    pub queue_vars: Vec<String>,
    pub program_var: Option<String>,
    pub context_var: Option<String>,
    pub device_var: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ScannedHost {
    pub model: HostModel,
    pub info: ScanInfo,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Float(f64),
    IntArray(Vec<i64>),
    /// Variable without a literal value; `true` when derived from a device read.
    Opaque(bool),
}

struct Piece {
    text: String,
    span: Span,
    /// `{`, `}` or `;` terminating the piece.
    term: char,
}

/// Splits source into statements at top-level `;`, `{` and `}`.
fn split_statements(src: &str, defines: &mut HashMap<String, Value>) -> Vec<Piece> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut start = 0;
    let mut depth = 0i32;
    let mut at_line_start = true;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if at_line_start && c == '#' {
            let end = src[i..].find('\n').map_or(src.len(), |e| i + e);
            let line = &src[i + 1..end];
            let mut words = line.split_whitespace();
            if words.next() == Some("define") {
                if let (Some(name), Some(val)) = (words.next(), words.next()) {
                    if let Ok(v) = val.trim_matches(|c| c == '(' || c == ')').parse::<i64>() {
                        defines.insert(name.to_string(), Value::Int(v));
                    }
                }
            }
            i = end;
            start = i;
            continue;
        }
        if !c.is_whitespace() {
            at_line_start = false;
        }
        match c {
            '\n' => at_line_start = true,
            '/' if bytes.get(i + 1) == Some(&b'/') => {
                i = src[i..].find('\n').map_or(src.len(), |e| i + e);
                continue;
            }
            '/' if bytes.get(i + 1) == Some(&b'*') => {
                i = src[i + 2..].find("*/").map_or(src.len(), |e| i + 2 + e + 2);
                continue;
            }
            '"' | '\'' => {
                i += 1;
                while i < bytes.len() && bytes[i] as char != c {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
            }
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            // Brace initializers are part of the statement.
            '{' if depth > 0 || src[start..i].trim_end().ends_with('=') => depth += 1,
            '}' if depth > 0 => depth -= 1,
            ';' | '{' | '}' if depth == 0 => {
                let text = strip_comments(&src[start..i]);
                out.push(Piece {
                    text: text.split_whitespace().collect::<Vec<_>>().join(" "),
                    span: Span { start, end: i + 1 },
                    term: c,
                });
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    out
}

fn strip_comments(s: &str) -> String {
    let re = Regex::new(r"(?s)/\*.*?\*/|//[^\n]*").unwrap();
    re.replace_all(s, " ").into_owned()
}

/// Splits a call's argument text at top-level commas.
fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn c_type(name: &str) -> Option<ScalarType> {
    Some(match name {
        "int" | "cl_int" | "long" | "cl_long" | "short" | "char" => ScalarType::Int,
        "unsigned" | "uint" | "cl_uint" | "size_t" => ScalarType::Uint,
        "float" | "cl_float" => ScalarType::Float,
        "double" | "cl_double" => ScalarType::Double,
        _ => return None,
    })
}

struct Scanner {
    vars: HashMap<String, Value>,
    buffers: BTreeSet<String>,
    read_targets: BTreeSet<String>,
    kernel_of_var: HashMap<String, String>,
    queue_ids: HashMap<String, u32>,
    setargs: HashMap<String, BTreeMap<usize, Arg>>,
    model: HostModel,
    info: ScanInfo,
    loop_counter: usize,
}

impl Scanner {
    fn int_expr(&self, e: &str) -> Option<i64> {
        let e = e.trim();
        if let Ok(v) = e.parse::<i64>() {
            return Some(v);
        }
        if let Some(Value::Int(v)) = self.vars.get(e) {
            return Some(*v);
        }
        let inner = e.strip_prefix('(').and_then(|x| x.strip_suffix(')'));
        if let Some(inner) = inner {
            if split_top(inner, '*').len() == 1 && split_top(inner, '+').len() == 1 {
                return self.int_expr(inner);
            }
        }
        let terms = split_top(e, '+');
        if terms.len() > 1 {
            return terms.iter().map(|t| self.int_expr(t)).sum();
        }
        let factors = split_top(e, '*');
        if factors.len() > 1 {
            return factors.iter().map(|f| self.int_expr(f)).product();
        }
        None
    }

    /// Element type and count of a `clCreateBuffer` size expression.
    fn buffer_size(&self, e: &str) -> Option<(ScalarType, u64)> {
        let sizeof = Regex::new(r"sizeof\s*\(\s*(\w+)\s*\)").unwrap();
        let mut elem = None;
        let mut count: i64 = 1;
        for f in split_top(e, '*') {
            if let Some(c) = sizeof.captures(&f) {
                elem = c_type(&c[1]);
            } else {
                count = count.checked_mul(self.int_expr(&f)?)?;
            }
        }
        match elem {
            Some(t) => Some((t, count as u64)),
            None => Some((ScalarType::Float, count as u64 / 4)),
        }
    }

    fn queue_id(&mut self, var: &str) -> u32 {
        let n = self.queue_ids.len() as u32;
        let id = *self.queue_ids.entry(var.to_string()).or_insert(n);
        if id == n {
            self.info.queue_vars.push(var.to_string());
        }
        id
    }

    fn push(&mut self, op: HostOp, span: Span) {
        self.model.ops.push(op);
        self.info.op_spans.push(span);
    }

    fn pointee(arg: &str) -> Option<String> {
        let re = Regex::new(r"^(?:\(\s*(?:const\s+)?void\s*\*\s*\)\s*)?&\s*(\w+)$").unwrap();
        re.captures(arg.trim()).map(|c| c[1].to_string())
    }

    fn host_ptr(arg: &str) -> String {
        let re = Regex::new(r"(\w+)\s*(?:\[.*\])?$").unwrap();
        re.captures(arg.trim())
            .map(|c| c[1].to_string())
            .unwrap_or_else(|| arg.trim().to_string())
    }

    fn mentions_read(&self, expr: &str) -> bool {
        let word = Regex::new(r"\w+").unwrap();
        let found = word.find_iter(expr).any(|w| {
            self.read_targets.contains(w.as_str())
                || matches!(self.vars.get(w.as_str()), Some(Value::Opaque(true)))
        });
        found
    }

    fn statement(&mut self, text: &str, span: Span) -> Result<()> {
        let call = |name: &str| Regex::new(&format!(r"^(?:.*=\s*)?{name}\s*\((.*)\)$")).unwrap();
        if let Some(c) = call("clCreateBuffer").captures(text) {
            let lhs = Regex::new(r"^(?:cl_mem\s+)?(\w+)\s*=").unwrap();
            let name = lhs
                .captures(text)
                .map(|c| c[1].to_string())
                .ok_or_else(|| Error::Host(format!("cannot name buffer in `{text}`")))?;
            let args = split_args(&c[1]);
            let (elem, len) = args
                .get(2)
                .and_then(|s| self.buffer_size(s))
                .ok_or_else(|| Error::Host(format!("cannot resolve size of buffer `{name}`")))?;
            if let Some(ctx) = args.first() {
                self.info.context_var.get_or_insert_with(|| ctx.clone());
            }
            self.buffers.insert(name.clone());
            self.push(HostOp::Buffer { name, elem, len }, span);
        } else if let Some(c) = Regex::new(r#"^(?:cl_kernel\s+)?(\w+)\s*=\s*clCreateKernel\s*\(\s*(\w+)\s*,\s*"(\w+)""#)
            .unwrap()
            .captures(text)
        {
            self.kernel_of_var.insert(c[1].to_string(), c[3].to_string());
            self.info.kernel_vars.insert(c[3].to_string(), c[1].to_string());
            self.info.create_kernel_spans.insert(c[3].to_string(), span);
            self.info.program_var.get_or_insert_with(|| c[2].to_string());
        } else if let Some(c) = Regex::new(r"^(?:cl_command_queue\s+)?(\w+)\s*=\s*clCreateCommandQueue\w*\s*\(\s*(\w+)\s*,\s*(\w+)")
            .unwrap()
            .captures(text)
        {
            self.queue_id(&c[1]);
            self.info.context_var.get_or_insert_with(|| c[2].to_string());
            self.info.device_var.get_or_insert_with(|| c[3].to_string());
        } else if let Some(c) = call("clSetKernelArg").captures(text) {
            self.info.setarg_spans.push(span);
            let args = split_args(&c[1]);
            if args.len() != 4 {
                return Err(Error::Host(format!("malformed clSetKernelArg: `{text}`")));
            }
            let kernel = self
                .kernel_of_var
                .get(&args[0])
                .cloned()
                .ok_or_else(|| Error::Host(format!("unknown kernel handle `{}`", args[0])))?;
            let idx = self
                .int_expr(&args[1])
                .ok_or_else(|| Error::Host(format!("non-constant arg index in `{text}`")))? as usize;
            let arg = match Self::pointee(&args[3]) {
                Some(v) if self.buffers.contains(&v) => Arg::Buffer(v),
                Some(v) => match self.vars.get(&v) {
                    Some(Value::Int(i)) => Arg::Int(*i),
                    Some(Value::Float(f)) => Arg::Float(*f),
                    Some(Value::Opaque(from_read)) => Arg::HostVar {
                        name: v,
                        from_read: *from_read,
                    },
                    _ => Arg::HostVar {
                        name: v,
                        from_read: false,
                    },
                },
                None => {
                    self.info
                        .warnings
                        .push(format!("unresolvable binding for arg {idx} of `{kernel}`: `{}`", args[3]));
                    Arg::Unknown(args[3].clone())
                }
            };
            self.setargs.entry(kernel).or_default().insert(idx, arg);
        } else if let Some(c) = call("clEnqueueTask").captures(text) {
            let args = split_args(&c[1]);
            self.enqueue(&args, None, None, span)?;
        } else if let Some(c) = call("clEnqueueNDRangeKernel").captures(text) {
            let args = split_args(&c[1]);
            if args.len() < 6 {
                return Err(Error::Host(format!("malformed clEnqueueNDRangeKernel: `{text}`")));
            }
            let dims = self.int_expr(&args[2]).unwrap_or(1) as usize;
            let global = self.sizes(&args[4], dims, text)?;
            let local = if args[5] == "NULL" || args[5] == "0" {
                None
            } else {
                Some(self.sizes(&args[5], dims, text)?)
            };
            self.enqueue(&args, Some(global), local, span)?;
        } else if let Some(c) = call("clEnqueueWriteBuffer").captures(text) {
            let args = split_args(&c[1]);
            let q = args.first().cloned().unwrap_or_default();
            self.queue_id(&q);
            let buffer = args.get(1).cloned().unwrap_or_default();
            self.push(
                HostOp::Write {
                    buffer,
                    init: Init::Input,
                },
                span,
            );
        } else if let Some(c) = call("clEnqueueReadBuffer").captures(text) {
            let args = split_args(&c[1]);
            let q = args.first().cloned().unwrap_or_default();
            self.queue_id(&q);
            let buffer = args.get(1).cloned().unwrap_or_default();
            let into = args.get(5).map(|p| Self::host_ptr(p));
            if let Some(p) = &into {
                self.read_targets.insert(p.clone());
            }
            self.push(HostOp::Read { buffer, into }, span);
        } else if let Some(c) = Regex::new(r"^(?:\w+\s*=\s*)?clFinish\s*\(\s*(\w+)\s*\)$").unwrap().captures(text) {
            let queue = self.queue_id(&c[1]);
            self.push(HostOp::Finish { queue }, span);
        } else if let Some(c) = Regex::new(r"^(?:const\s+)?(\w+)\s+(\w+)\s*\[\s*\w*\s*\]\s*=\s*\{(.*)\}$")
            .unwrap()
            .captures(text)
        {
            let vals: Option<Vec<i64>> = split_args(&c[3]).iter().map(|v| self.int_expr(v)).collect();
            let v = vals.map_or(Value::Opaque(false), Value::IntArray);
            self.vars.insert(c[2].to_string(), v);
        } else if let Some(c) = Regex::new(r"^(?:const\s+)?(?:unsigned\s+)?(\w+)\s+(\w+)\s*=\s*(.+)$")
            .unwrap()
            .captures(text)
        {
            if c_type(&c[1]).is_some() {
                self.assign(&c[2], &c[3], c_type(&c[1]));
            }
        } else if let Some(c) = Regex::new(r"^(\w+)\s*=\s*(.+)$").unwrap().captures(text) {
            if self.vars.contains_key(&c[1]) {
                self.assign(&c[1], &c[2], None);
            }
        }
        Ok(())
    }

    fn assign(&mut self, name: &str, expr: &str, ty: Option<ScalarType>) {
        let expr = expr.trim();
        let value = if self.mentions_read(expr) {
            Value::Opaque(true)
        } else if let Some(v) = self.int_expr(expr) {
            if ty.is_some_and(|t| t.is_float()) {
                Value::Float(v as f64)
            } else {
                Value::Int(v)
            }
        } else if let Ok(f) = expr.trim_end_matches(['f', 'F']).parse::<f64>() {
            Value::Float(f)
        } else {
            Value::Opaque(false)
        };
        self.vars.insert(name.to_string(), value);
    }

    fn sizes(&self, arg: &str, dims: usize, text: &str) -> Result<Vec<u64>> {
        let name = arg.trim().trim_start_matches('&').trim();
        let vals = match self.vars.get(name) {
            Some(Value::IntArray(v)) => v.clone(),
            Some(Value::Int(v)) => vec![*v],
            _ => {
                return Err(Error::Host(format!(
                    "cannot resolve work size `{arg}` in `{text}`"
                )));
            }
        };
        if vals.len() < dims {
            return Err(Error::Host(format!(
                "work size `{arg}` has fewer than {dims} dimensions"
            )));
        }
        Ok(vals[..dims].iter().map(|&v| v as u64).collect())
    }

    fn enqueue(
        &mut self,
        args: &[String],
        global: Option<Vec<u64>>,
        local: Option<Vec<u64>>,
        span: Span,
    ) -> Result<()> {
        let queue = self.queue_id(&args[0]);
        let kvar = args.get(1).cloned().unwrap_or_default();
        let kernel = self
            .kernel_of_var
            .get(&kvar)
            .cloned()
            .ok_or_else(|| Error::Host(format!("unknown kernel handle `{kvar}`")))?;
        let bound = self.setargs.get(&kernel).cloned().unwrap_or_default();
        let n = bound.keys().next_back().map_or(0, |k| k + 1);
        let args = (0..n)
            .map(|i| {
                bound
                    .get(&i)
                    .cloned()
                    .unwrap_or_else(|| Arg::Unknown("unset".into()))
            })
            .collect();
        self.push(
            HostOp::Enqueue(Enqueue {
                kernel,
                queue,
                global,
                local,
                args,
            }),
            span,
        );
        Ok(())
    }

    fn loop_header(&mut self, text: &str) -> Option<Trips> {
        let for_re = Regex::new(r"^for\s*\((.*)\)$").unwrap();
        if let Some(c) = for_re.captures(text) {
            let parts: Vec<&str> = c[1].split(';').map(str::trim).collect();
            if parts.len() != 3 {
                return Some(Trips::Symbolic(text.to_string()));
            }
            let init = Regex::new(r"^(?:\w+\s+)?(\w+)\s*=\s*(.+)$").unwrap();
            let cond = Regex::new(r"^(\w+)\s*(<=|<)\s*(.+)$").unwrap();
            let (Some(ic), Some(cc)) = (init.captures(parts[0]), cond.captures(parts[1])) else {
                return Some(Trips::Symbolic(parts[1].to_string()));
            };
            let unit_step = matches!(
                parts[2].replace(' ', "").as_str(),
                s if s == format!("{}++", &ic[1]) || s == format!("++{}", &ic[1]) || s == format!("{}+=1", &ic[1])
            );
            if ic[1] != cc[1] || !unit_step {
                return Some(Trips::Symbolic(parts[1].to_string()));
            }
            let lb = self.int_expr(&ic[2]);
            let ub = self
                .int_expr(&cc[3])
                .map(|u| if &cc[2] == "<=" { u + 1 } else { u });
            return Some(match (lb, ub) {
                (Some(l), Some(u)) => Trips::Count((u - l).max(0) as u64),
                _ => Trips::Symbolic(cc[3].to_string()),
            });
        }
        let while_re = Regex::new(r"^while\s*\((.*)\)$").unwrap();
        while_re
            .captures(text)
            .map(|c| Trips::Symbolic(c[1].to_string()))
    }
}

fn split_top(s: &str, sep: char) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            _ => {}
        }
        if c == sep && depth == 0 {
            out.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    out.push(cur.trim().to_string());
    out
}

/// Scans host C source into a host model plus splice metadata.
pub fn scan_host(source: &str) -> Result<ScannedHost> {
    let mut defines = HashMap::new();
    let pieces = split_statements(source, &mut defines);
    let mut s = Scanner {
        vars: defines,
        buffers: BTreeSet::new(),
        read_targets: BTreeSet::new(),
        kernel_of_var: HashMap::new(),
        queue_ids: HashMap::new(),
        setargs: HashMap::new(),
        model: HostModel::default(),
        info: ScanInfo {
            text: source.to_string(),
            ..Default::default()
        },
        loop_counter: 0,
    };
    // Open braces: Some(true) for host loops, Some(false) for other blocks.
    let mut braces: Vec<bool> = Vec::new();
    for p in pieces {
        match p.term {
            '{' => {
                // A brace may follow a function header or control statement.
                let header = p.text.trim().to_string();
                if let Some(trips) = s.loop_header(&header) {
                    s.loop_counter += 1;
                    let id = format!("loop{}", s.loop_counter);
                    s.push(HostOp::LoopBegin { id, trips }, p.span);
                    braces.push(true);
                } else {
                    braces.push(false);
                }
            }
            '}' => {
                if !p.text.is_empty() {
                    s.statement(&p.text, p.span)?;
                }
                if braces.pop() == Some(true) {
                    s.push(HostOp::LoopEnd, p.span);
                }
            }
            _ => s.statement(&p.text, p.span)?,
        }
    }
    // Loops that enclose no kernel or transfer are not part of the model.
    let (ops, spans) = prune_empty_loops(s.model.ops, s.info.op_spans);
    s.model.ops = ops;
    s.info.op_spans = spans;
    s.model.validate()?;
    Ok(ScannedHost {
        model: s.model,
        info: s.info,
    })
}

fn prune_empty_loops(ops: Vec<HostOp>, spans: Vec<Span>) -> (Vec<HostOp>, Vec<Span>) {
    let mut keep = vec![true; ops.len()];
    let mut stack: Vec<(usize, bool)> = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        match op {
            HostOp::LoopBegin { .. } => stack.push((i, false)),
            HostOp::LoopEnd => {
                if let Some((b, used)) = stack.pop() {
                    if !used {
                        keep[b] = false;
                        keep[i] = false;
                    } else if let Some(parent) = stack.last_mut() {
                        parent.1 = true;
                    }
                }
            }
            HostOp::Buffer { .. } => {}
            _ => {
                if let Some(top) = stack.last_mut() {
                    top.1 = true;
                }
            }
        }
    }
    ops.into_iter()
        .zip(spans)
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p)
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOST: &str = r#"
#include <CL/cl.h>
#define N 64
int main() {
    cl_command_queue queue = clCreateCommandQueue(context, device, 0, &err);
    cl_mem d_a = clCreateBuffer(context, CL_MEM_READ_WRITE, sizeof(float) * N, NULL, &err);
    cl_kernel k1 = clCreateKernel(program, "producer", &err);
    int n = N;
    clEnqueueWriteBuffer(queue, d_a, CL_TRUE, 0, sizeof(float) * N, h_a, 0, NULL, NULL);
    for (int it = 0; it < 3; it++) {
        clSetKernelArg(k1, 0, sizeof(cl_mem), (void*)&d_a);
        clSetKernelArg(k1, 1, sizeof(int), &n);
        clEnqueueTask(queue, k1, 0, NULL, NULL);
        clFinish(queue);
    }
    clEnqueueReadBuffer(queue, d_a, CL_TRUE, 0, sizeof(float) * N, h_a, 0, NULL, NULL);
    return 0;
}
"#;

    #[test]
    fn scans_basic_host() {
        let s = scan_host(HOST).unwrap();
        let m = &s.model;
        assert_eq!(m.buffers()[0].len, 64);
        let inv = m.invocations();
        assert_eq!(inv.len(), 1);
        assert_eq!(
            inv[0].enqueue.args,
            vec![Arg::Buffer("d_a".into()), Arg::Int(64)]
        );
        assert_eq!(inv[0].loops.len(), 1);
        assert_eq!(m.loop_trips().values().next(), Some(&Trips::Count(3)));
        assert_eq!(s.info.setarg_spans.len(), 2);
        assert!(
            HOST[s.info.op_spans[1].start..s.info.op_spans[1].end].contains("clEnqueueWriteBuffer")
        );
    }

    #[test]
    fn value_from_device_read_is_tracked() {
        let src = r#"
    cl_mem d = clCreateBuffer(ctx, 0, sizeof(int) * 4, NULL, &e);
    cl_kernel k = clCreateKernel(p, "k", &e);
    clEnqueueReadBuffer(q, d, CL_TRUE, 0, 16, h, 0, NULL, NULL);
    int s = h[0] + 1;
    clSetKernelArg(k, 0, sizeof(int), &s);
    clEnqueueTask(q, k, 0, NULL, NULL);
"#;
        let s = scan_host(src).unwrap();
        let inv = s.model.invocations();
        assert_eq!(
            inv[0].enqueue.args[0],
            Arg::HostVar {
                name: "s".into(),
                from_read: true
            }
        );
    }

    #[test]
    fn single_enqueue_host() {
        let src = r#"
    cl_kernel k = clCreateKernel(p, "only", &e);
    clEnqueueTask(q, k, 0, NULL, NULL);
"#;
        let s = scan_host(src).unwrap();
        assert_eq!(s.model.invocations().len(), 1);
    }
}
