//! Splices host edits into the original C source around scanned call sites.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;

use super::HostEdits;
use crate::error::{Error, Result};
use crate::host::{Arg, HostModel, HostOp, ScanInfo, Span};
use crate::transforms::AuxData;

struct Splicer<'a> {
    text: &'a str,
    /// (start, end, replacement, insertion order)
    edits: Vec<(usize, usize, String, usize)>,
}

impl<'a> Splicer<'a> {
    /// Start of the statement proper, past leading whitespace and comments.
    fn body_start(&self, s: Span) -> usize {
        let t = &self.text[s.start..s.end];
        let mut i = 0;
        let b = t.as_bytes();
        loop {
            while i < b.len() && (b[i] as char).is_whitespace() {
                i += 1;
            }
            if t[i..].starts_with("//") {
                i += t[i..].find('\n').unwrap_or(t.len() - i);
            } else if t[i..].starts_with("/*") {
                i += t[i..].find("*/").map_or(t.len() - i, |e| e + 2);
            } else {
                break;
            }
        }
        s.start + i
    }

    fn indent(&self, s: Span) -> String {
        let lead = &self.text[s.start..self.body_start(s)];
        match lead.rfind('\n') {
            Some(p) => lead[p + 1..]
                .chars()
                .take_while(|c| c.is_whitespace())
                .collect(),
            None => "    ".into(),
        }
    }

    fn push(&mut self, start: usize, end: usize, text: String) {
        let n = self.edits.len();
        self.edits.push((start, end, text, n));
    }

    fn delete(&mut self, s: Span) {
        self.push(s.start, s.end, String::new());
    }

    fn replace(&mut self, s: Span, text: String) {
        let b = self.body_start(s);
        self.push(b, s.end, text);
    }

    fn insert_before(&mut self, s: Span, lines: &[String]) {
        if lines.is_empty() {
            return;
        }
        let ind = self.indent(s);
        let text: String = lines.iter().map(|l| format!("{l}\n{ind}")).collect();
        let b = self.body_start(s);
        self.push(b, b, text);
    }

    fn insert_after(&mut self, end: usize, indent: &str, lines: &[String]) {
        if lines.is_empty() {
            return;
        }
        let text: String = lines.iter().map(|l| format!("\n{indent}{l}")).collect();
        self.push(end, end, text);
    }

    fn stmt(&self, s: Span) -> &str {
        &self.text[self.body_start(s)..s.end]
    }

    fn finish(mut self) -> Result<String> {
        self.edits.sort_by_key(|e| (e.0, e.1, e.3));
        let mut out = String::with_capacity(self.text.len());
        let mut pos = 0;
        for (start, end, text, _) in &self.edits {
            if *start < pos {
                return Err(Error::Host(format!(
                    "overlapping host edits at byte {start}"
                )));
            }
            out.push_str(&self.text[pos..*start]);
            out.push_str(text);
            pos = *end;
        }
        out.push_str(&self.text[pos..]);
        Ok(out)
    }
}

/// Arguments of the outermost call in `stmt`, split at top-level commas.
fn call_args(stmt: &str) -> Option<(usize, Vec<String>)> {
    let open = stmt.find('(')?;
    let mut depth = 0;
    let mut args = Vec::new();
    let mut cur = String::new();
    for c in stmt[open + 1..].chars() {
        match c {
            '(' | '[' | '{' => {
                depth += 1;
                cur.push(c);
            }
            ')' | ']' | '}' if depth > 0 => {
                depth -= 1;
                cur.push(c);
            }
            ')' => {
                args.push(cur.trim().to_string());
                return Some((open, args));
            }
            ',' if depth == 0 => args.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    None
}

fn find_stmt(text: &str, pattern: &str) -> Option<(usize, usize)> {
    Regex::new(pattern)
        .ok()?
        .find(text)
        .map(|m| (m.start(), m.end()))
}

/// Rewrites the scanned host `source` according to `edits`.
pub fn splice_host_c(
    scan: &ScanInfo,
    host: &HostModel,
    edits: &HostEdits,
    table_file: &str,
) -> Result<String> {
    let text = scan.text.as_str();
    if scan.op_spans.len() != host.ops.len() {
        return Err(Error::Host(
            "host model does not match the scanned source".into(),
        ));
    }
    let mut sp = Splicer {
        text,
        edits: Vec::new(),
    };
    let ops = &host.ops;
    let span = |i: usize| scan.op_spans[i];
    let queue_var = |q: u32| -> String {
        scan.queue_vars
            .get(q as usize)
            .cloned()
            .unwrap_or_else(|| format!("queue_mk{q}"))
    };
    let q0 = queue_var(0);
    let ctx = scan.context_var.clone().unwrap_or_else(|| "context".into());

    // Original setarg bindings, reused for scalars that survive the rewrite.
    let mut setargs: BTreeMap<String, Vec<(Span, usize, String, String)>> = BTreeMap::new();
    for &s in &scan.setarg_spans {
        if let Some((_, a)) = call_args(sp.stmt(s)) {
            if let (4, Ok(idx)) = (a.len(), a[1].parse::<usize>()) {
                setargs
                    .entry(a[0].clone())
                    .or_default()
                    .push((s, idx, a[2].clone(), a[3].clone()));
            }
        }
    }
    let mut known: Vec<(Arg, String, String)> = Vec::new();
    for op in ops {
        if let HostOp::Enqueue(e) = op {
            let Some(var) = scan.kernel_vars.get(&e.kernel) else {
                continue;
            };
            for (_, idx, size, ptr) in setargs.get(var).into_iter().flatten() {
                if let Some(a) = e.args.get(*idx) {
                    if a.buffer().is_none() {
                        known.push((a.clone(), size.clone(), ptr.clone()));
                    }
                }
            }
        }
    }
    let kvar = |k: &str| -> Result<String> {
        scan.kernel_vars
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Host(format!("no kernel variable for `{k}`")))
    };

    // Kernel objects: renamed, removed or created from the second program.
    let mut renamed: BTreeMap<String, String> = BTreeMap::new();
    let mut kept: BTreeSet<String> = BTreeSet::new();
    let mut touched: BTreeSet<String> = BTreeSet::new();
    for (i, op) in ops.iter().enumerate() {
        let HostOp::Enqueue(e) = op else { continue };
        match edits.enqueues.get(&i) {
            None => {
                kept.insert(e.kernel.clone());
            }
            Some(None) => {
                touched.insert(e.kernel.clone());
            }
            Some(Some(ed)) => {
                touched.insert(e.kernel.clone());
                kept.insert(e.kernel.clone());
                if ed.kernel != e.kernel {
                    renamed.insert(e.kernel.clone(), ed.kernel.clone());
                }
            }
        }
    }
    let split = edits.kernel_part.values().any(|&p| p == 2);
    let program2 = scan.program_var.as_ref().map(|p| format!("{p}_part2"));
    for (k, s) in &scan.create_kernel_spans {
        if !kept.contains(k) && touched.contains(k) {
            sp.delete(*s);
            continue;
        }
        let new_name = renamed.get(k).unwrap_or(k);
        let mut stmt = sp.stmt(*s).to_string();
        let mut changed = false;
        if new_name != k {
            stmt = stmt.replacen(&format!("\"{k}\""), &format!("\"{new_name}\""), 1);
            changed = true;
        }
        if edits.kernel_part.get(new_name) == Some(&2) {
            if let (Some(pv), Some(p2)) = (&scan.program_var, &program2) {
                let re = Regex::new(&format!(r"clCreateKernel\s*\(\s*{pv}\b")).unwrap();
                stmt = re
                    .replace(&stmt, format!("clCreateKernel({p2}").as_str())
                    .into_owned();
                changed = true;
            }
        }
        if changed {
            sp.replace(*s, stmt);
        }
    }
    for k in touched.difference(&kept) {
        let var = kvar(k)?;
        if let Some((a, b)) = find_stmt(
            text,
            &format!(r"[ \t]*clReleaseKernel\s*\(\s*{var}\s*\)\s*;\n?"),
        ) {
            sp.push(a, b, String::new());
        }
    }
    for k in &touched {
        let var = kvar(k)?;
        for (s, ..) in setargs.get(&var).into_iter().flatten() {
            sp.delete(*s);
        }
    }

    // Extra queues are created next to the first one.
    if !edits.extra_queues.is_empty() {
        let (_, end) = find_stmt(
            text,
            &format!(r"(cl_command_queue\s+)?\b{q0}\s*=\s*clCreateCommandQueue[^;]*;"),
        )
        .ok_or_else(|| Error::Host(format!("cannot locate creation of queue `{q0}`")))?;
        let m = &text[..end];
        let line_start = m.rfind('\n').map_or(0, |p| p + 1);
        let indent: String = text[line_start..]
            .chars()
            .take_while(|c| *c == ' ' || *c == '\t')
            .collect();
        let orig = &text[line_start + indent.len()..end];
        let lines: Vec<String> = edits
            .extra_queues
            .iter()
            .map(|&q| {
                let decl = Regex::new(&format!(r"^(cl_command_queue\s+)?\b{q0}\b")).unwrap();
                decl.replace(orig, format!("cl_command_queue {}", queue_var(q)).as_str())
                    .into_owned()
            })
            .collect();
        sp.insert_after(end, &indent, &lines);
    }
    if split {
        if let (Some(pv), Some(p2)) = (&scan.program_var, &program2) {
            let (_, end) = find_stmt(text, &format!(r"(cl_program\s+)?\b{pv}\s*=[^;]*;"))
                .ok_or_else(|| Error::Host(format!("cannot locate creation of program `{pv}`")))?;
            let line_start = text[..end].rfind('\n').map_or(0, |p| p + 1);
            let indent: String = text[line_start..]
                .chars()
                .take_while(|c| *c == ' ' || *c == '\t')
                .collect();
            let orig = &text[line_start + indent.len()..end];
            let decl = Regex::new(&format!(r"^(cl_program\s+)?\b{pv}\b")).unwrap();
            let line = decl
                .replace(orig, format!("cl_program {p2}").as_str())
                .replace(".aocx\"", "_part2.aocx\"");
            sp.insert_after(end, &indent, &[line]);
        }
    }

    // Buffers.
    let bytes_of: BTreeMap<String, u64> = host
        .buffers()
        .into_iter()
        .map(|b| (b.name.clone(), b.bytes()))
        .collect();
    for (i, op) in ops.iter().enumerate() {
        match op {
            HostOp::Buffer { name, .. } | HostOp::Write { buffer: name, .. }
                if edits.dead_buffers.contains(name) =>
            {
                sp.delete(span(i))
            }
            _ => {}
        }
    }
    for b in &edits.dead_buffers {
        if let Some((a, e)) = find_stmt(
            text,
            &format!(r"[ \t]*clReleaseMemObject\s*\(\s*{b}\s*\)\s*;\n?"),
        ) {
            sp.push(a, e, String::new());
        }
    }
    let first_enqueue = ops.iter().position(|o| matches!(o, HostOp::Enqueue(_)));
    let last_buffer = ops[..first_enqueue.unwrap_or(ops.len())].iter().rposition(
        |o| matches!(o, HostOp::Buffer { name, .. } if !edits.dead_buffers.contains(name)),
    );
    let mut aux_lines = Vec::new();
    let tables: Vec<(&str, usize)> = edits
        .aux
        .iter()
        .filter_map(|b| match &b.data {
            AuxData::Table(v) => Some((b.name.as_str(), v.len())),
            AuxData::Zeros(_) => None,
        })
        .collect();
    if !edits.aux.is_empty() {
        aux_lines.push("/* mkpipe: synchronization buffers */".to_string());
        for b in &edits.aux {
            aux_lines.push(format!(
                "cl_mem {} = clCreateBuffer({ctx}, CL_MEM_READ_WRITE, sizeof(cl_int) * {}, NULL, NULL);",
                b.name,
                b.len()
            ));
        }
    }
    if !tables.is_empty() {
        let total: usize = tables.iter().map(|t| t.1).sum();
        aux_lines.push("{".into());
        aux_lines.push(format!(
            "    FILE* mk_table = fopen(\"{table_file}\", \"rb\");"
        ));
        aux_lines.push(format!(
            "    cl_int* mk_ids = (cl_int*)malloc(sizeof(cl_int) * {total});"
        ));
        aux_lines.push("    size_t mk_n = 0;".into());
        aux_lines.push(format!(
            "    while (mk_table && mk_n < {total} && fread(&mk_ids[mk_n], sizeof(cl_int), 1, mk_table) == 1) mk_n++;"
        ));
        aux_lines.push("    if (mk_table) fclose(mk_table);".into());
        let mut off = 0;
        for (name, len) in &tables {
            aux_lines.push(format!(
                "    clEnqueueWriteBuffer({q0}, {name}, CL_TRUE, 0, sizeof(cl_int) * {len}, mk_ids + {off}, 0, NULL, NULL);"
            ));
            off += len;
        }
        aux_lines.push("    free(mk_ids);".into());
        aux_lines.push("}".into());
        if !text.contains("<stdio.h>") {
            sp.push(0, 0, "#include <stdio.h>\n".into());
        }
    }
    for b in &edits.transfers {
        let bytes = bytes_of
            .get(b)
            .ok_or_else(|| Error::Host(format!("unknown buffer `{b}`")))?;
        aux_lines.push(format!("void* mk_save_{b} = malloc({bytes});"));
    }
    match (last_buffer, first_enqueue) {
        (Some(lb), _) => {
            let ind = sp.indent(span(lb));
            sp.insert_after(span(lb).end, &ind, &aux_lines);
        }
        (None, Some(fe)) => sp.insert_before(span(fe), &aux_lines),
        (None, None) => {}
    }

    // Finishes.
    for (i, op) in ops.iter().enumerate() {
        if let HostOp::Finish { .. } = op {
            if edits.removed_finishes.contains(&i) {
                sp.delete(span(i));
            } else if !edits.extra_queues.is_empty() {
                let lines: Vec<String> = edits
                    .extra_queues
                    .iter()
                    .map(|&q| format!("clFinish({});", queue_var(q)))
                    .collect();
                let ind = sp.indent(span(i));
                sp.insert_after(span(i).end, &ind, &lines);
            }
        }
    }

    // Enqueues, switches and flag resets.
    let all_queues: Vec<String> = std::iter::once(q0.clone())
        .chain(edits.extra_queues.iter().map(|&q| queue_var(q)))
        .collect();
    for (i, op) in ops.iter().enumerate() {
        let mut before = Vec::new();
        if let Some(p) = edits.switch_before.get(&i) {
            before.push(format!("/* mkpipe: switch to bitstream part {p}; the runtime reprograms on the next enqueue */"));
            before.extend(all_queues.iter().map(|q| format!("clFinish({q});")));
            for b in &edits.transfers {
                let bytes = bytes_of[b];
                before.push(format!("clEnqueueReadBuffer({q0}, {b}, CL_TRUE, 0, {bytes}, mk_save_{b}, 0, NULL, NULL);"));
                before.push(format!("clEnqueueWriteBuffer({q0}, {b}, CL_TRUE, 0, {bytes}, mk_save_{b}, 0, NULL, NULL);"));
            }
        }
        let HostOp::Enqueue(e) = op else {
            sp.insert_before(span(i), &before);
            continue;
        };
        for f in edits.zero_before.get(&i).into_iter().flatten() {
            let len = edits
                .aux
                .iter()
                .find(|b| &b.name == f)
                .map_or(0, |b| b.len());
            let q = queue_var(e.queue);
            before.push(format!(
                "{{ cl_int mk_zero = 0; clEnqueueFillBuffer({q}, {f}, &mk_zero, sizeof(cl_int), 0, sizeof(cl_int) * {len}, 0, NULL, NULL); clFinish({q}); }}"
            ));
        }
        match edits.enqueues.get(&i) {
            None => sp.insert_before(span(i), &before),
            Some(None) if before.is_empty() => sp.delete(span(i)),
            Some(None) => {
                let ind = sp.indent(span(i));
                sp.replace(span(i), before.join(&format!("\n{ind}")));
            }
            Some(Some(ed)) => {
                let var = kvar(&e.kernel)?;
                for (j, a) in ed.args.iter().enumerate() {
                    let line = match a {
                        Arg::Buffer(b) => format!("clSetKernelArg({var}, {j}, sizeof(cl_mem), (void*)&{b});"),
                        other => match known.iter().find(|(k, ..)| k == other) {
                            Some((_, size, ptr)) => format!("clSetKernelArg({var}, {j}, {size}, {ptr});"),
                            None => match other {
                                Arg::Int(v) => format!("{{ cl_int mk_arg = {v}; clSetKernelArg({var}, {j}, sizeof(cl_int), (void*)&mk_arg); }}"),
                                Arg::Float(v) => format!("{{ cl_float mk_arg = {v:?}f; clSetKernelArg({var}, {j}, sizeof(cl_float), (void*)&mk_arg); }}"),
                                _ => return Err(Error::Host(format!("cannot bind argument {j} of `{}`: {other:?}", ed.kernel))),
                            },
                        },
                    };
                    before.push(line);
                }
                sp.insert_before(span(i), &before);
                if ed.queue != e.queue {
                    let stmt = sp.stmt(span(i)).to_string();
                    let open = stmt
                        .find('(')
                        .ok_or_else(|| Error::Host(format!("malformed enqueue `{stmt}`")))?;
                    let rest = &stmt[open + 1..];
                    let comma = rest.find(',').unwrap_or(0);
                    let new = format!(
                        "{}({}{}",
                        &stmt[..open],
                        queue_var(ed.queue),
                        &rest[comma..]
                    );
                    sp.replace(span(i), new);
                }
            }
        }
    }
    sp.finish()
}
