//! Host program model: an ordered list of OpenCL host operations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::ScalarType;

/// Initial contents of a host-to-device write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Workload input; the interpreter fills it from the seed.
    #[default]
    Input,
    Zeros,
    /// Binary little-endian 32-bit integers, relative to the host file.
    File(String),
    Values(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Trips {
    Count(u64),
    Symbolic(String),
}

impl Trips {
    pub fn count(&self) -> Option<u64> {
        match self {
            Trips::Count(n) => Some(*n),
            Trips::Symbolic(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arg {
    Buffer(String),
    Int(i64),
    Float(f64),
    /// Host variable with no literal value; `from_read` marks values derived from a device read.
    HostVar {
        name: String,
        from_read: bool,
    },
    /// Binding the scanner could not resolve (source text kept).
    Unknown(String),
}

impl Arg {
    pub fn buffer(&self) -> Option<&str> {
        match self {
            Arg::Buffer(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enqueue {
    pub kernel: String,
    #[serde(default)]
    pub queue: u32,
    /// Global size per dimension; absent for single work-item tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<Vec<u64>>,
    #[serde(default)]
    pub args: Vec<Arg>,
}

/// Launch geometry of one kernel invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Launch {
    Task,
    NdRange { global: Vec<u64>, local: Vec<u64> },
}

impl Launch {
    pub fn work_dim(&self) -> usize {
        match self {
            Launch::Task => 1,
            Launch::NdRange { global, .. } => global.len(),
        }
    }

    pub fn global(&self, d: usize) -> u64 {
        match self {
            Launch::Task => 1,
            Launch::NdRange { global, .. } => global.get(d).copied().unwrap_or(1),
        }
    }

    pub fn local(&self, d: usize) -> u64 {
        match self {
            Launch::Task => 1,
            Launch::NdRange { local, .. } => local.get(d).copied().unwrap_or(1),
        }
    }

    pub fn groups(&self, d: usize) -> u64 {
        self.global(d) / self.local(d).max(1)
    }

    pub fn group_count(&self) -> u64 {
        (0..self.work_dim()).map(|d| self.groups(d)).product()
    }

    pub fn group_size(&self) -> u64 {
        (0..self.work_dim()).map(|d| self.local(d)).product()
    }

    pub fn instance_count(&self) -> u64 {
        self.group_count() * self.group_size()
    }

    pub fn same_shape(&self, other: &Launch) -> bool {
        self == other
    }
}

impl Enqueue {
    /// Launch geometry; a missing local size defaults to `reqd` or to one item per group.
    pub fn launch(&self, reqd: Option<&[u32]>) -> Launch {
        match &self.global {
            None => Launch::Task,
            Some(g) => {
                let local = match (&self.local, reqd) {
                    (Some(l), _) => l.clone(),
                    (None, Some(r)) => r.iter().map(|&v| v as u64).take(g.len()).collect(),
                    (None, None) => vec![1; g.len()],
                };
                Launch::NdRange {
                    global: g.clone(),
                    local,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum HostOp {
    Buffer {
        name: String,
        elem: ScalarType,
        len: u64,
    },
    Write {
        buffer: String,
        #[serde(default)]
        init: Init,
    },
    Read {
        buffer: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        into: Option<String>,
    },
    Enqueue(Enqueue),
    Finish {
        #[serde(default)]
        queue: u32,
    },
    LoopBegin {
        id: String,
        trips: Trips,
    },
    LoopEnd,
    /// Switch the device to another bitstream.
    Reprogram {
        part: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferInfo {
    pub name: String,
    pub elem: ScalarType,
    pub len: u64,
}

impl BufferInfo {
    pub fn bytes(&self) -> u64 {
        self.len * self.elem.size_bytes()
    }
}

/// One kernel invocation with its enclosing loops (outermost first).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invocation {
    pub op_index: usize,
    pub enqueue: Enqueue,
    pub loops: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HostModel {
    #[serde(rename = "op", default)]
    pub ops: Vec<HostOp>,
}

impl HostModel {
    pub fn from_toml(text: &str) -> Result<HostModel> {
        let m: HostModel = toml::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn buffers(&self) -> Vec<BufferInfo> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                HostOp::Buffer { name, elem, len } => Some(BufferInfo {
                    name: name.clone(),
                    elem: *elem,
                    len: *len,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn buffer(&self, name: &str) -> Option<BufferInfo> {
        self.buffers().into_iter().find(|b| b.name == name)
    }

    pub fn invocations(&self) -> Vec<Invocation> {
        let mut loops = Vec::new();
        let mut out = Vec::new();
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                HostOp::LoopBegin { id, .. } => loops.push(id.clone()),
                HostOp::LoopEnd => {
                    loops.pop();
                }
                HostOp::Enqueue(e) => out.push(Invocation {
                    op_index: i,
                    enqueue: e.clone(),
                    loops: loops.clone(),
                }),
                _ => {}
            }
        }
        out
    }

    /// Loop id -> trip count.
    pub fn loop_trips(&self) -> BTreeMap<String, Trips> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                HostOp::LoopBegin { id, trips } => Some((id.clone(), trips.clone())),
                _ => None,
            })
            .collect()
    }

    /// Number of times the op at `index` executes, if all enclosing trip counts are known.
    pub fn executions(&self, index: usize) -> Option<u64> {
        let trips = self.loop_trips();
        let mut stack: Vec<&str> = Vec::new();
        for op in &self.ops[..index] {
            match op {
                HostOp::LoopBegin { id, .. } => stack.push(id),
                HostOp::LoopEnd => {
                    stack.pop();
                }
                _ => {}
            }
        }
        stack
            .iter()
            .map(|id| trips.get(*id).and_then(|t| t.count()))
            .product()
    }

    /// Checks loop nesting, unique loop ids and that buffer references are declared first.
    pub fn validate(&self) -> Result<()> {
        let mut declared = BTreeMap::new();
        let mut depth = 0usize;
        let mut loop_ids = std::collections::BTreeSet::new();
        let need = |declared: &BTreeMap<String, ()>, b: &str| {
            if declared.contains_key(b) {
                Ok(())
            } else {
                Err(Error::Host(format!(
                    "buffer `{b}` used before it is declared"
                )))
            }
        };
        for op in &self.ops {
            match op {
                HostOp::Buffer { name, .. } => {
                    if declared.insert(name.clone(), ()).is_some() {
                        return Err(Error::Host(format!("buffer `{name}` declared twice")));
                    }
                }
                HostOp::Write { buffer, .. } | HostOp::Read { buffer, .. } => {
                    need(&declared, buffer)?
                }
                HostOp::Enqueue(e) => {
                    for a in &e.args {
                        if let Arg::Buffer(b) = a {
                            need(&declared, b)?;
                        }
                    }
                    if let (Some(g), Some(l)) = (&e.global, &e.local) {
                        if g.len() != l.len() || g.iter().zip(l).any(|(g, l)| *l == 0 || g % l != 0)
                        {
                            return Err(Error::Host(format!(
                                "enqueue of `{}`: local size {l:?} does not divide global size {g:?}",
                                e.kernel
                            )));
                        }
                    }
                }
                HostOp::LoopBegin { id, .. } => {
                    if !loop_ids.insert(id.clone()) {
                        return Err(Error::Host(format!("loop id `{id}` used twice")));
                    }
                    depth += 1;
                }
                HostOp::LoopEnd => {
                    depth = depth
                        .checked_sub(1)
                        .ok_or_else(|| Error::Host("loop_end without loop_begin".into()))?;
                }
                HostOp::Finish { .. } | HostOp::Reprogram { .. } => {}
            }
        }
        if depth != 0 {
            return Err(Error::Host("unterminated loop".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
[[op]]
op = "buffer"
name = "m"
elem = "float"
len = 16

[[op]]
op = "write"
buffer = "m"
init = "zeros"

[[op]]
op = "loop_begin"
id = "outer"
trips = 3

[[op]]
op = "enqueue"
kernel = "k"
global = [16]
local = [4]
args = [{ buffer = "m" }, { int = 4 }, { host_var = { name = "x", from_read = true } }]

[[op]]
op = "loop_end"
"#;
        let m = HostModel::from_toml(text).unwrap();
        assert_eq!(m.ops.len(), 5);
        assert_eq!(m.executions(3), Some(3));
        let again = HostModel::from_toml(&m.to_toml().unwrap()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_undeclared_buffer() {
        let m = HostModel {
            ops: vec![HostOp::Read {
                buffer: "x".into(),
                into: None,
            }],
        };
        assert!(m.validate().is_err());
    }
}
