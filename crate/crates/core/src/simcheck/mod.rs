//! Deterministic interpreter used to check that transformed kernel sets
//! compute the same results as the naive ones.

pub mod compile;
pub mod machine;
pub mod value;

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frontend::{Attribute, Expr, KernelProgram, ScalarType, Stmt};
use crate::host::{Arg, HostModel, HostOp, Init, Trips};
use compile::{compile, Code};
pub use machine::Mode;
use machine::{Binding, Buffer, Channel, Device, Launch, Turn};
pub use value::Val;

/// Largest instance count accepted per launch.
pub const INSTANCE_CAP: u64 = 1 << 16;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub mode: Mode,
    pub seed: u64,
    /// Upper bound of the per-turn instruction budget (drawn uniformly from 1..=max).
    pub max_quantum: u32,
    pub max_turns: u64,
    /// Directory that relative `file` initializers are resolved against.
    pub data_dir: Option<PathBuf>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            mode: Mode::Fair,
            seed: 0,
            max_quantum: 16,
            max_turns: 1 << 26,
            data_dir: None,
        }
    }
}

impl SimOptions {
    pub fn new(mode: Mode, seed: u64) -> Self {
        SimOptions {
            mode,
            seed,
            ..SimOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelStats {
    pub writes: u64,
    pub reads: u64,
}

/// Buffers captured by host reads plus scheduler counters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    /// Snapshot of each host read, in execution order.
    pub reads: Vec<(String, ScalarType, Vec<Val>)>,
    pub final_buffers: BTreeMap<String, Vec<Val>>,
    pub steps: u64,
    pub blocked_steps: u64,
    pub channels: BTreeMap<String, ChannelStats>,
}

/// Deterministic input contents of buffer `name` for `seed`.
pub fn input_values(name: &str, elem: ScalarType, len: u64, seed: u64) -> Vec<Val> {
    // FNV-1a keeps inputs independent of buffer declaration order.
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    (0..len)
        .map(|_| match elem {
            ScalarType::Float | ScalarType::Double => Val::F(rng.gen_range(0.0..1.0)),
            ScalarType::Int | ScalarType::Uint => Val::I(rng.gen_range(0..1000)),
        })
        .collect()
}

fn read_file(path: &Path, elem: ScalarType, len: u64) -> Result<Vec<Val>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let w = elem.size_bytes() as usize;
    if bytes.len() != w * len as usize {
        return Err(Error::Sim(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            w * len as usize,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(w)
        .map(|c| match elem {
            ScalarType::Int => Val::I(i32::from_le_bytes(c.try_into().unwrap()) as i64),
            ScalarType::Uint => Val::I(u32::from_le_bytes(c.try_into().unwrap()) as i64),
            ScalarType::Float => Val::F(f32::from_le_bytes(c.try_into().unwrap()) as f64),
            ScalarType::Double => Val::F(f64::from_le_bytes(c.try_into().unwrap())),
        })
        .collect())
}

struct Sim<'a> {
    device: Device,
    codes: BTreeMap<String, Rc<Code>>,
    reqd: BTreeMap<String, Vec<u32>>,
    buffer_ids: BTreeMap<String, usize>,
    queues: BTreeMap<u32, VecDeque<Launch>>,
    seq: u64,
    steps: u64,
    blocked: u64,
    opts: &'a SimOptions,
}

impl Sim<'_> {
    /// Schedules until `done` holds for the queue state.
    fn run_until(&mut self, done: impl Fn(&BTreeMap<u32, VecDeque<Launch>>) -> bool) -> Result<()> {
        while !done(&self.queues) {
            let mut heads: Vec<(u64, u32)> = self
                .queues
                .iter()
                .filter_map(|(&q, l)| l.front().map(|h| (h.seq, q)))
                .collect();
            if self.opts.mode == Mode::Adversarial {
                heads.sort_by(|a, b| b.cmp(a));
            }
            let mut progress = false;
            let mut stalled_at = Vec::new();
            for (_, q) in heads {
                let l = self.queues.get_mut(&q).unwrap().front_mut().unwrap();
                if self.device.retire_one(l) {
                    progress = true;
                }
                if l.has_work() {
                    self.steps += 1;
                    if self.steps > self.opts.max_turns {
                        return Err(Error::Sim(format!(
                            "no termination after {} turns",
                            self.opts.max_turns
                        )));
                    }
                    match self.device.turn(l)? {
                        Turn::Ran => progress = true,
                        Turn::Blocked { stalled } => {
                            self.blocked += 1;
                            if stalled {
                                stalled_at.push(l.kernel.clone());
                            } else {
                                progress = true;
                            }
                        }
                    }
                }
                if l.is_complete() {
                    self.queues.get_mut(&q).unwrap().pop_front();
                    progress = true;
                }
            }
            if !progress {
                return Err(Error::Deadlock(format!(
                    "blocked kernels: {}",
                    stalled_at.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn drain_all(&mut self) -> Result<()> {
        self.run_until(|qs| qs.values().all(VecDeque::is_empty))
    }

    fn enqueue(
        &mut self,
        kernel: &str,
        queue: u32,
        global: Option<&Vec<u64>>,
        local: Option<&Vec<u64>>,
        args: &[Arg],
    ) -> Result<()> {
        let code = self
            .codes
            .get(kernel)
            .cloned()
            .ok_or_else(|| Error::UnknownKernel(kernel.to_string()))?;
        if args.len() != code.param_count {
            return Err(Error::Sim(format!(
                "`{kernel}` takes {} arguments, host passes {}",
                code.param_count,
                args.len()
            )));
        }
        let bindings = args
            .iter()
            .map(|a| match a {
                Arg::Buffer(b) => self
                    .buffer_ids
                    .get(b)
                    .map(|&i| Binding::Buffer(i))
                    .ok_or_else(|| Error::Sim(format!("`{kernel}` bound to unknown buffer `{b}`"))),
                Arg::Int(v) => Ok(Binding::Scalar(Val::I(*v))),
                Arg::Float(v) => Ok(Binding::Scalar(Val::F(*v))),
                other => Err(Error::Sim(format!(
                    "`{kernel}`: argument {other:?} has no value in the interpreter"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let (g, l) = match global {
            None => (vec![1], vec![1]),
            Some(g) => {
                let l = match (local, self.reqd.get(kernel)) {
                    (Some(l), _) => l.clone(),
                    (None, Some(r)) => r.iter().map(|&v| v as u64).take(g.len()).collect(),
                    (None, None) => vec![1; g.len()],
                };
                (g.clone(), l)
            }
        };
        if g.iter().zip(&l).any(|(g, l)| *l == 0 || g % l != 0) {
            return Err(Error::Sim(format!(
                "`{kernel}`: global size {g:?} not divisible by local size {l:?}"
            )));
        }
        if g.iter().product::<u64>() > INSTANCE_CAP {
            return Err(Error::Sim(format!(
                "`{kernel}` exceeds {INSTANCE_CAP} instances"
            )));
        }
        self.seq += 1;
        let launch = Launch::new(code, bindings, g, l, self.seq);
        self.queues.entry(queue).or_default().push_back(launch);
        Ok(())
    }
}

/// Executes `host` over `program` with inputs derived from `opts.seed`.
pub fn interpret(
    program: &KernelProgram,
    host: &HostModel,
    opts: &SimOptions,
) -> Result<RunOutcome> {
    let chan_ids: BTreeMap<String, u32> = program
        .channels
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.clone(), i as u32))
        .collect();
    let mut codes = BTreeMap::new();
    let mut reqd = BTreeMap::new();
    for k in &program.kernels {
        codes.insert(k.name.clone(), Rc::new(compile(k, &chan_ids)?));
        if let Some(Attribute::ReqdWorkGroupSize(r)) = k
            .attributes
            .iter()
            .find(|a| matches!(a, Attribute::ReqdWorkGroupSize(_)))
        {
            reqd.insert(k.name.clone(), r.clone());
        }
    }
    let channels = program
        .channels
        .iter()
        .map(|c| Channel {
            name: c.name.clone(),
            // A depth of 0 still buffers one element in hardware.
            capacity: c.depth.unwrap_or(0).max(1) as usize,
            fifo: VecDeque::new(),
            writes: 0,
            reads: 0,
        })
        .collect();
    let mut sim = Sim {
        device: Device {
            buffers: Vec::new(),
            channels,
            mode: opts.mode,
            max_quantum: opts.max_quantum,
            rng: ChaCha8Rng::seed_from_u64(
                opts.seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(1),
            ),
        },
        codes,
        reqd,
        buffer_ids: BTreeMap::new(),
        queues: BTreeMap::new(),
        seq: 0,
        steps: 0,
        blocked: 0,
        opts,
    };

    // Matching loop ends for host-side loops.
    let mut ends = BTreeMap::new();
    let mut open = Vec::new();
    for (i, op) in host.ops.iter().enumerate() {
        match op {
            HostOp::LoopBegin { .. } => open.push(i),
            HostOp::LoopEnd => {
                let b = open
                    .pop()
                    .ok_or_else(|| Error::Host("unbalanced loop_end".into()))?;
                ends.insert(b, i);
            }
            _ => {}
        }
    }
    let mut loops: Vec<(usize, u64)> = Vec::new();
    let mut reads = Vec::new();
    let mut pc = 0;
    while pc < host.ops.len() {
        match &host.ops[pc] {
            HostOp::Buffer { name, elem, len } => {
                if sim.buffer_ids.contains_key(name) {
                    return Err(Error::Host(format!("buffer `{name}` allocated twice")));
                }
                sim.buffer_ids
                    .insert(name.clone(), sim.device.buffers.len());
                sim.device.buffers.push(Buffer {
                    name: name.clone(),
                    elem: *elem,
                    data: vec![Val::I(0).coerce(*elem); *len as usize],
                });
            }
            HostOp::Write { buffer, init } => {
                sim.drain_all()?;
                let &id = sim
                    .buffer_ids
                    .get(buffer)
                    .ok_or_else(|| Error::Host(format!("write to unknown buffer `{buffer}`")))?;
                let b = &sim.device.buffers[id];
                let (elem, len) = (b.elem, b.data.len() as u64);
                let data = match init {
                    Init::Input => input_values(buffer, elem, len, opts.seed),
                    Init::Zeros => vec![Val::I(0).coerce(elem); len as usize],
                    Init::Values(v) => {
                        if v.len() as u64 != len {
                            return Err(Error::Host(format!(
                                "`{buffer}`: {} values for {len} elements",
                                v.len()
                            )));
                        }
                        v.iter().map(|&x| Val::I(x).coerce(elem)).collect()
                    }
                    Init::File(f) => {
                        let p = match &opts.data_dir {
                            Some(d) => d.join(f),
                            None => PathBuf::from(f),
                        };
                        read_file(&p, elem, len)?
                    }
                };
                sim.device.buffers[id].data = data;
            }
            HostOp::Read { buffer, .. } => {
                sim.drain_all()?;
                let &id = sim
                    .buffer_ids
                    .get(buffer)
                    .ok_or_else(|| Error::Host(format!("read of unknown buffer `{buffer}`")))?;
                let b = &sim.device.buffers[id];
                reads.push((buffer.clone(), b.elem, b.data.clone()));
            }
            HostOp::Enqueue(e) => sim.enqueue(
                &e.kernel,
                e.queue,
                e.global.as_ref(),
                e.local.as_ref(),
                &e.args,
            )?,
            HostOp::Finish { queue } => {
                let q = *queue;
                sim.run_until(|qs| qs.get(&q).is_none_or(VecDeque::is_empty))?;
            }
            HostOp::LoopBegin { id, trips } => {
                let n = match trips {
                    Trips::Count(n) => *n,
                    Trips::Symbolic(s) => {
                        return Err(Error::Host(format!(
                            "loop `{id}` has symbolic trip count `{s}`"
                        )))
                    }
                };
                if n == 0 {
                    pc = ends[&pc];
                } else {
                    loops.push((pc, n));
                }
            }
            HostOp::LoopEnd => {
                let (begin, left) = loops.pop().expect("balanced loops");
                if left > 1 {
                    loops.push((begin, left - 1));
                    pc = begin;
                }
            }
            HostOp::Reprogram { .. } => sim.drain_all()?,
        }
        pc += 1;
    }
    sim.drain_all()?;
    let mut stats = BTreeMap::new();
    for c in &sim.device.channels {
        if c.writes != c.reads {
            return Err(Error::Sim(format!(
                "channel `{}` ends with {} writes and {} reads",
                c.name, c.writes, c.reads
            )));
        }
        stats.insert(
            c.name.clone(),
            ChannelStats {
                writes: c.writes,
                reads: c.reads,
            },
        );
    }
    Ok(RunOutcome {
        reads,
        final_buffers: sim
            .device
            .buffers
            .iter()
            .map(|b| (b.name.clone(), b.data.clone()))
            .collect(),
        steps: sim.steps,
        blocked_steps: sim.blocked,
        channels: stats,
    })
}

/// Result of running two kernel sets on the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionReport {
    pub mode: Mode,
    pub seed: u64,
    pub equal: bool,
    pub max_deviation: f64,
    /// SHA-256 of the host-visible outputs of each set, per buffer.
    pub digests_a: BTreeMap<String, String>,
    pub digests_b: BTreeMap<String, String>,
    pub steps_a: u64,
    pub steps_b: u64,
    pub blocked_a: u64,
    pub blocked_b: u64,
    pub mismatches: Vec<String>,
}

fn digest(elem: ScalarType, snaps: &[&Vec<Val>]) -> String {
    let mut h = Sha256::new();
    for s in snaps {
        for v in s.iter() {
            h.update(v.to_le_bytes(elem));
        }
    }
    format!("{:x}", h.finalize())
}

/// A naive or transformed kernel set with its host script.
#[derive(Debug, Clone, Copy)]
pub struct KernelSet<'a> {
    pub program: &'a KernelProgram,
    pub host: &'a HostModel,
}

/// Runs both sets and compares every host read: integers bitwise, floats
/// within `tolerance` relative error.
pub fn check_equivalence(
    a: KernelSet,
    b: KernelSet,
    opts: &SimOptions,
    tolerance: f64,
) -> Result<ExecutionReport> {
    let ra = interpret(a.program, a.host, opts)?;
    let rb = interpret(b.program, b.host, opts)?;
    let names = |r: &RunOutcome| {
        r.reads
            .iter()
            .map(|(n, e, v)| (n.clone(), *e, v.len()))
            .collect::<Vec<_>>()
    };
    if names(&ra) != names(&rb) {
        return Err(Error::Sim(format!(
            "host reads differ: {:?} vs {:?}",
            names(&ra).iter().map(|x| &x.0).collect::<Vec<_>>(),
            names(&rb).iter().map(|x| &x.0).collect::<Vec<_>>()
        )));
    }
    let mut max_dev = 0.0f64;
    let mut mismatches = Vec::new();
    for (k, ((name, elem, va), (_, _, vb))) in ra.reads.iter().zip(&rb.reads).enumerate() {
        for (i, (x, y)) in va.iter().zip(vb).enumerate() {
            let ok = if elem.is_float() {
                let (x, y) = (x.as_f64(), y.as_f64());
                let dev = (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
                let dev = if x == y { 0.0 } else { dev };
                max_dev = max_dev.max(dev);
                dev <= tolerance
            } else {
                x.as_i64() == y.as_i64()
            };
            if !ok && mismatches.len() < 16 {
                mismatches.push(format!("read #{k} `{name}`[{i}]: {x:?} vs {y:?}"));
            }
        }
    }
    let digests = |r: &RunOutcome| {
        let mut by: BTreeMap<String, (ScalarType, Vec<&Vec<Val>>)> = BTreeMap::new();
        for (n, e, v) in &r.reads {
            by.entry(n.clone()).or_insert((*e, Vec::new())).1.push(v);
        }
        by.into_iter()
            .map(|(n, (e, s))| (n, digest(e, &s)))
            .collect()
    };
    Ok(ExecutionReport {
        mode: opts.mode,
        seed: opts.seed,
        equal: mismatches.is_empty(),
        max_deviation: max_dev,
        digests_a: digests(&ra),
        digests_b: digests(&rb),
        steps_a: ra.steps,
        steps_b: rb.steps,
        blocked_a: ra.blocked_steps,
        blocked_b: rb.blocked_steps,
        mismatches,
    })
}

impl ExecutionReport {
    /// Structured text rendering.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "mode = {:?}\nseed = {}\nequal = {}\nmax_deviation = {:e}\nsteps = [{}, {}]\nblocked_steps = [{}, {}]\n",
            self.mode, self.seed, self.equal, self.max_deviation, self.steps_a, self.steps_b, self.blocked_a, self.blocked_b
        );
        for (n, d) in &self.digests_a {
            s.push_str(&format!("digest_a.{n} = {d}\n"));
        }
        for (n, d) in &self.digests_b {
            s.push_str(&format!("digest_b.{n} = {d}\n"));
        }
        for m in &self.mismatches {
            s.push_str(&format!("mismatch = {m}\n"));
        }
        s
    }
}

/// Copy of `program` with every `mem_fence` call removed from `kernel`.
///
/// Used to check that the adversarial scheduler catches missing fences.
pub fn strip_fences(program: &KernelProgram, kernel: &str) -> KernelProgram {
    fn strip(body: &[Stmt]) -> Vec<Stmt> {
        body.iter()
            .filter(|s| !matches!(s, Stmt::Expr(Expr::Call { name, .. }) if name == "mem_fence"))
            .map(|s| match s {
                Stmt::For {
                    init,
                    cond,
                    step,
                    body,
                } => Stmt::For {
                    init: init.clone(),
                    cond: cond.clone(),
                    step: step.clone(),
                    body: strip(body),
                },
                Stmt::If { cond, then, els } => Stmt::If {
                    cond: cond.clone(),
                    then: strip(then),
                    els: els.as_deref().map(strip),
                },
                Stmt::While { cond, body } => Stmt::While {
                    cond: cond.clone(),
                    body: strip(body),
                },
                Stmt::Block(b) => Stmt::Block(strip(b)),
                other => other.clone(),
            })
            .collect()
    }
    let mut p = program.clone();
    for k in p.kernels.iter_mut().filter(|k| k.name == kernel) {
        k.body = strip(&k.body);
    }
    p
}
