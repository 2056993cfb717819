//! Device model: memory, channels, kernel launches and the scheduler.
//!
//! Each launch runs one work-group at a time; the items of that group run in
//! order and switch at barriers. Launches at the head of different command
//! queues interleave round-robin, one turn per launch per round. A turn runs
//! a seeded number of instructions or stops earlier when the thread blocks on
//! a channel, spins on a flag, reaches a barrier or finishes.
//!
//! In adversarial mode later launches get their turn first and every thread
//! buffers its global stores: loads see the thread's own pending stores,
//! fences drain the buffer in order, and a finished thread's leftovers become
//! visible newest-first, one store per round.

use std::collections::VecDeque;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::compile::{Arr, Code, IdKind, Op};
use super::value::{binary, math, unary, Val};
use crate::error::{Error, Result};
use crate::frontend::ScalarType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Queue-order round robin over sequentially consistent memory.
    Fair,
    /// Consumer-first order with per-thread store buffers.
    Adversarial,
}

pub struct Buffer {
    pub name: String,
    pub elem: ScalarType,
    pub data: Vec<Val>,
}

pub struct Channel {
    pub name: String,
    pub capacity: usize,
    pub fifo: VecDeque<Val>,
    pub writes: u64,
    pub reads: u64,
}

#[derive(Debug, Clone, Copy)]
pub enum Binding {
    Buffer(usize),
    Scalar(Val),
}

type Store = (usize, usize, Val);

#[derive(PartialEq, Eq)]
enum ThreadState {
    Running,
    AtBarrier,
    Done,
}

struct Thread {
    pc: usize,
    stack: Vec<Val>,
    slots: Vec<Val>,
    privs: Vec<Vec<Val>>,
    local: usize,
    state: ThreadState,
    pending: Vec<Store>,
}

struct Group {
    index: usize,
    threads: Vec<Thread>,
    cursor: usize,
    locals: Vec<Vec<Val>>,
}

pub struct Launch {
    pub kernel: String,
    pub seq: u64,
    code: Rc<Code>,
    bindings: Vec<Binding>,
    global: Vec<u64>,
    local: Vec<u64>,
    groups: usize,
    next_group: usize,
    group: Option<Group>,
    retiring: Vec<Store>,
}

impl Launch {
    pub fn new(
        code: Rc<Code>,
        bindings: Vec<Binding>,
        global: Vec<u64>,
        local: Vec<u64>,
        seq: u64,
    ) -> Launch {
        let groups = global
            .iter()
            .zip(&local)
            .map(|(g, l)| g / l.max(&1))
            .product::<u64>() as usize;
        Launch {
            kernel: code.name.clone(),
            seq,
            code,
            bindings,
            global,
            local,
            groups,
            next_group: 0,
            group: None,
            retiring: Vec::new(),
        }
    }

    fn group_size(&self) -> usize {
        self.local.iter().product::<u64>() as usize
    }

    pub fn has_work(&self) -> bool {
        self.group.is_some() || self.next_group < self.groups
    }

    pub fn is_complete(&self) -> bool {
        !self.has_work() && self.retiring.is_empty()
    }

    fn tuple(mut v: usize, extents: impl Iterator<Item = u64>) -> Vec<u64> {
        extents
            .map(|e| {
                let e = e.max(1) as usize;
                let d = v % e;
                v /= e;
                d as u64
            })
            .collect()
    }

    fn id(&self, kind: IdKind, d: usize, group: usize, local: usize) -> i64 {
        let dims = self.global.len();
        if d >= dims {
            // Out-of-range dimensions behave like extent 1.
            return match kind {
                IdKind::LocalSize | IdKind::NumGroups | IdKind::GlobalSize => 1,
                _ => 0,
            };
        }
        let ng = (0..dims).map(|i| self.global[i] / self.local[i].max(1));
        let gt = Launch::tuple(group, ng);
        let lt = Launch::tuple(local, self.local.iter().copied());
        (match kind {
            IdKind::Group => gt[d],
            IdKind::Local => lt[d],
            IdKind::Global => gt[d] * self.local[d] + lt[d],
            IdKind::LocalSize => self.local[d],
            IdKind::NumGroups => self.global[d] / self.local[d].max(1),
            IdKind::GlobalSize => self.global[d],
        }) as i64
    }

    fn start_group(&mut self) {
        let code = &self.code;
        let threads = (0..self.group_size())
            .map(|l| {
                let mut slots = vec![Val::I(0); code.slots];
                for &(p, s) in &code.scalar_params {
                    if let Binding::Scalar(v) = self.bindings[p] {
                        slots[s as usize] = v.coerce(code.slot_types[s as usize]);
                    }
                }
                Thread {
                    pc: 0,
                    stack: Vec::new(),
                    slots,
                    privs: code
                        .private_arrays
                        .iter()
                        .map(|&(n, _)| vec![Val::I(0); n])
                        .collect(),
                    local: l,
                    state: ThreadState::Running,
                    pending: Vec::new(),
                }
            })
            .collect();
        self.group = Some(Group {
            index: self.next_group,
            threads,
            cursor: 0,
            locals: code
                .local_arrays
                .iter()
                .map(|&(n, _)| vec![Val::I(0); n])
                .collect(),
        });
        self.next_group += 1;
    }
}

/// Outcome of one scheduling turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Ran,
    /// Ended on a blocking operation; `stalled` if nothing changed at all.
    Blocked {
        stalled: bool,
    },
}

pub struct Device {
    pub buffers: Vec<Buffer>,
    pub channels: Vec<Channel>,
    pub mode: Mode,
    pub max_quantum: u32,
    pub rng: ChaCha8Rng,
}

#[derive(PartialEq)]
enum Stop {
    Quantum,
    Blocked,
    Barrier,
    Done,
}

impl Device {
    fn sim_err(kernel: &str, msg: impl std::fmt::Display) -> Error {
        Error::Sim(format!("`{kernel}`: {msg}"))
    }

    fn load_global(&self, pending: &[Store], buf: usize, idx: i64, kernel: &str) -> Result<Val> {
        let b = &self.buffers[buf];
        let i = usize::try_from(idx)
            .ok()
            .filter(|&i| i < b.data.len())
            .ok_or_else(|| {
                Device::sim_err(kernel, format!("load `{}`[{idx}] out of bounds", b.name))
            })?;
        if let Some(&(_, _, v)) = pending
            .iter()
            .rev()
            .find(|(pb, pi, _)| *pb == buf && *pi == i)
        {
            return Ok(v);
        }
        Ok(b.data[i])
    }

    fn check_index(&self, buf: usize, idx: i64, kernel: &str) -> Result<usize> {
        let b = &self.buffers[buf];
        usize::try_from(idx)
            .ok()
            .filter(|&i| i < b.data.len())
            .ok_or_else(|| {
                Device::sim_err(kernel, format!("store `{}`[{idx}] out of bounds", b.name))
            })
    }

    fn drain(&mut self, pending: &mut Vec<Store>) {
        for (b, i, v) in pending.drain(..) {
            self.buffers[b].data[i] = v;
        }
    }

    /// Makes one retired store of `l` visible (newest first).
    pub fn retire_one(&mut self, l: &mut Launch) -> bool {
        match l.retiring.pop() {
            Some((b, i, v)) => {
                self.buffers[b].data[i] = v;
                true
            }
            None => false,
        }
    }

    /// Runs one turn of launch `l`.
    pub fn turn(&mut self, l: &mut Launch) -> Result<Turn> {
        if l.group.is_none() {
            l.start_group();
        }
        let quantum = self.rng.gen_range(1..=self.max_quantum.max(1));
        let code = Rc::clone(&l.code);
        let kernel = l.kernel.clone();
        let group_size = l.group_size();
        let mut g = l.group.take().expect("group started");
        let ti = g.cursor;
        let start_pc = g.threads[ti].pc;
        let mut changed = false;
        let stop = self.run(l, &code, &kernel, &mut g, ti, quantum, &mut changed)?;
        let end_pc = g.threads[ti].pc;
        match stop {
            Stop::Quantum | Stop::Blocked => {}
            Stop::Barrier | Stop::Done => {
                if stop == Stop::Done {
                    let mut p = std::mem::take(&mut g.threads[ti].pending);
                    match self.mode {
                        Mode::Fair => self.drain(&mut p),
                        Mode::Adversarial => l.retiring.extend(p),
                    }
                }
                // Next item of the group that can run; release barriers when all arrived.
                let next =
                    (ti + 1..group_size).find(|&i| g.threads[i].state == ThreadState::Running);
                match next {
                    Some(n) => g.cursor = n,
                    None => {
                        let mut waiting = false;
                        for t in g
                            .threads
                            .iter_mut()
                            .filter(|t| t.state == ThreadState::AtBarrier)
                        {
                            t.state = ThreadState::Running;
                            waiting = true;
                        }
                        match g
                            .threads
                            .iter()
                            .position(|t| t.state == ThreadState::Running)
                        {
                            Some(first) if waiting => g.cursor = first,
                            _ => {
                                l.group = None;
                                return Ok(Turn::Ran);
                            }
                        }
                    }
                }
            }
        }
        l.group = Some(g);
        Ok(match stop {
            Stop::Blocked => Turn::Blocked {
                stalled: !changed && start_pc == end_pc,
            },
            _ => Turn::Ran,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        l: &Launch,
        code: &Code,
        kernel: &str,
        g: &mut Group,
        ti: usize,
        quantum: u32,
        changed: &mut bool,
    ) -> Result<Stop> {
        let group = g.index;
        let locals = &mut g.locals;
        let t = &mut g.threads[ti];
        let adversarial = self.mode == Mode::Adversarial;
        let pop = |t: &mut Thread| t.stack.pop().expect("bytecode stack underflow");
        for _ in 0..quantum {
            let op = &code.ops[t.pc];
            t.pc += 1;
            match *op {
                Op::Int(v) => t.stack.push(Val::I(v)),
                Op::Float(v) => t.stack.push(Val::F(v)),
                Op::Load(s) => t.stack.push(t.slots[s as usize]),
                Op::Store(s, ty) => {
                    let v = pop(t);
                    t.slots[s as usize] = v.coerce(ty);
                    *changed = true;
                }
                Op::LoadArr(a) => {
                    let idx = pop(t).as_i64();
                    let v = match a {
                        Arr::Global(p) => {
                            let Binding::Buffer(b) = l.bindings[p as usize] else {
                                return Err(Device::sim_err(
                                    kernel,
                                    "scalar argument used as a buffer",
                                ));
                            };
                            self.load_global(&t.pending, b, idx, kernel)?
                        }
                        Arr::Local(i) => *usize::try_from(idx)
                            .ok()
                            .and_then(|x| locals[i as usize].get(x))
                            .ok_or_else(|| {
                                Device::sim_err(kernel, format!("local load [{idx}] out of bounds"))
                            })?,
                        Arr::Private(i) => *usize::try_from(idx)
                            .ok()
                            .and_then(|x| t.privs[i as usize].get(x))
                            .ok_or_else(|| {
                                Device::sim_err(
                                    kernel,
                                    format!("private load [{idx}] out of bounds"),
                                )
                            })?,
                    };
                    t.stack.push(v);
                }
                Op::StoreArr(a) => {
                    let v = pop(t);
                    let idx = pop(t).as_i64();
                    *changed = true;
                    match a {
                        Arr::Global(p) => {
                            let Binding::Buffer(b) = l.bindings[p as usize] else {
                                return Err(Device::sim_err(
                                    kernel,
                                    "scalar argument used as a buffer",
                                ));
                            };
                            let i = self.check_index(b, idx, kernel)?;
                            let v = v.coerce(self.buffers[b].elem);
                            if adversarial {
                                t.pending.push((b, i, v));
                            } else {
                                self.buffers[b].data[i] = v;
                            }
                        }
                        Arr::Local(k) => {
                            let ty = code.local_arrays[k as usize].1;
                            let slot = usize::try_from(idx)
                                .ok()
                                .and_then(|x| locals[k as usize].get_mut(x))
                                .ok_or_else(|| {
                                    Device::sim_err(
                                        kernel,
                                        format!("local store [{idx}] out of bounds"),
                                    )
                                })?;
                            *slot = v.coerce(ty);
                        }
                        Arr::Private(k) => {
                            let ty = code.private_arrays[k as usize].1;
                            let slot = usize::try_from(idx)
                                .ok()
                                .and_then(|x| t.privs[k as usize].get_mut(x))
                                .ok_or_else(|| {
                                    Device::sim_err(
                                        kernel,
                                        format!("private store [{idx}] out of bounds"),
                                    )
                                })?;
                            *slot = v.coerce(ty);
                        }
                    }
                }
                Op::Dup => {
                    let v = *t.stack.last().expect("bytecode stack underflow");
                    t.stack.push(v);
                }
                Op::Pop => {
                    pop(t);
                }
                Op::Bin(b) => {
                    let y = pop(t);
                    let x = pop(t);
                    let r = binary(b, x, y)
                        .ok_or_else(|| Device::sim_err(kernel, "integer division by zero"))?;
                    t.stack.push(r);
                }
                Op::Un(u) => {
                    let x = pop(t);
                    t.stack.push(unary(u, x));
                }
                Op::Cast(ty) => {
                    let x = pop(t);
                    t.stack.push(x.coerce(ty));
                }
                Op::Jmp(to) => t.pc = to as usize,
                Op::Jz(to) => {
                    if !pop(t).truthy() {
                        t.pc = to as usize;
                    }
                }
                Op::Jnz(to) => {
                    if pop(t).truthy() {
                        t.pc = to as usize;
                    }
                }
                Op::Id(kind) => {
                    let d = pop(t).as_i64().max(0) as usize;
                    t.stack.push(Val::I(l.id(kind, d, group, t.local)));
                }
                Op::WorkDim => t.stack.push(Val::I(l.global.len() as i64)),
                Op::Math(m) => {
                    let n = m.arity();
                    let at = t.stack.len() - n;
                    let args: Vec<Val> = t.stack.drain(at..).collect();
                    t.stack.push(math(m, &args));
                }
                Op::ChanRead(c) => {
                    let ch = &mut self.channels[c as usize];
                    match ch.fifo.pop_front() {
                        Some(v) => {
                            ch.reads += 1;
                            t.stack.push(v);
                            *changed = true;
                        }
                        None => {
                            t.pc -= 1;
                            return Ok(Stop::Blocked);
                        }
                    }
                }
                Op::ChanWrite(c) => {
                    let ch = &mut self.channels[c as usize];
                    if ch.fifo.len() >= ch.capacity {
                        t.pc -= 1;
                        return Ok(Stop::Blocked);
                    }
                    let v = pop(t);
                    ch.fifo.push_back(v);
                    ch.writes += 1;
                    *changed = true;
                }
                Op::Barrier { global } => {
                    if global {
                        let mut p = std::mem::take(&mut t.pending);
                        self.drain(&mut p);
                    }
                    t.state = ThreadState::AtBarrier;
                    *changed = true;
                    return Ok(Stop::Barrier);
                }
                Op::Fence => {
                    if !t.pending.is_empty() {
                        let mut p = std::mem::take(&mut t.pending);
                        self.drain(&mut p);
                        *changed = true;
                    }
                }
                Op::Yield(to) => {
                    t.pc = to as usize;
                    return Ok(Stop::Blocked);
                }
                Op::Ret => {
                    t.state = ThreadState::Done;
                    *changed = true;
                    return Ok(Stop::Done);
                }
            }
        }
        Ok(Stop::Quantum)
    }
}
