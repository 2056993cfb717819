//! Producer/consumer relations and their few/many classification.
//!
//! Relations are computed by concrete enumeration of both kernels' access
//! footprints. Cardinalities are measured at the host-given launch and at a
//! launch with doubled group counts and scalar arguments; a cardinality that
//! is the same at both scales is treated as size-independent ("few").

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::space::{footprint, instance_space, Footprint, InstanceSpace, LaunchCtx};
use crate::error::Result;
use crate::frontend::{extract_accesses, AccessSet, Direction, KernelUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepClass {
    FewToFew,
    FewToMany,
    ManyToFew,
    ManyToMany,
}

impl DepClass {
    fn from_parts(few_producers: bool, few_consumers: bool) -> DepClass {
        match (few_producers, few_consumers) {
            (true, true) => DepClass::FewToFew,
            (true, false) => DepClass::FewToMany,
            (false, true) => DepClass::ManyToFew,
            (false, false) => DepClass::ManyToMany,
        }
    }

    pub fn is_few_producers(self) -> bool {
        matches!(self, DepClass::FewToFew | DepClass::FewToMany)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    Constant(u64),
    /// Grows with the launch size: values at the base and doubled scale.
    SizeDependent {
        base: u64,
        scaled: u64,
    },
}

impl Cardinality {
    fn new(base: u64, scaled: u64) -> Cardinality {
        if base == scaled {
            Cardinality::Constant(base)
        } else {
            Cardinality::SizeDependent { base, scaled }
        }
    }

    pub fn is_constant(self) -> bool {
        matches!(self, Cardinality::Constant(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceRelation {
    pub producer: String,
    pub consumer: String,
    /// Shared host buffers carrying the dependence.
    pub buffers: Vec<String>,
    pub klass: DepClass,
    pub producers_per_consumer: Cardinality,
    pub consumers_per_producer: Cardinality,
    /// Some shared access could not be analyzed; the class is a safe over-approximation.
    pub conservative: bool,
    /// Index equalities `producer write = consumer read` per site pair.
    pub equations: Vec<String>,
    pub producer_space: InstanceSpace,
    pub consumer_space: InstanceSpace,
    /// Reason the pair cannot overlap in time, if any (anti or output dependence).
    pub hazard: Option<String>,
    /// Producer instances each consumer instance depends on, at the base launch.
    #[serde(skip)]
    pub deps: Vec<BTreeSet<usize>>,
}

impl DependenceRelation {
    /// Consumer instances depending on each producer instance.
    pub fn dependents(&self) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); self.producer_space.count()];
        for (c, ps) in self.deps.iter().enumerate() {
            for &p in ps {
                if let Some(s) = out.get_mut(p) {
                    s.insert(c);
                }
            }
        }
        out
    }
}

/// One side of a relation: a kernel with its launch.
#[derive(Debug, Clone, Copy)]
pub struct Side<'a> {
    pub unit: &'a KernelUnit,
    pub ctx: &'a LaunchCtx,
}

struct Measured {
    deps: Vec<BTreeSet<usize>>,
    ppc: u64,
    cpp: u64,
    producer_space: InstanceSpace,
    consumer_space: InstanceSpace,
    pf: Footprint,
    cf: Footprint,
}

fn measure(
    p: Side,
    pa: &AccessSet,
    c: Side,
    ca: &AccessSet,
    buffers: &[String],
    conservative: bool,
) -> Result<Measured> {
    let ps = instance_space(p.unit, pa, p.ctx);
    let cs = instance_space(c.unit, ca, c.ctx);
    let pf = footprint(pa, p.ctx, &ps)?;
    let cf = footprint(ca, c.ctx, &cs)?;
    let np = ps.count();
    let mut deps = vec![BTreeSet::new(); cs.count()];
    if conservative {
        for d in deps.iter_mut() {
            d.extend(0..np);
        }
    } else {
        for b in buffers {
            let (Some(writers), Some(readers)) = (pf.writes.get(b), cf.reads.get(b)) else {
                continue;
            };
            for (e, cons) in readers {
                if let Some(ws) = writers.get(e) {
                    for &ci in cons {
                        deps[ci].extend(ws.iter().copied());
                    }
                }
            }
        }
    }
    let ppc = deps.iter().map(|d| d.len() as u64).max().unwrap_or(0);
    let mut per_producer = vec![0u64; np];
    for d in &deps {
        for &pi in d {
            per_producer[pi] += 1;
        }
    }
    let cpp = per_producer.into_iter().max().unwrap_or(0);
    Ok(Measured {
        deps,
        ppc,
        cpp,
        producer_space: ps,
        consumer_space: cs,
        pf,
        cf,
    })
}

/// Checks that the consumer never overwrites data the producer still uses.
///
/// Overlapped execution is safe when every producer instance reading an
/// element the consumer writes is one the writing consumer instance already
/// waits for, and the two kernels never write the same element.
fn hazard(m: &Measured) -> Option<String> {
    for (b, writes) in &m.cf.writes {
        if !m.pf.touches(b) {
            continue;
        }
        if m.pf.opaque.contains(b) {
            return Some(format!(
                "consumer writes `{b}`, which the producer accesses opaquely"
            ));
        }
        for (e, cons) in writes {
            if m.pf.writes.get(b).is_some_and(|w| w.contains_key(e)) {
                return Some(format!("both kernels write `{b}[{e}]`"));
            }
            if let Some(readers) = m.pf.reads.get(b).and_then(|r| r.get(e)) {
                for &c in cons {
                    if let Some(p) = readers.iter().find(|p| !m.deps[c].contains(p)) {
                        return Some(format!(
                            "consumer instance {c} overwrites `{b}[{e}]` before producer instance {p} reads it"
                        ));
                    }
                }
            }
        }
    }
    for b in &m.cf.opaque {
        if m.pf.touches(b)
            && (m.pf.writes.contains_key(b)
                || m.pf.reads.contains_key(b)
                || m.pf.opaque.contains(b))
        {
            return Some(format!(
                "consumer accesses `{b}` opaquely while the producer uses it"
            ));
        }
    }
    None
}

fn equations(p: Side, pa: &AccessSet, c: Side, ca: &AccessSet, buffers: &[String]) -> Vec<String> {
    let host = |ctx: &LaunchCtx, param: &str| {
        ctx.bindings
            .get(param)
            .cloned()
            .unwrap_or_else(|| param.to_string())
    };
    let mut out = Vec::new();
    for b in buffers {
        for w in pa
            .accesses
            .iter()
            .filter(|a| a.direction == Direction::Write)
        {
            if host(p.ctx, &w.buffer) != *b {
                continue;
            }
            for r in ca
                .accesses
                .iter()
                .filter(|a| a.direction == Direction::Read)
            {
                if host(c.ctx, &r.buffer) == *b {
                    let eq = format!("{b}: {} = {}", w.index, r.index);
                    if !out.contains(&eq) {
                        out.push(eq);
                    }
                }
            }
        }
    }
    out
}

/// Relates producer writes to consumer reads over `buffers` (host names).
pub fn analyze_dependence(p: Side, c: Side, buffers: &[String]) -> Result<DependenceRelation> {
    let pa = extract_accesses(p.unit);
    let ca = extract_accesses(c.unit);
    let host_opaque = |acc: &AccessSet, ctx: &LaunchCtx| -> BTreeSet<String> {
        acc.opaque
            .iter()
            .map(|b| ctx.bindings.get(b).cloned().unwrap_or_else(|| b.clone()))
            .collect()
    };
    let (po, co) = (host_opaque(&pa, p.ctx), host_opaque(&ca, c.ctx));
    let mut conservative = buffers.iter().any(|b| po.contains(b) || co.contains(b));

    let base = measure(p, &pa, c, &ca, buffers, conservative)?;
    // Accesses that fail to enumerate concretely are opaque too.
    if !conservative
        && buffers
            .iter()
            .any(|b| base.pf.opaque.contains(b) || base.cf.opaque.contains(b))
    {
        conservative = true;
    }
    let base = if conservative {
        measure(p, &pa, c, &ca, buffers, true)?
    } else {
        base
    };
    let (ppc, cpp) = if conservative {
        (
            Cardinality::SizeDependent {
                base: base.ppc,
                scaled: base.ppc * 2,
            },
            Cardinality::SizeDependent {
                base: base.cpp,
                scaled: base.cpp * 2,
            },
        )
    } else {
        let (ps, cs) = (p.ctx.scaled(2), c.ctx.scaled(2));
        let scaled = measure(
            Side {
                unit: p.unit,
                ctx: &ps,
            },
            &pa,
            Side {
                unit: c.unit,
                ctx: &cs,
            },
            &ca,
            buffers,
            false,
        )?;
        (
            Cardinality::new(base.ppc, scaled.ppc),
            Cardinality::new(base.cpp, scaled.cpp),
        )
    };
    let klass = DepClass::from_parts(ppc.is_constant(), cpp.is_constant());
    let hazard = if conservative {
        Some("shared buffer accessed opaquely".to_string())
    } else {
        hazard(&base)
    };
    Ok(DependenceRelation {
        producer: p.unit.name.clone(),
        consumer: c.unit.name.clone(),
        buffers: buffers.to_vec(),
        klass,
        producers_per_consumer: ppc,
        consumers_per_producer: cpp,
        conservative,
        equations: equations(p, &pa, c, &ca, buffers),
        producer_space: base.producer_space,
        consumer_space: base.consumer_space,
        hazard,
        deps: base.deps,
    })
}
