//! Greedy throughput and resource balancing over unified performance factors.
//!
//! A kernel's factor grows along a ladder: by one while below its maximum
//! unroll factor, then by doubling (SIMD) when vectorization pays off, or by
//! whole compute-unit steps otherwise. Every ladder value decomposes exactly
//! into (unroll, SIMD, CU).

use serde::Serialize;

use super::profile::{Estimator, ProfileRecord};
use super::resources::{Resource, ResourceVector};
use crate::error::{Error, Result};

/// Factors beyond this are treated as exceeding the budget.
pub const MAX_FACTOR: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Decomposition {
    pub unroll: u32,
    pub simd: u32,
    pub cu: u32,
}

impl Decomposition {
    pub fn product(&self) -> u32 {
        self.unroll * self.simd * self.cu
    }
}

/// Splits `n_uni` into unroll, SIMD and compute-unit factors.
pub fn decompose_factor(n_uni: u32, max_unroll: u32, vec: bool) -> Result<Decomposition> {
    if n_uni == 0 || max_unroll == 0 {
        return Err(Error::Balance("factors must be at least 1".into()));
    }
    if n_uni < max_unroll {
        return Ok(Decomposition {
            unroll: n_uni,
            simd: 1,
            cu: 1,
        });
    }
    if !n_uni.is_multiple_of(max_unroll) {
        return Err(Error::Balance(format!(
            "N_uni={n_uni} is not a multiple of the maximum unroll factor {max_unroll}"
        )));
    }
    let q = n_uni / max_unroll;
    if vec {
        if !q.is_power_of_two() {
            return Err(Error::Balance(format!(
                "SIMD factor {q} for N_uni={n_uni} is not a power of two"
            )));
        }
        Ok(Decomposition {
            unroll: max_unroll,
            simd: q,
            cu: 1,
        })
    } else {
        Ok(Decomposition {
            unroll: max_unroll,
            simd: 1,
            cu: q,
        })
    }
}

/// Next factor on the increment ladder.
pub fn next_factor(n: u32, max_unroll: u32, vec: bool) -> u32 {
    if n < max_unroll {
        n + 1
    } else if vec {
        n * 2
    } else {
        n + max_unroll
    }
}

/// Previous factor on the increment ladder, if any.
pub fn prev_factor(n: u32, max_unroll: u32, vec: bool) -> Option<u32> {
    if n <= 1 {
        None
    } else if n <= max_unroll {
        Some(n - 1)
    } else if vec {
        Some(n / 2)
    } else {
        Some(n - max_unroll)
    }
}

/// True when `n` is reachable from 1 along the ladder.
pub fn is_reachable(n: u32, max_unroll: u32, vec: bool) -> bool {
    n >= 1 && decompose_factor(n, max_unroll, vec).is_ok()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelFactor {
    pub kernel: String,
    pub n_uni: u32,
    pub decomposition: Decomposition,
    pub estimate: ResourceVector,
    /// Naive throughput times `n_uni`.
    pub throughput: f64,
    /// Naive time divided by `n_uni`.
    pub time_ms: f64,
}

/// One greedy step: the chosen kernel and its factor after the step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub kernel: usize,
    pub from: u32,
    pub to: u32,
    /// False for the final step that overflowed the budget and was rolled back.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorAssignment {
    pub kernels: Vec<KernelFactor>,
    pub total: ResourceVector,
    /// False when even all-ones factors exceed the budget.
    pub feasible: bool,
    pub trace: Vec<Step>,
}

impl FactorAssignment {
    pub fn factors(&self) -> Vec<u32> {
        self.kernels.iter().map(|k| k.n_uni).collect()
    }

    pub fn get(&self, kernel: &str) -> Option<&KernelFactor> {
        self.kernels.iter().find(|k| k.kernel == kernel)
    }
}

fn totals(
    profiles: &[ProfileRecord],
    est: &dyn Estimator,
    n: &[u32],
) -> Result<(Vec<ResourceVector>, ResourceVector)> {
    let per: Vec<ResourceVector> = profiles
        .iter()
        .zip(n)
        .map(|(p, &k)| est.estimate(p, k))
        .collect::<Result<_>>()?;
    let total = ResourceVector::sum(&per);
    Ok((per, total))
}

fn finish(
    profiles: &[ProfileRecord],
    est: &dyn Estimator,
    n: Vec<u32>,
    feasible: bool,
    trace: Vec<Step>,
) -> Result<FactorAssignment> {
    let (per, total) = totals(profiles, est, &n)?;
    let kernels = profiles
        .iter()
        .zip(n)
        .zip(per)
        .map(|((p, k), e)| {
            Ok(KernelFactor {
                kernel: p.kernel.clone(),
                n_uni: k,
                decomposition: decompose_factor(k, p.max_unroll, p.vec)?,
                estimate: e,
                throughput: p.throughput() * k as f64,
                time_ms: p.exec_time_ms / k as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FactorAssignment {
        kernels,
        total,
        feasible,
        trace,
    })
}

/// Runs the greedy loop with `pick` choosing the kernel to grow each step.
fn greedy(
    profiles: &[ProfileRecord],
    est: &dyn Estimator,
    budget: &ResourceVector,
    mut pick: impl FnMut(&[u32], &ResourceVector) -> Result<usize>,
) -> Result<FactorAssignment> {
    if profiles.is_empty() {
        return Err(Error::Balance("nothing to balance".into()));
    }
    let mut n = vec![1u32; profiles.len()];
    let (_, mut total) = totals(profiles, est, &n)?;
    if !total.fits(budget) {
        return finish(profiles, est, n, false, Vec::new());
    }
    let mut trace = Vec::new();
    loop {
        let j = pick(&n, &total)?;
        let from = n[j];
        let to = next_factor(from, profiles[j].max_unroll, profiles[j].vec);
        n[j] = to;
        let (_, t) = totals(profiles, est, &n)?;
        if !t.fits(budget) || to > MAX_FACTOR {
            n[j] = from;
            trace.push(Step {
                kernel: j,
                from,
                to,
                accepted: false,
            });
            break;
        }
        total = t;
        trace.push(Step {
            kernel: j,
            from,
            to,
            accepted: true,
        });
    }
    finish(profiles, est, n, true, trace)
}

/// Repeatedly grows the pipeline stage with the lowest throughput.
pub fn throughput_balance(
    profiles: &[ProfileRecord],
    est: &dyn Estimator,
    budget: &ResourceVector,
) -> Result<FactorAssignment> {
    greedy(profiles, est, budget, |n, _| {
        let mut best = 0;
        for k in 1..profiles.len() {
            if n[k] as f64 * profiles[k].throughput() < n[best] as f64 * profiles[best].throughput()
            {
                best = k;
            }
        }
        Ok(best)
    })
}

/// Repeatedly grows the kernel with the best time saved per unit of the critical resource.
pub fn resource_balance(
    profiles: &[ProfileRecord],
    est: &dyn Estimator,
    budget: &ResourceVector,
) -> Result<FactorAssignment> {
    greedy(profiles, est, budget, |n, total| {
        let crit: Resource = total.critical();
        let mut best: Option<(usize, f64)> = None;
        for (k, p) in profiles.iter().enumerate() {
            let nk = n[k] as f64;
            let dt = p.exec_time_ms / (nk * (nk + 1.0));
            let now = est.estimate(p, n[k])?.fraction(crit);
            let next = est
                .estimate(p, next_factor(n[k], p.max_unroll, p.vec))?
                .fraction(crit);
            let du = next - now;
            let score = if du > 0.0 { dt / du } else { f64::INFINITY };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        Ok(best.unwrap().0)
    })
}
