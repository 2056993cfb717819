//! Balancing a mix of pipelines and globally synchronized kernels.
//!
//! Each pipeline is first treated as one virtual kernel (time of its slowest
//! stage, summed resources) and balanced against the other kernels by
//! resource balancing. The allocation the virtual kernel receives is then
//! divided among its stages by throughput balancing.

use std::collections::BTreeSet;

use serde::Serialize;

use super::algo::{resource_balance, throughput_balance, FactorAssignment, KernelFactor};
use super::profile::{Estimator, LinearEstimator, ProfileRecord};
use super::resources::{ResourceVector, StaticResources};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Throughput,
    Resource,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAllocation {
    pub kernels: Vec<String>,
    pub n_uni: u32,
    pub allocation: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub method: Method,
    /// Per-kernel factors in input order.
    pub assignment: FactorAssignment,
    /// Outer resource-balancing run over units (hybrid only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<FactorAssignment>,
    pub groups: Vec<GroupAllocation>,
}

fn add_static(a: StaticResources, b: StaticResources) -> StaticResources {
    StaticResources {
        alut: a.alut + b.alut,
        ff: a.ff + b.ff,
        ram: a.ram + b.ram,
        dsp: a.dsp + b.dsp,
    }
}

/// Profile of a pipeline seen as one kernel growing by plain unit steps.
pub fn virtual_profile(stages: &[&ProfileRecord]) -> ProfileRecord {
    let zero = StaticResources::default();
    ProfileRecord {
        kernel: stages
            .iter()
            .map(|p| p.kernel.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        exec_time_ms: stages.iter().map(|p| p.exec_time_ms).fold(0.0, f64::max),
        output_bytes: stages.last().map_or(0, |p| p.output_bytes),
        bw_frac: stages.iter().map(|p| p.bw_frac).sum(),
        vec: false,
        max_unroll: u32::MAX / 2,
        base: stages.iter().fold(zero, |a, p| add_static(a, p.base)),
        delta: stages.iter().fold(zero, |a, p| add_static(a, p.delta)),
    }
}

/// Balances `profiles` partitioned into `groups` (indices); groups of two or more are pipelines.
pub fn balance_groups(
    profiles: &[ProfileRecord],
    groups: &[Vec<usize>],
    est: &dyn Estimator,
    budget: &ResourceVector,
) -> Result<BalanceReport> {
    let mut covered: Vec<usize> = groups.iter().flatten().copied().collect();
    covered.sort_unstable();
    if covered != (0..profiles.len()).collect::<Vec<_>>() {
        return Err(Error::Balance("groups must partition the kernels".into()));
    }
    let pick = |g: &[usize]| g.iter().map(|&i| profiles[i].clone()).collect::<Vec<_>>();
    if groups.len() == 1 && groups[0].len() > 1 {
        let a = throughput_balance(&pick(&groups[0]), est, budget)?;
        return Ok(reorder(
            profiles,
            groups,
            vec![a],
            Method::Throughput,
            None,
            Vec::new(),
        ));
    }
    if groups.iter().all(|g| g.len() == 1) {
        let a = resource_balance(
            &pick(&groups.iter().flatten().copied().collect::<Vec<_>>()),
            est,
            budget,
        )?;
        let single: Vec<Vec<usize>> = vec![groups.iter().flatten().copied().collect()];
        return Ok(reorder(
            profiles,
            &single,
            vec![a],
            Method::Resource,
            None,
            Vec::new(),
        ));
    }
    // Virtual kernels use the linear model over summed stage resources.
    let units: Vec<ProfileRecord> = groups
        .iter()
        .map(|g| {
            if g.len() == 1 {
                profiles[g[0]].clone()
            } else {
                virtual_profile(&g.iter().map(|&i| &profiles[i]).collect::<Vec<_>>())
            }
        })
        .collect();
    let unit_est = UnitEstimator {
        est,
        virtual_units: groups
            .iter()
            .zip(&units)
            .filter(|(g, _)| g.len() > 1)
            .map(|(_, u)| u.kernel.clone())
            .collect(),
    };
    let outer = resource_balance(&units, &unit_est, budget)?;
    let mut parts = Vec::new();
    let mut allocations = Vec::new();
    for (u, g) in groups.iter().enumerate() {
        let f = &outer.kernels[u];
        if g.len() == 1 {
            parts.push(FactorAssignment {
                kernels: vec![f.clone()],
                total: f.estimate,
                feasible: outer.feasible,
                trace: Vec::new(),
            });
        } else {
            let inner = throughput_balance(&pick(g), est, &f.estimate)?;
            allocations.push(GroupAllocation {
                kernels: g.iter().map(|&i| profiles[i].kernel.clone()).collect(),
                n_uni: f.n_uni,
                allocation: f.estimate,
            });
            parts.push(inner);
        }
    }
    let feasible = outer.feasible;
    let mut r = reorder(
        profiles,
        groups,
        parts,
        Method::Hybrid,
        Some(outer),
        allocations,
    );
    r.assignment.feasible &= feasible;
    Ok(r)
}

/// Estimator over balancing units: real kernels use `est`, virtual ones the linear model.
struct UnitEstimator<'a> {
    est: &'a dyn Estimator,
    virtual_units: BTreeSet<String>,
}

impl Estimator for UnitEstimator<'_> {
    fn estimate(&self, p: &ProfileRecord, n_uni: u32) -> Result<ResourceVector> {
        if self.virtual_units.contains(&p.kernel) {
            LinearEstimator.estimate(p, n_uni)
        } else {
            self.est.estimate(p, n_uni)
        }
    }
}

fn reorder(
    profiles: &[ProfileRecord],
    groups: &[Vec<usize>],
    parts: Vec<FactorAssignment>,
    method: Method,
    outer: Option<FactorAssignment>,
    allocations: Vec<GroupAllocation>,
) -> BalanceReport {
    let mut slots: Vec<Option<KernelFactor>> = vec![None; profiles.len()];
    let mut feasible = true;
    let mut trace = Vec::new();
    for (g, part) in groups.iter().zip(&parts) {
        feasible &= part.feasible;
        for (&i, k) in g.iter().zip(&part.kernels) {
            slots[i] = Some(k.clone());
        }
        if parts.len() == 1 {
            trace = part.trace.clone();
        }
    }
    let kernels: Vec<KernelFactor> = slots
        .into_iter()
        .map(|k| k.expect("groups cover every kernel"))
        .collect();
    let total = ResourceVector::sum(kernels.iter().map(|k| &k.estimate));
    BalanceReport {
        method,
        assignment: FactorAssignment {
            kernels,
            total,
            feasible,
            trace,
        },
        outer,
        groups: allocations,
    }
}
