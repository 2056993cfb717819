//! Auto-tuning around the balanced factors: candidate emission and selection.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::algo::{decompose_factor, next_factor, prev_factor, Decomposition, FactorAssignment};
use super::profile::Profiles;
use crate::error::{Error, Result};
use crate::frontend::{Attribute, KernelMode, KernelUnit, Pragma, Stmt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub n_uni: u32,
    pub unroll: u32,
    pub simd: u32,
    pub cu: u32,
    /// Variant source file, relative to the tuning directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningKernel {
    pub kernel: String,
    pub n_uni: u32,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPlan {
    pub p: u32,
    #[serde(rename = "kernel")]
    pub kernels: Vec<TuningKernel>,
}

impl TuningPlan {
    pub fn from_toml(text: &str) -> Result<TuningPlan> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn variant_count(&self) -> usize {
        self.kernels.iter().map(|k| k.candidates.len()).sum()
    }
}

/// Up to `p` ladder steps below and above `n_uni`, stopping at 1.
pub fn tuning_candidates(n_uni: u32, p: u32, max_unroll: u32, vec: bool) -> Vec<u32> {
    let mut below = Vec::new();
    let mut n = n_uni;
    for _ in 0..p {
        match prev_factor(n, max_unroll, vec) {
            Some(x) => {
                below.push(x);
                n = x;
            }
            None => break,
        }
    }
    below.reverse();
    below.push(n_uni);
    let mut n = n_uni;
    for _ in 0..p {
        n = next_factor(n, max_unroll, vec);
        below.push(n);
    }
    below
}

/// Lists the candidate variants for every balanced kernel.
pub fn emit_tuning_plan(
    assignment: &FactorAssignment,
    profiles: &Profiles,
    p: u32,
) -> Result<TuningPlan> {
    let mut kernels = Vec::new();
    for k in &assignment.kernels {
        let prof = profiles
            .get(&k.kernel)
            .ok_or_else(|| Error::MissingProfile(k.kernel.clone()))?;
        let candidates = tuning_candidates(k.n_uni, p, prof.max_unroll, prof.vec)
            .into_iter()
            .map(|n| {
                let d = decompose_factor(n, prof.max_unroll, prof.vec)?;
                Ok(Candidate {
                    n_uni: n,
                    unroll: d.unroll,
                    simd: d.simd,
                    cu: d.cu,
                    file: format!("{}_n{n}.cl", k.kernel),
                })
            })
            .collect::<Result<_>>()?;
        kernels.push(TuningKernel {
            kernel: k.kernel.clone(),
            n_uni: k.n_uni,
            candidates,
        });
    }
    Ok(TuningPlan { p, kernels })
}

/// Attaches unroll, SIMD and compute-unit settings to a naive kernel.
pub fn apply_factors(unit: &KernelUnit, d: Decomposition) -> KernelUnit {
    let mut out = unit.clone();
    out.attributes.retain(|a| {
        !matches!(
            a,
            Attribute::NumSimdWorkItems(_) | Attribute::NumComputeUnits(_)
        )
    });
    if d.simd > 1 && unit.mode == KernelMode::NdRange {
        out.attributes.push(Attribute::NumSimdWorkItems(d.simd));
    }
    if d.cu > 1 {
        out.attributes.push(Attribute::NumComputeUnits(d.cu));
    }
    // Single work-item kernels vectorize by unrolling further.
    let unroll = if unit.mode == KernelMode::SingleWorkItem {
        d.unroll * d.simd
    } else {
        d.unroll
    };
    if unroll > 1 {
        let mut body = Vec::with_capacity(out.body.len());
        for s in out.body.drain(..) {
            if matches!(s, Stmt::For { .. }) {
                body.push(Stmt::Pragma(Pragma::Unroll(Some(unroll))));
            }
            body.push(s);
        }
        out.body = body;
    }
    out
}

/// Writes every candidate variant and the plan manifest into `dir`.
pub fn write_tuning_variants(
    plan: &TuningPlan,
    units: &BTreeMap<String, KernelUnit>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for k in &plan.kernels {
        let unit = units
            .get(&k.kernel)
            .ok_or_else(|| Error::UnknownKernel(k.kernel.clone()))?;
        for c in &k.candidates {
            let v = apply_factors(
                unit,
                Decomposition {
                    unroll: c.unroll,
                    simd: c.simd,
                    cu: c.cu,
                },
            );
            crate::io::write_atomic(&dir.join(&c.file), &format!("{v}\n"))?;
        }
    }
    crate::io::write_atomic(&dir.join("manifest.toml"), &plan.to_toml()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kernel: String,
    pub n_uni: u32,
    pub time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    #[serde(default)]
    pub measurement: Vec<Measurement>,
}

impl Measurements {
    pub fn from_toml(text: &str) -> Result<Measurements> {
        Ok(toml::from_str(text)?)
    }
}

/// Picks the fastest measured candidate per kernel; ties go to the smaller factor.
pub fn select_tuned(plan: &TuningPlan, m: &Measurements) -> Result<BTreeMap<String, u32>> {
    let mut times: BTreeMap<(&str, u32), f64> = BTreeMap::new();
    for x in &m.measurement {
        times.insert((x.kernel.as_str(), x.n_uni), x.time_ms);
    }
    let mut missing = Vec::new();
    let mut out = BTreeMap::new();
    for k in &plan.kernels {
        let mut best: Option<(u32, f64)> = None;
        let mut cands: Vec<u32> = k.candidates.iter().map(|c| c.n_uni).collect();
        cands.sort_unstable();
        for n in cands {
            match times.get(&(k.kernel.as_str(), n)) {
                Some(&t) => {
                    if best.is_none_or(|(_, bt)| t < bt) {
                        best = Some((n, t));
                    }
                }
                None => missing.push(format!("{}@{n}", k.kernel)),
            }
        }
        if let Some((n, _)) = best {
            out.insert(k.kernel.clone(), n);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingMeasurement(missing.join(", ")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_follow_the_ladder_and_clamp() {
        assert_eq!(tuning_candidates(5, 2, 8, true), vec![3, 4, 5, 6, 7]);
        assert_eq!(tuning_candidates(1, 2, 8, true), vec![1, 2, 3]);
        assert_eq!(tuning_candidates(4, 0, 8, true), vec![4]);
        assert_eq!(tuning_candidates(8, 2, 4, true), vec![3, 4, 8, 16, 32]);
        assert_eq!(tuning_candidates(8, 2, 4, false), vec![3, 4, 8, 12, 16]);
    }

    fn plan(cands: &[u32]) -> TuningPlan {
        TuningPlan {
            p: 1,
            kernels: vec![TuningKernel {
                kernel: "k".into(),
                n_uni: cands[cands.len() / 2],
                candidates: cands
                    .iter()
                    .map(|&n| Candidate {
                        n_uni: n,
                        unroll: n,
                        simd: 1,
                        cu: 1,
                        file: String::new(),
                    })
                    .collect(),
            }],
        }
    }

    fn meas(v: &[(u32, f64)]) -> Measurements {
        Measurements {
            measurement: v
                .iter()
                .map(|&(n, t)| Measurement {
                    kernel: "k".into(),
                    n_uni: n,
                    time_ms: t,
                })
                .collect(),
        }
    }

    #[test]
    fn selection_takes_argmin_with_small_tie_break() {
        let p = plan(&[3, 4, 5]);
        assert_eq!(
            select_tuned(&p, &meas(&[(3, 10.0), (4, 8.0), (5, 9.0)])).unwrap()["k"],
            4
        );
        let p2 = plan(&[4, 5]);
        assert_eq!(
            select_tuned(&p2, &meas(&[(4, 8.0), (5, 8.0)])).unwrap()["k"],
            4
        );
        assert_eq!(
            select_tuned(&p, &meas(&[(3, 1.0), (4, 1.0), (5, 1.0)])).unwrap()["k"],
            3
        );
        assert!(select_tuned(&p, &meas(&[(3, 1.0)])).is_err());
    }
}
