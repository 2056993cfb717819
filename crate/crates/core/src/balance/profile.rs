//! Naive-kernel profiles and resource estimators.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resources::{ResourceVector, StaticResources};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRecord {
    pub kernel: String,
    pub exec_time_ms: f64,
    pub output_bytes: u64,
    /// Bandwidth share of the naive kernel.
    #[serde(default)]
    pub bw_frac: f64,
    /// Whether SIMD vectorization pays off for this kernel.
    #[serde(default)]
    pub vec: bool,
    #[serde(default = "one")]
    pub max_unroll: u32,
    pub base: StaticResources,
    pub delta: StaticResources,
}

fn one() -> u32 {
    1
}

impl ProfileRecord {
    /// Output bytes per millisecond of the naive kernel.
    pub fn throughput(&self) -> f64 {
        self.output_bytes as f64 / self.exec_time_ms
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exec_time_ms > 0.0) {
            return Err(Error::Format(format!(
                "profile `{}`: exec_time_ms must be positive",
                self.kernel
            )));
        }
        if self.max_unroll < 1 {
            return Err(Error::Format(format!(
                "profile `{}`: max_unroll must be at least 1",
                self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    #[serde(default)]
    pub kernel: Vec<ProfileRecord>,
}

impl Profiles {
    pub fn from_toml(text: &str) -> Result<Profiles> {
        let p: Profiles = toml::from_str(text)?;
        let mut seen = std::collections::BTreeSet::new();
        for r in &p.kernel {
            r.validate()?;
            if !seen.insert(r.kernel.clone()) {
                return Err(Error::Format(format!(
                    "profile for `{}` given twice",
                    r.kernel
                )));
            }
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Profiles> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Profiles::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn get(&self, kernel: &str) -> Option<&ProfileRecord> {
        self.kernel.iter().find(|r| r.kernel == kernel)
    }

    /// Records for `kernels`, in that order; errors listing every missing one.
    pub fn select(&self, kernels: &[String]) -> Result<Vec<ProfileRecord>> {
        let missing: Vec<&str> = kernels
            .iter()
            .filter(|k| self.get(k).is_none())
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingProfile(missing.join(", ")));
        }
        Ok(kernels
            .iter()
            .map(|k| self.get(k).unwrap().clone())
            .collect())
    }

    pub fn upsert(&mut self, r: ProfileRecord) {
        match self.kernel.iter_mut().find(|x| x.kernel == r.kernel) {
            Some(x) => *x = r,
            None => self.kernel.push(r),
        }
    }
}

/// Resource usage of a kernel at a unified performance factor.
pub trait Estimator {
    fn estimate(&self, profile: &ProfileRecord, n_uni: u32) -> Result<ResourceVector>;
}

/// `base + (N-1) * delta` for static resources, `min(1, N * bw_frac)` for bandwidth.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearEstimator;

impl Estimator for LinearEstimator {
    fn estimate(&self, p: &ProfileRecord, n_uni: u32) -> Result<ResourceVector> {
        let k = n_uni.saturating_sub(1) as f64;
        let (b, d) = (p.base, p.delta);
        Ok(ResourceVector::new(
            b.alut + k * d.alut,
            b.ff + k * d.ff,
            b.ram + k * d.ram,
            b.dsp + k * d.dsp,
            (n_uni as f64 * p.bw_frac).min(1.0),
        ))
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    kernel: String,
    n_uni: u32,
    alut: f64,
    ff: f64,
    ram: f64,
    dsp: f64,
    #[serde(default)]
    bw: Option<f64>,
}

/// Lookup table of estimates, e.g. harvested from compiler reports.
///
/// Rows without a `bw` column use the linear bandwidth model.
#[derive(Debug, Clone, Default)]
pub struct TableEstimator {
    rows: BTreeMap<(String, u32), (StaticResources, Option<f64>)>,
}

impl TableEstimator {
    /// Parses CSV with header `kernel,n_uni,alut,ff,ram,dsp[,bw]`.
    pub fn from_csv(text: &str) -> Result<TableEstimator> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = BTreeMap::new();
        for r in rdr.deserialize() {
            let r: TableRow = r?;
            rows.insert(
                (r.kernel, r.n_uni),
                (
                    StaticResources {
                        alut: r.alut,
                        ff: r.ff,
                        ram: r.ram,
                        dsp: r.dsp,
                    },
                    r.bw,
                ),
            );
        }
        Ok(TableEstimator { rows })
    }

    pub fn load(path: &Path) -> Result<TableEstimator> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TableEstimator::from_csv(&text)
    }
}

impl Estimator for TableEstimator {
    fn estimate(&self, p: &ProfileRecord, n_uni: u32) -> Result<ResourceVector> {
        let (s, bw) = self.rows.get(&(p.kernel.clone(), n_uni)).ok_or_else(|| {
            Error::Balance(format!(
                "no estimate row for `{}` at N_uni={n_uni}",
                p.kernel
            ))
        })?;
        Ok(ResourceVector::from_static(
            *s,
            bw.unwrap_or((n_uni as f64 * p.bw_frac).min(1.0)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> ProfileRecord {
        ProfileRecord {
            kernel: "k".into(),
            exec_time_ms: 1.0,
            output_bytes: 4,
            bw_frac: 0.1,
            vec: false,
            max_unroll: 4,
            base: StaticResources {
                alut: 10.0,
                ff: 10.0,
                ram: 10.0,
                dsp: 10.0,
            },
            delta: StaticResources {
                alut: 5.0,
                ff: 5.0,
                ram: 5.0,
                dsp: 5.0,
            },
        }
    }

    #[test]
    fn linear_estimate_and_bandwidth_clamp() {
        let e = LinearEstimator.estimate(&rec(), 3).unwrap();
        assert_eq!((e.alut, e.ff, e.ram, e.dsp), (20.0, 20.0, 20.0, 20.0));
        assert!((e.bw - 0.3).abs() < 1e-12);
        let mut r = rec();
        r.bw_frac = 0.4;
        assert_eq!(LinearEstimator.estimate(&r, 4).unwrap().bw, 1.0);
    }

    #[test]
    fn table_lookup_is_verbatim() {
        let t = TableEstimator::from_csv("kernel,n_uni,alut,ff,ram,dsp,bw\nk,2,11,12,13,14,0.5\n")
            .unwrap();
        let e = t.estimate(&rec(), 2).unwrap();
        assert_eq!(e, ResourceVector::new(11.0, 12.0, 13.0, 14.0, 0.5));
        assert!(t.estimate(&rec(), 3).is_err());
    }
}
