//! Device resource vectors and effective resource utilization.

use serde::{Deserialize, Serialize};

/// Resource kinds in tie-break order for the critical resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Alut,
    Ff,
    Ram,
    Dsp,
    Bw,
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Alut,
        Resource::Ff,
        Resource::Ram,
        Resource::Dsp,
        Resource::Bw,
    ];
}

/// Static resources in percent of the chip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticResources {
    pub alut: f64,
    pub ff: f64,
    pub ram: f64,
    pub dsp: f64,
}

/// Static usage in percent plus DRAM bandwidth as a fraction of peak.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceVector {
    pub alut: f64,
    pub ff: f64,
    pub ram: f64,
    pub dsp: f64,
    pub bw: f64,
}

const EPS: f64 = 1e-9;

impl ResourceVector {
    pub fn new(alut: f64, ff: f64, ram: f64, dsp: f64, bw: f64) -> Self {
        ResourceVector {
            alut,
            ff,
            ram,
            dsp,
            bw,
        }
    }

    /// The whole device scaled by `fraction`.
    pub fn budget(fraction: f64) -> Self {
        let p = 100.0 * fraction;
        ResourceVector::new(p, p, p, p, fraction)
    }

    pub fn from_static(s: StaticResources, bw: f64) -> Self {
        ResourceVector::new(s.alut, s.ff, s.ram, s.dsp, bw)
    }

    pub fn add(&self, o: &ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.alut + o.alut,
            self.ff + o.ff,
            self.ram + o.ram,
            self.dsp + o.dsp,
            self.bw + o.bw,
        )
    }

    pub fn sum<'a>(items: impl IntoIterator<Item = &'a ResourceVector>) -> ResourceVector {
        items
            .into_iter()
            .fold(ResourceVector::default(), |a, b| a.add(b))
    }

    /// Utilization of one resource as a fraction of the device.
    pub fn fraction(&self, r: Resource) -> f64 {
        match r {
            Resource::Alut => self.alut / 100.0,
            Resource::Ff => self.ff / 100.0,
            Resource::Ram => self.ram / 100.0,
            Resource::Dsp => self.dsp / 100.0,
            Resource::Bw => self.bw,
        }
    }

    /// Most utilized resource; ties resolve in `Resource::ALL` order.
    pub fn critical(&self) -> Resource {
        let mut best = Resource::Alut;
        for r in Resource::ALL {
            if self.fraction(r) > self.fraction(best) {
                best = r;
            }
        }
        best
    }

    /// True when every component is within `budget`.
    pub fn fits(&self, budget: &ResourceVector) -> bool {
        Resource::ALL
            .iter()
            .all(|&r| self.fraction(r) <= budget.fraction(r) + EPS)
    }
}

/// Effective resource utilization: the largest utilization fraction.
pub fn compute_eru(u: &ResourceVector) -> f64 {
    Resource::ALL
        .iter()
        .map(|&r| u.fraction(r))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eru_takes_the_critical_component() {
        assert_eq!(compute_eru(&ResourceVector::default()), 0.0);
        assert!(
            (compute_eru(&ResourceVector::new(10.0, 10.0, 10.0, 10.0, 0.9)) - 0.9).abs() < 1e-12
        );
        let lud = ResourceVector::new(60.0, 25.0, 72.0, 74.0, 0.0);
        assert_eq!(lud.critical(), Resource::Dsp);
    }

    #[test]
    fn critical_ties_prefer_earlier_resources() {
        assert_eq!(
            ResourceVector::new(10.0, 10.0, 10.0, 10.0, 0.1).critical(),
            Resource::Alut
        );
    }
}
