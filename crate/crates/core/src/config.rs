//! Tunable knobs shared by all stages, read from a flat TOML key/value file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Granularity at which consumers wait on producer flags and queues are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    WorkItem,
    WorkGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// A kernel above this share of total time is dominant.
    pub dominant_fraction: f64,
    /// Producer plus consumer time above which fusion beats channels.
    pub fusion_time_threshold_ms: f64,
    /// Tuning radius around the balanced factor.
    pub p: u32,
    /// Cost of switching bitstreams.
    pub reprogram_ms: f64,
    /// Host/device link bandwidth used for inter-bitstream transfers.
    pub link_bandwidth_mb_s: f64,
    /// A loop may be split only if one iteration takes this many reprogram times.
    pub loop_split_ratio: f64,
    pub idqueue_cap: usize,
    pub channel_depth: u32,
    /// Relative tolerance for floating-point equivalence.
    pub tolerance: f64,
    pub wait_granularity: Granularity,
    /// Fraction of each device resource available to the balancer.
    pub resource_budget: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            dominant_fraction: 0.95,
            fusion_time_threshold_ms: 100.0,
            p: 2,
            reprogram_ms: 1400.0,
            link_bandwidth_mb_s: 3000.0,
            loop_split_ratio: 10.0,
            idqueue_cap: 1 << 20,
            channel_depth: 0,
            tolerance: 1e-6,
            wait_granularity: Granularity::WorkGroup,
            resource_budget: 1.0,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (
                self.dominant_fraction > 0.0 && self.dominant_fraction <= 1.0,
                "dominant_fraction must be in (0, 1]",
            ),
            (
                self.fusion_time_threshold_ms >= 0.0,
                "fusion_time_threshold_ms must be non-negative",
            ),
            (
                self.reprogram_ms >= 0.0,
                "reprogram_ms must be non-negative",
            ),
            (
                self.link_bandwidth_mb_s > 0.0,
                "link_bandwidth_mb_s must be positive",
            ),
            (
                self.loop_split_ratio >= 0.0,
                "loop_split_ratio must be non-negative",
            ),
            (self.idqueue_cap > 0, "idqueue_cap must be positive"),
            (self.tolerance >= 0.0, "tolerance must be non-negative"),
            (
                self.resource_budget > 0.0,
                "resource_budget must be positive",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config(msg.to_string())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml("p = 3\nreprogram_ms = 1000").unwrap();
        assert_eq!(c.p, 3);
        assert_eq!(c.reprogram_ms, 1000.0);
        assert_eq!(c.dominant_fraction, 0.95);
        assert_eq!(c.idqueue_cap, 1 << 20);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        assert!(Config::from_toml("bogus = 1").is_err());
        assert!(Config::from_toml("dominant_fraction = 2.0").is_err());
    }
}
