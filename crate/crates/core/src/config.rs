//! JSON configuration file. Every key is optional and unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asymptotics::BootstrapConfig;
use crate::audit::TestConfig;
use crate::dual::SolverConfig;
use crate::error::{Error, Result};
use crate::estimation::EstimationConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    /// Utility threshold; has no default and must come from here or the
    /// command line.
    pub r: Option<f64>,
    /// Fairness tolerance, default 0.01.
    pub eps: Option<f64>,
    /// Significance level, default 0.05.
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    /// Default true.
    pub enforce_assumptions: Option<bool>,
    /// Default 100; zero disables the gradient check.
    pub gradient_probes: Option<usize>,
    /// Box padding when the box is inferred from data, default 0.05.
    pub pad: Option<f64>,
    /// Explicit covariate box as `[lower, upper]`.
    pub space: Option<(Vec<f64>, Vec<f64>)>,
    /// Outcome bound, default the sample maximum.
    pub outcome_bound: Option<f64>,
    pub solver: SolverConfig,
    pub bootstrap: BootstrapConfig,
    pub estimation: EstimationConfig,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Test configuration with file values as defaults for the missing
    /// `r`.
    pub fn test_config(&self) -> Result<TestConfig> {
        let base = TestConfig::default();
        let cfg = TestConfig {
            r: self
                .r
                .ok_or_else(|| Error::Config("utility threshold r is required (--r or \"r\" in the config)".into()))?,
            eps: self.eps.unwrap_or(base.eps),
            alpha_level: self.alpha.unwrap_or(base.alpha_level),
            solver: self.solver.clone(),
            bootstrap: self.bootstrap.clone(),
            seed: self.seed,
            enforce_assumptions: self.enforce_assumptions.unwrap_or(base.enforce_assumptions),
            gradient_probes: self.gradient_probes.unwrap_or(base.gradient_probes),
            record_timings: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = ConfigFile::parse("{}").unwrap();
        assert_eq!(c, ConfigFile::default());
        assert!(c.test_config().is_err());
    }

    #[test]
    fn nested_partial_sections() {
        let c = ConfigFile::parse(r#"{"r": 1.5, "solver": {"b_dual": 20}, "bootstrap": {"draws": 500}}"#).unwrap();
        let t = c.test_config().unwrap();
        assert_eq!(t.solver.b_dual, 20.0);
        assert_eq!(t.solver.inner_grid, 33);
        assert_eq!(t.bootstrap.draws, 500);
        assert_eq!(t.eps, 0.01);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse(r#"{"rr": 1}"#).is_err());
        assert!(ConfigFile::parse(r#"{"solver": {"bdual": 1}}"#).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = ConfigFile::parse(r#"{"r": 1, "alpha": 2}"#).unwrap();
        assert!(c.test_config().is_err());
    }
}
