//! Run configuration: one TOML file with a section per component.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchmark::{Benchmark, BenchmarkSpec};
use crate::error::{Error, Result};
use crate::expansion::{EnvelopeSettings, ExpansionMode, ValueExpansion};
use crate::levy::{LevyConfig, LevySpec};
use crate::market::MarketSpec;
use crate::scheme::{run_scheme, SchemeSettings, SchemeState, TimeGrid};
use crate::sim::SimConfig;
use crate::utility::UtilitySpec;

/// Evaluation point and horizon shared by all commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: f64,
    /// Reference factor value.
    pub y: f64,
    #[serde(default = "one")]
    pub x: f64,
    /// Times at which tables are evaluated.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub expansion_mode: ExpansionMode,
}

fn one() -> f64 {
    1.0
}

/// Which portfolio drives the Monte Carlo runs of the verify command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySource {
    #[default]
    Scheme,
    Expansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    /// Times to horizon for the Monte Carlo sweep, decreasing.
    pub horizons: Vec<f64>,
    pub min_slope: f64,
    pub policy: PolicySource,
    /// Residual grid: times to horizon and wealth values.
    pub residual_deltas: Vec<f64>,
    pub residual_xs: Vec<f64>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            horizons: vec![0.4, 0.2, 0.1, 0.05],
            min_slope: 1.6,
            policy: PolicySource::Scheme,
            residual_deltas: crate::expansion::log_grid(1e-3, 0.05, 6),
            residual_xs: crate::expansion::log_grid(0.5, 50.0, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub utility: Option<UtilitySpec>,
    pub market: Option<MarketSpec>,
    /// Absent means no jumps.
    pub levy: Option<LevyConfig>,
    pub benchmark: Option<BenchmarkSpec>,
    pub scheme: Option<SchemeSettings>,
    pub sim: Option<SimConfig>,
    pub envelope: Option<EnvelopeSettings>,
    pub verify: Option<VerifySettings>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::validation(format!("config: {e}")))?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("config: {e}")))
    }

    fn check(&self) -> Result<()> {
        if !(self.run.horizon > 0.0) {
            return Err(Error::validation("run.horizon must be positive"));
        }
        if let Some(u) = &self.utility {
            u.validate()?;
        }
        if let Some(m) = &self.market {
            m.validate()?;
        }
        Ok(())
    }

    /// Errors with the list of absent sections among `names`.
    pub fn require(&self, names: &[&str]) -> Result<()> {
        let present = |n: &str| match n {
            "utility" => self.utility.is_some(),
            "market" => self.market.is_some(),
            "levy" => self.levy.is_some(),
            "benchmark" => self.benchmark.is_some(),
            "scheme" => self.scheme.is_some(),
            "sim" => self.sim.is_some(),
            "envelope" => self.envelope.is_some(),
            "verify" => self.verify.is_some(),
            _ => false,
        };
        let missing: Vec<&str> = names.iter().copied().filter(|n| !present(n)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(format!("missing config sections: {}", missing.join(", "))))
        }
    }

    pub fn levy_spec(&self) -> Result<LevySpec> {
        match &self.levy {
            Some(c) => LevySpec::new(c.clone(), self.run.horizon),
            None => LevySpec::no_jumps(self.run.horizon),
        }
    }

    pub fn expansion(&self) -> Result<ValueExpansion> {
        self.require(&["utility", "market"])?;
        match (self.utility, self.market) {
            (Some(u), Some(m)) => ValueExpansion::new(u, m, self.levy_spec()?),
            _ => unreachable!(),
        }
    }

    pub fn benchmark(&self, v: &ValueExpansion) -> Result<Benchmark> {
        self.require(&["benchmark"])?;
        let spec = self.benchmark.clone().unwrap_or_default();
        Benchmark::new(spec, self.run.horizon, v.first_moment())
    }

    /// Scheme settings with the reference factor filled in when no factor grid is given.
    pub fn scheme_settings(&self) -> Result<SchemeSettings> {
        self.require(&["scheme"])?;
        let mut s = self.scheme.clone().unwrap_or_default();
        if s.ys.is_empty() {
            s.ys = vec![self.run.y];
        }
        Ok(s)
    }

    pub fn scheme_state(&self, v: &ValueExpansion) -> Result<SchemeState> {
        let s = self.scheme_settings()?;
        run_scheme(v, &TimeGrid::uniform(self.run.horizon, s.n_steps)?, &s)
    }

    pub fn sim_config(&self, seed: Option<u64>) -> Result<SimConfig> {
        self.require(&["sim"])?;
        let mut c = self.sim.clone().unwrap_or_default();
        if let Some(s) = seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}
