//! TOML configuration files.
//!
//! ```toml
//! [params]            # either a, b, c, d, q or alpha, beta, gamma, delta, q
//! a = 0.5
//! b = 0.5
//! c = -0.4
//! d = -0.4
//! q = 0.5
//!
//! [profile]           # optional, for rate-function evaluation
//! breakpoints = [0.0, 0.5, 1.0]
//! values = [0.0, 0.2, 0.5]
//!
//! [experiment]        # optional, for `experiments`
//! name = "ldp"
//! ns = [50, 100, 200, 400]
//! rhos = [0.3, 0.5, 0.7]
//! ```
//!
//! Within the chosen group `c`, `d`, `gamma`, `delta` and `q` default to 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};
use crate::params::{BoundaryRates, FanParams};
use crate::ratefn::PiecewiseLinearProfile;

const FAN_KEYS: [&str; 5] = ["a", "b", "c", "d", "q"];
const RATE_KEYS: [&str; 5] = ["alpha", "beta", "gamma", "delta", "q"];

/// Which parameter group the file used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ParamGroup {
    Fan(FanParams),
    Rates(BoundaryRates),
}

impl ParamGroup {
    /// Fan parameters; validates the rates when given as rates.
    pub fn fan(&self) -> Result<FanParams> {
        match self {
            ParamGroup::Fan(p) => Ok(*p),
            ParamGroup::Rates(r) => r.to_fan(),
        }
    }

    pub fn rates(&self) -> Result<BoundaryRates> {
        match self {
            ParamGroup::Fan(p) => p.from_fan(),
            ParamGroup::Rates(r) => Ok(*r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

/// Experiment plan as written in a config file; every field but the name
/// has a default chosen by the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub ns: Option<Vec<usize>>,
    #[serde(default)]
    pub rhos: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub samples: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub params: Option<ParamGroup>,
    pub profile: Option<ProfileSection>,
    pub experiment: Option<ExperimentSection>,
}

fn get_f64(t: &toml::Table, key: &str, default: Option<f64>) -> Result<f64> {
    match t.get(key) {
        Some(toml::Value::Float(x)) => Ok(*x),
        Some(toml::Value::Integer(i)) => Ok(*i as f64),
        Some(v) => Err(AsepError::Config(format!("`{key}` must be a number, got {v}"))),
        None => default.ok_or_else(|| AsepError::Config(format!("missing key `{key}`"))),
    }
}

fn parse_params(t: &toml::Table) -> Result<ParamGroup> {
    let fan = t.keys().any(|k| FAN_KEYS[..4].contains(&k.as_str()));
    let rates = t.keys().any(|k| RATE_KEYS[..4].contains(&k.as_str()));
    if let Some(k) = t.keys().find(|k| !FAN_KEYS.contains(&k.as_str()) && !RATE_KEYS.contains(&k.as_str())) {
        return Err(AsepError::Config(format!("unknown parameter `{k}`")));
    }
    let q = get_f64(t, "q", Some(0.0))?;
    match (fan, rates) {
        (true, false) => Ok(ParamGroup::Fan(FanParams::new(
            get_f64(t, "a", None)?,
            get_f64(t, "b", None)?,
            get_f64(t, "c", Some(0.0))?,
            get_f64(t, "d", Some(0.0))?,
            q,
        )?)),
        (false, true) => Ok(ParamGroup::Rates(BoundaryRates::new(
            get_f64(t, "alpha", None)?,
            get_f64(t, "beta", None)?,
            get_f64(t, "gamma", Some(0.0))?,
            get_f64(t, "delta", Some(0.0))?,
            q,
        )?)),
        (true, true) => Err(AsepError::Config("give either a, b, c, d, q or alpha, beta, gamma, delta, q, not both".into())),
        (false, false) => Err(AsepError::Config("[params] needs a, b, ... or alpha, beta, ...".into())),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| AsepError::Config(e.message().to_string()))?;
        let mut out = Config { params: None, profile: None, experiment: None };
        for (key, value) in &table {
            match (key.as_str(), value) {
                ("params", toml::Value::Table(t)) => out.params = Some(parse_params(t)?),
                ("profile", v) => {
                    out.profile = Some(v.clone().try_into().map_err(|e: toml::de::Error| AsepError::Config(e.to_string()))?)
                }
                ("experiment", v) => {
                    out.experiment =
                        Some(v.clone().try_into().map_err(|e: toml::de::Error| AsepError::Config(e.to_string()))?)
                }
                (k, _) => return Err(AsepError::Config(format!("unknown section `{k}`"))),
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AsepError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn profile(&self) -> Result<Option<PiecewiseLinearProfile>> {
        self.profile
            .as_ref()
            .map(|s| PiecewiseLinearProfile::new(s.breakpoints.clone(), s.values.clone()))
            .transpose()
    }
}
