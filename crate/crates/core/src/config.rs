//! JSON run configuration.
//!
//! Every section and key is optional; missing values take the defaults
//! listed below. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "priors": {
//!     "params": {
//!       "alpha":  {"dist": "uniform", "lo": 0.0059, "hi": 0.00593},
//!       "beta":   {"dist": "uniform", "lo": 0.259, "hi": 0.379},
//!       "lambda": {"dist": "beta", "shape1": 78, "shape2": 577},
//!       "gamma":  {"dist": "beta", "shape1": 21, "shape2": 246},
//!       "phi_f":  {"dist": "beta", "shape1": 37, "shape2": 15}
//!     },
//!     "states": {
//!       "c": {"dist": "uniform", "lo": 0.36, "hi": 0.40},
//!       "E": {"dist": "uniform", "lo": 0.000128, "hi": 0.000141},
//!       "I": {"dist": "uniform", "lo": 0.000050, "hi": 0.000061},
//!       "R": {"dist": "uniform", "lo": 0.000042, "hi": 0.000058},
//!       "D": {"dist": "uniform", "lo": 0.000029, "hi": 0.000030}
//!     }
//!   },
//!   "filter": {
//!     "num_particles": 5000, "discount": 0.95, "seed": 1,
//!     "population": 1000000, "rejection_cap": 1000,
//!     "resampling": "multinomial", "shrinkage": "squared", "workers": 0
//!   },
//!   "observation": {
//!     "b_I": 0.88, "b_D": 0.54, "zeta_I": 0.88, "zeta_D": 0.68,
//!     "sigma_I": 0.00125, "sigma_D": 0.00085,
//!     "mode": "log-log", "sigma_scale": "sqrt_population"
//!   },
//!   "summary": {"quantiles": [0.05, 0.95]}
//! }
//! ```
//!
//! The `alpha` prior is very narrow; it is kept as published.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdpf::FilterConfig;
use crate::observation::{LinkMode, ObservationLink, SigmaScale};
use crate::priors::PriorSpec;
use crate::summary::validate_quantiles;

/// Environment variable naming a config file used when none is given.
pub const CONFIG_ENV: &str = "KDPF_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    #[serde(rename = "b_I")]
    pub b_i: f64,
    #[serde(rename = "b_D")]
    pub b_d: f64,
    #[serde(rename = "zeta_I")]
    pub zeta_i: f64,
    #[serde(rename = "zeta_D")]
    pub zeta_d: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
    #[serde(rename = "sigma_D")]
    pub sigma_d: f64,
    pub mode: LinkMode,
    pub sigma_scale: SigmaScale,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            b_i: ObservationLink::DEFAULT_B_I,
            b_d: ObservationLink::DEFAULT_B_D,
            zeta_i: ObservationLink::DEFAULT_ZETA_I,
            zeta_d: ObservationLink::DEFAULT_ZETA_D,
            sigma_i: ObservationLink::DEFAULT_SIGMA_I,
            sigma_d: ObservationLink::DEFAULT_SIGMA_D,
            mode: LinkMode::LogLog,
            sigma_scale: SigmaScale::SqrtPopulation,
        }
    }
}

impl ObservationConfig {
    pub fn link(&self, population: u64) -> ObservationLink {
        ObservationLink {
            b_i: self.b_i,
            b_d: self.b_d,
            zeta_i: self.zeta_i,
            zeta_d: self.zeta_d,
            sigma_i: self.sigma_i,
            sigma_d: self.sigma_d,
            population,
            mode: self.mode,
            sigma_scale: self.sigma_scale,
        }
    }

    pub fn from_link(link: &ObservationLink) -> Self {
        ObservationConfig {
            b_i: link.b_i,
            b_d: link.b_d,
            zeta_i: link.zeta_i,
            zeta_d: link.zeta_d,
            sigma_i: link.sigma_i,
            sigma_d: link.sigma_d,
            mode: link.mode,
            sigma_scale: link.sigma_scale,
        }
    }

    fn validate(&self) -> Result<()> {
        let checks = [
            ("b_I", self.b_i),
            ("b_D", self.b_d),
            ("zeta_I", self.zeta_i),
            ("zeta_D", self.zeta_d),
            ("sigma_I", self.sigma_i),
            ("sigma_D", self.sigma_d),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("observation.{name}"),
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    pub quantiles: Vec<f64>,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig {
            quantiles: vec![0.05, 0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub priors: PriorSpec,
    pub filter: FilterConfig,
    pub observation: ObservationConfig,
    pub summary: SummaryConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.filter.validate()?;
        self.observation.validate()?;
        validate_quantiles(&self.summary.quantiles).map_err(|e| Error::config("summary.quantiles", e.to_string()))
    }

    pub fn link(&self) -> ObservationLink {
        self.observation.link(self.filter.population)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a JSON configuration. Blank input is the default
/// configuration.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(if key == "." { String::new() } else { key }, e.inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Explicit path, else the file named by [`CONFIG_ENV`], else defaults.
pub fn load_config(explicit: Option<&Path>) -> Result<RunConfig> {
    let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    match explicit.map(Path::to_path_buf).or(from_env) {
        Some(p) => parse_config(p),
        None => Ok(RunConfig::default()),
    }
}
