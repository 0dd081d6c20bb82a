use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    make_instance, true_best, BanditInstance, ChangePointSpec, InstanceConfig, ShiftSpec,
};
use crate::policies::PolicySpec;

/// A configuration problem, tagged with the offending key.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Configuration {
    /// Monotone decreasing means, `mu_i = delta * i`.
    #[serde(rename = "MDM")]
    Mdm,
    /// Slippage: only the last arm has mean `delta`, the rest 0.
    #[serde(rename = "SC")]
    Sc,
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Configuration::Mdm => "MDM",
            Configuration::Sc => "SC",
        })
    }
}

/// Environment-length regime; lengths are drawn from `U{cp_min..=cp_max}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    WorstCase,
    CannotSampleAllArms,
    #[serde(rename = "sample-1to10-per-arm")]
    Sample1To10PerArm,
    General,
    Custom {
        cp_min: u64,
        cp_max: u64,
    },
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::WorstCase => f.write_str("worst-case"),
            Scenario::CannotSampleAllArms => f.write_str("cannot-sample-all-arms"),
            Scenario::Sample1To10PerArm => f.write_str("sample-1to10-per-arm"),
            Scenario::General => f.write_str("general"),
            Scenario::Custom { cp_min, cp_max } => write!(f, "custom({cp_min}-{cp_max})"),
        }
    }
}

/// `(cp_min, cp_max)` of a scenario for `arms` arms.
pub fn scenario_bounds(scenario: Scenario, arms: usize) -> Result<(u64, u64), ConfigError> {
    let k = arms as u64;
    let bounds = match scenario {
        Scenario::WorstCase => (2, 2),
        Scenario::CannotSampleAllArms => {
            if arms < 3 {
                return Err(ConfigError::new(
                    "scenario",
                    format!("cannot-sample-all-arms needs K >= 3, got K = {arms}"),
                ));
            }
            (2, k - 1)
        }
        Scenario::Sample1To10PerArm => (k, 10 * k),
        Scenario::General => (2, 10 * k),
        Scenario::Custom { cp_min, cp_max } => (cp_min, cp_max),
    };
    if bounds.0 < 2 || bounds.1 < bounds.0 {
        return Err(ConfigError::new(
            "scenario",
            format!(
                "need 2 <= cp_min <= cp_max, got ({}, {})",
                bounds.0, bounds.1
            ),
        ));
    }
    Ok(bounds)
}

fn default_replications() -> u64 {
    10_000
}

/// One experiment: a problem, a scenario, a budget grid and the policies to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub configuration: Configuration,
    #[serde(rename = "K")]
    pub arms: usize,
    pub delta: f64,
    pub sigma: f64,
    pub shift: ShiftSpec,
    pub scenario: Scenario,
    pub budgets: Vec<u64>,
    #[serde(default = "default_replications")]
    pub replications: u64,
    pub base_seed: u64,
    pub policies: Vec<PolicySpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let key = unknown_key(&e.to_string()).unwrap_or_else(|| "<document>".into());
            ConfigError::new(key, e.to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.arms < 2 {
            return Err(ConfigError::new(
                "K",
                format!("need at least 2 arms, got {}", self.arms),
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(ConfigError::new("delta", "must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(ConfigError::new("sigma", "must be positive"));
        }
        if self.replications < 1 {
            return Err(ConfigError::new("replications", "must be at least 1"));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::new("budgets", "must be strictly ascending"));
        }
        scenario_bounds(self.scenario, self.arms)?;
        for (idx, policy) in self.policies.iter().enumerate() {
            policy
                .validate()
                .map_err(|e| ConfigError::new(format!("policies[{idx}]"), e.to_string()))?;
            if let Some(&smallest) = self.budgets.first() {
                let min = policy.min_budget(self.arms);
                if smallest < min {
                    return Err(ConfigError::new(
                        "budgets",
                        format!(
                            "smallest budget {smallest} is below {} for policies[{idx}] ({})",
                            min,
                            policy.label()
                        ),
                    ));
                }
            }
        }
        self.instance()?;
        Ok(())
    }

    pub fn instance_config(&self) -> Result<InstanceConfig, ConfigError> {
        let (cp_min, cp_max) = scenario_bounds(self.scenario, self.arms)?;
        let base = match self.configuration {
            Configuration::Mdm => InstanceConfig::mdm(self.arms, self.delta, self.sigma),
            Configuration::Sc => InstanceConfig::slippage(self.arms, self.delta, self.sigma),
        };
        Ok(base
            .with_shift(self.shift.clone())
            .with_changepoints(ChangePointSpec::UniformDiscrete { cp_min, cp_max }))
    }

    pub fn instance(&self) -> Result<BanditInstance, ConfigError> {
        let instance = make_instance(self.instance_config()?)
            .map_err(|e| ConfigError::new("shift", e.to_string()))?;
        true_best(&instance).map_err(|e| ConfigError::new("configuration", e.to_string()))?;
        Ok(instance)
    }
}

fn unknown_key(message: &str) -> Option<String> {
    // serde_json messages quote the field: "missing field `budgets`", "unknown field `foo`"
    let start = message.find('`')? + 1;
    let end = start + message[start..].find('`')?;
    Some(message[start..end].to_string())
}
