//! Experiment configuration: a TOML file of `section.key = value` entries
//! layered over a named profile.
//!
//! Sections are `run`, `scenario`, `agent`, `meta` and `sweep`. Absent keys
//! take the profile's value; `run.profile` picks the profile (`full` by
//! default, `desk` for the small system). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::drl::{AgentKind, MetaParams, Td3Params};
use crate::env::EnvConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {} does not exist", path.display())]
    Missing { path: PathBuf },

    #[error("cannot read config file {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot parse {origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },

    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    /// The key the diagnostic refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key } | ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-size system with the reference hyperparameters.
    Full,
    /// Small system and networks, sized for a laptop core.
    Desk,
}

impl Profile {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Profile::Full),
            "desk" => Some(Profile::Desk),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    None,
    /// `scenario.max_power_dbm`.
    Power,
    /// `scenario.sinr_min_db`.
    SinrMin,
    /// `scenario.ris_elements`.
    RisElements,
}

impl SweepKind {
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepKind::None => Vec::new(),
            SweepKind::Power => vec![10.0, 20.0, 30.0, 40.0],
            SweepKind::SinrMin => vec![0.0, 2.0, 4.0, 6.0],
            SweepKind::RisElements => vec![16.0, 36.0, 64.0, 100.0],
        }
    }

    /// The scenario at one grid point.
    pub fn apply(self, base: &EnvConfig, value: f64) -> EnvConfig {
        let mut cfg = base.clone();
        match self {
            SweepKind::None => {}
            SweepKind::Power => cfg.max_power_dbm = value,
            SweepKind::SinrMin => cfg.sinr_min_db = value,
            SweepKind::RisElements => cfg.ris_elements = value as usize,
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Train a fresh agent at every grid point.
    Retrain,
    /// Train once on the base scenario and evaluate that policy at every point.
    EvalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub agents: Vec<AgentKind>,
    pub output_dir: String,
    /// Fresh channel draws per final-policy evaluation.
    pub eval_draws: usize,
    /// Trailing window of the smoothed reward column.
    pub smoothing_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub mode: SweepMode,
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub scenario: EnvConfig,
    pub agent: Td3Params,
    pub meta: MetaParams,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Full)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let run = RunConfig {
            profile,
            seeds: vec![1, 2, 3],
            episodes: 300,
            agents: AgentKind::ALL.to_vec(),
            output_dir: "results".into(),
            eval_draws: 100,
            smoothing_window: 20,
        };
        let sweep = SweepConfig { kind: SweepKind::None, mode: SweepMode::Retrain, grid: Vec::new() };
        match profile {
            Profile::Full => ExperimentConfig {
                run: RunConfig { episodes: 1000, ..run },
                scenario: EnvConfig::full(),
                agent: Td3Params::default(),
                meta: MetaParams::default(),
                sweep,
            },
            Profile::Desk => ExperimentConfig {
                run,
                scenario: EnvConfig::desk(),
                agent: Td3Params {
                    lr: 3e-4,
                    hidden: vec![64, 64],
                    expl_sigma: 0.3,
                    preact_penalty: 0.01,
                    ..Td3Params::default()
                },
                meta: MetaParams { hidden: vec![32], meta_lr: 3e-5, inner_lr: 3e-4, ..MetaParams::default() },
                sweep,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate().map_err(|(k, r)| invalid(format!("scenario.{k}"), r))?;
        self.agent.validate().map_err(|(k, r)| invalid(format!("agent.{k}"), r))?;
        self.meta.validate().map_err(|(k, r)| invalid(format!("meta.{k}"), r))?;
        let run = &self.run;
        if run.seeds.is_empty() {
            return Err(invalid("run.seeds", "needs at least one seed"));
        }
        if run.episodes == 0 {
            return Err(invalid("run.episodes", "must be >= 1"));
        }
        if run.agents.is_empty() {
            return Err(invalid("run.agents", "needs at least one agent"));
        }
        let mut kinds = run.agents.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != run.agents.len() {
            return Err(invalid("run.agents", "lists an agent twice"));
        }
        if run.eval_draws == 0 {
            return Err(invalid("run.eval_draws", "must be >= 1"));
        }
        if run.smoothing_window == 0 {
            return Err(invalid("run.smoothing_window", "must be >= 1"));
        }
        if run.output_dir.is_empty() {
            return Err(invalid("run.output_dir", "must not be empty"));
        }
        let sweep = &self.sweep;
        if sweep.kind != SweepKind::None && sweep.grid.is_empty() {
            return Err(invalid("sweep.grid", "must be non-empty for a sweep"));
        }
        if let Some(v) = sweep.grid.iter().find(|v| !v.is_finite()) {
            return Err(invalid("sweep.grid", format!("entries must be finite (got {v})")));
        }
        if sweep.kind == SweepKind::RisElements {
            if let Some(v) = sweep.grid.iter().find(|v| !(**v >= 1.0 && v.fract() == 0.0)) {
                return Err(invalid("sweep.grid", format!("element counts must be positive integers (got {v})")));
            }
            if sweep.mode == SweepMode::EvalOnly {
                return Err(invalid("sweep.mode", "eval_only cannot change the number of surface elements"));
            }
        }
        for &v in &sweep.grid {
            let point = sweep.kind.apply(&self.scenario, v);
            point.validate().map_err(|(k, r)| invalid("sweep.grid", format!("point {v} makes scenario.{k} invalid: {r}")))?;
        }
        Ok(())
    }

    /// Canonical TOML form: every key, in declaration order.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// SHA-256 of [`ExperimentConfig::dump`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.dump().as_bytes()))
    }

    /// The sweep grid as printed in CSVs (`ris_elements` points as integers).
    pub fn grid_label(&self, value: f64) -> String {
        match self.sweep.kind {
            SweepKind::RisElements => format!("{}", value as usize),
            _ => format!("{value}"),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ConfigError::Missing { path: path.to_path_buf() })
        }
        Err(source) => return Err(ConfigError::Read { path: path.to_path_buf(), source }),
    };
    parse_config(&text, &path.display().to_string())
}

/// Parses and validates configuration text; `origin` names it in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        origin: origin.to_string(),
        message: e.message().to_string(),
    })?;
    let profile = match user.get("run").and_then(|r| r.get("profile")) {
        None => Profile::Full,
        Some(Value::String(s)) => {
            Profile::parse(s).ok_or_else(|| invalid("run.profile", format!("expected full or desk, got `{s}`")))?
        }
        Some(v) => return Err(invalid("run.profile", format!("expected a string, got {}", v.type_str()))),
    };
    let base = ExperimentConfig::profile(profile);
    let mut merged = Table::try_from(&base).expect("configuration is always representable");
    let mut grid_given = false;
    for (section, entries) in &user {
        let Some(Value::Table(target)) = merged.get_mut(section) else {
            return Err(ConfigError::UnknownKey { key: section.clone() });
        };
        let Value::Table(entries) = entries else {
            return Err(invalid(section.clone(), "expected a section of key = value entries"));
        };
        for (key, value) in entries {
            let full = format!("{section}.{key}");
            let Some(slot) = target.get_mut(key) else {
                return Err(ConfigError::UnknownKey { key: full });
            };
            *slot = coerce(slot, value.clone()).map_err(|reason| invalid(full.clone(), reason))?;
            grid_given |= full == "sweep.grid";
        }
    }
    let mut cfg = ExperimentConfig {
        run: section(&merged, "run")?,
        scenario: section(&merged, "scenario")?,
        agent: section(&merged, "agent")?,
        meta: section(&merged, "meta")?,
        sweep: section(&merged, "sweep")?,
    };
    if !grid_given {
        cfg.sweep.grid = cfg.sweep.kind.default_grid();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn section<T: serde::de::DeserializeOwned>(merged: &Table, name: &str) -> Result<T, ConfigError> {
    merged[name].clone().try_into().map_err(|e: toml::de::Error| invalid(name, e.message().to_string()))
}

/// Checks `value` against the type of the default it replaces. Integers are
/// accepted where reals are expected.
fn coerce(default: &Value, value: Value) -> Result<Value, String> {
    match (default, value) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Array(d), Value::Array(items)) => {
            let Some(proto) = d.first() else { return Ok(Value::Array(items)) };
            items.into_iter().map(|v| coerce(proto, v)).collect::<Result<Vec<_>, _>>().map(Value::Array)
        }
        (d, v) if d.same_type(&v) => Ok(v),
        (d, v) => Err(format!("expected {}, got {}", d.type_str(), v.type_str())),
    }
}
