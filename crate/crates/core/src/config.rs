//! Experiment configuration: TOML files, dotted `key=value` overrides and
//! validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::AdviceParams;
use crate::envs::{CleanupConfig, EnvConfig, FtConfig, PgmConfig};
use crate::learner::LearnerConfig;
use crate::policy::WeightSchedule;
use crate::protocol::{Ablation, SharingParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file {path} is not valid TOML: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override `{0}` must have the form key=value")]
    OverrideSyntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "cons")]
    Cons,
    #[serde(rename = "adhoctd")]
    AdHocTd,
    #[serde(rename = "iql")]
    Iql,
    #[serde(rename = "cons-wo-n")]
    ConsWithoutNegative,
    #[serde(rename = "cons-wo-p")]
    ConsWithoutPositive,
    #[serde(rename = "cons-wo-te")]
    ConsWithoutTargetedExploration,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Cons,
        Algorithm::AdHocTd,
        Algorithm::Iql,
        Algorithm::ConsWithoutNegative,
        Algorithm::ConsWithoutPositive,
        Algorithm::ConsWithoutTargetedExploration,
    ];

    /// The comparison set used for ablation sweeps.
    pub const ABLATION: [Algorithm; 5] = [
        Algorithm::Cons,
        Algorithm::ConsWithoutNegative,
        Algorithm::ConsWithoutPositive,
        Algorithm::ConsWithoutTargetedExploration,
        Algorithm::AdHocTd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cons => "cons",
            Algorithm::AdHocTd => "adhoctd",
            Algorithm::Iql => "iql",
            Algorithm::ConsWithoutNegative => "cons-wo-n",
            Algorithm::ConsWithoutPositive => "cons-wo-p",
            Algorithm::ConsWithoutTargetedExploration => "cons-wo-te",
        }
    }

    pub fn is_cons(self) -> bool {
        matches!(
            self,
            Algorithm::Cons
                | Algorithm::ConsWithoutNegative
                | Algorithm::ConsWithoutPositive
                | Algorithm::ConsWithoutTargetedExploration
        )
    }

    pub fn ablation(self) -> Ablation {
        Ablation {
            without_negative: self == Algorithm::ConsWithoutNegative,
            without_positive: self == Algorithm::ConsWithoutPositive,
            without_targeted_exploration: self == Algorithm::ConsWithoutTargetedExploration,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown algorithm `{s}`; expected one of cons, adhoctd, iql, cons-wo-n, cons-wo-p, cons-wo-te"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharingConfig {
    /// Episode at which sharing starts.
    pub start_episode: u64,
    /// Descent rate of the negative-knowledge weight.
    pub descent_rate: f64,
    pub tau: f64,
    pub temperature: f64,
    pub upsilon_ask: f64,
    pub upsilon_give: f64,
    pub ask_budget: u64,
    /// Defaults to `ask_budget * (n_agents - 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub give_budget: Option<u64>,
}

impl Default for SharingConfig {
    fn default() -> Self {
        Self {
            start_episode: 500,
            descent_rate: 0.0,
            tau: 0.5,
            temperature: 1.0,
            upsilon_ask: 0.5,
            upsilon_give: 1.5,
            ask_budget: 5000,
            give_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Training episodes between evaluation blocks.
    pub interval: u64,
    /// Greedy episodes per evaluation block.
    pub episodes: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 500,
            episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write every protocol message to `trace_seed<N>.jsonl`.
    pub trace: bool,
    /// Write every environment event to `events_seed<N>.jsonl`.
    pub event_log: bool,
    /// When false, the `wall_ms` column is written as 0.
    pub record_wall_clock: bool,
    /// Save a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            trace: false,
            event_log: false,
            record_wall_clock: true,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algo: Algorithm,
    /// Training episodes per seed.
    pub episodes: u64,
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub sharing: SharingConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    fn with_env(env: EnvConfig, out: &str) -> Self {
        Self {
            algo: Algorithm::Cons,
            episodes: 20_000,
            seeds: vec![1, 2, 3, 4, 5],
            env,
            learner: LearnerConfig::default(),
            sharing: SharingConfig::default(),
            eval: EvalConfig::default(),
            output: OutputConfig {
                dir: PathBuf::from(out),
                ..OutputConfig::default()
            },
        }
    }

    pub fn pgm6() -> Self {
        Self::with_env(EnvConfig::Pgm(PgmConfig::pgm6()), "runs/pgm6")
    }

    pub fn pgm3() -> Self {
        Self::with_env(EnvConfig::Pgm(PgmConfig::pgm3()), "runs/pgm3")
    }

    pub fn ft() -> Self {
        let mut c = Self::with_env(EnvConfig::Ft(FtConfig::default()), "runs/ft");
        c.sharing.descent_rate = 0.3;
        c
    }

    pub fn cleanup() -> Self {
        let mut c = Self::with_env(EnvConfig::Cleanup(CleanupConfig::default()), "runs/cleanup");
        c.sharing.descent_rate = -0.5;
        c.sharing.upsilon_ask = 0.01;
        c
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "pgm6" => Some(Self::pgm6()),
            "pgm3" => Some(Self::pgm3()),
            "ft" => Some(Self::ft()),
            "cleanup" => Some(Self::cleanup()),
            _ => None,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.env.n_agents()
    }

    pub fn give_budget(&self) -> u64 {
        self.sharing
            .give_budget
            .unwrap_or(self.sharing.ask_budget * (self.n_agents() as u64).saturating_sub(1))
    }

    pub fn schedule(&self) -> WeightSchedule {
        WeightSchedule {
            sharing_start: self.sharing.start_episode,
            descent_rate: self.sharing.descent_rate,
        }
    }

    pub fn sharing_params(&self) -> SharingParams {
        SharingParams {
            schedule: self.schedule(),
            tau: self.sharing.tau,
            upsilon_ask: self.sharing.upsilon_ask,
            temperature: self.sharing.temperature,
        }
    }

    pub fn advice_params(&self) -> AdviceParams {
        AdviceParams {
            sharing_start: self.sharing.start_episode,
            upsilon_ask: self.sharing.upsilon_ask,
            upsilon_give: self.sharing.upsilon_give,
        }
    }

    /// Check every cross-field constraint. Messages name the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        self.env
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("env: {e}")))?;
        self.learner.validate().map_err(ConfigError::Invalid)?;
        let s = &self.sharing;
        if !(s.tau > 0.0 && s.tau < 1.0) {
            return bad(format!("tau must be in (0,1), got {}", s.tau));
        }
        if s.start_episode < 1 {
            return bad("sharing.start_episode must be >= 1".into());
        }
        if !(s.descent_rate < 1.0 && s.descent_rate.is_finite()) {
            return bad(format!(
                "sharing.descent_rate must be < 1, got {}",
                s.descent_rate
            ));
        }
        if !(s.temperature > 0.0 && s.temperature.is_finite()) {
            return bad("sharing.temperature must be positive".into());
        }
        for (name, v) in [
            ("upsilon_ask", s.upsilon_ask),
            ("upsilon_give", s.upsilon_give),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("sharing.{name} must be positive, got {v}"));
            }
        }
        if self.eval.interval == 0 || self.eval.episodes == 0 {
            return bad("eval.interval and eval.episodes must be positive".into());
        }
        if self.episodes % self.eval.interval != 0 {
            return bad(format!(
                "eval.interval ({}) must divide episodes ({})",
                self.eval.interval, self.episodes
            ));
        }
        Ok(())
    }

    /// Read a TOML file, apply `key=value` overrides and validate.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut value: toml::Value = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<string>"),
            message: e.message().to_string(),
        })?;
        Self::from_value(value)
    }

    fn from_value(value: toml::Value) -> Result<Self, ConfigError> {
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Schema(e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Apply overrides to an already-built config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value =
            toml::Value::try_from(self).map_err(|e| ConfigError::Schema(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }
}

/// Set `a.b.c = value` inside a TOML document. Every section on the path
/// must already exist; the leaf key itself is checked by the schema.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::OverrideSyntax(assignment.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(ConfigError::OverrideSyntax(assignment.to_string()));
    }
    let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let (leaf, sections) = parts.split_last().expect("split yields at least one part");
    let mut table = doc
        .as_table_mut()
        .ok_or_else(|| ConfigError::Schema("config root must be a table".into()))?;
    for section in sections {
        table = table
            .get_mut(*section)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    }
    table.insert(leaf.to_string(), parsed);
    Ok(())
}
