//! Experiment configuration: one TOML tree plus dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::agents::train::TrainSpec;
use crate::agents::{AgentConfig, Algo};
use crate::env::{RadioConfig, VideoConfig};
use crate::error::{Error, Result};
use crate::mobility::{ScenarioConfig, ScenarioKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub episodes: usize,
    pub algo: Algo,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write actor/critic parameters every this many episodes (0 = never).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_trace_margin")]
    pub trace_margin: f64,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub video: VideoConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub agent: AgentConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_checkpoint_every() -> usize {
    100
}

fn default_trace_margin() -> f64 {
    3.0
}

impl ExperimentConfig {
    pub fn new(seed: u64, episodes: usize, algo: Algo) -> Self {
        ExperimentConfig {
            seed,
            episodes,
            algo,
            output_dir: default_output_dir(),
            checkpoint_every: default_checkpoint_every(),
            trace_margin: default_trace_margin(),
            scenario: ScenarioConfig::default(),
            video: VideoConfig::default(),
            radio: RadioConfig::default(),
            agent: AgentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_spec().validate()
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            algo: self.algo,
            agent: self.agent.clone(),
            scenario: self.scenario.clone(),
            video: self.video.clone(),
            radio: self.radio,
            episodes: self.episodes,
            seed: self.seed,
            trace_margin: self.trace_margin,
        }
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("toml: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        fill_scenario_preset(&mut table)?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            if path == "." || path.is_empty() {
                Error::Config(e.inner().to_string())
            } else {
                Error::Config(format!("{path}: {}", e.inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `a.b.c=value`; the value is parsed as TOML and falls back to a string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {spec:?}: {k} is not a table")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Missing scenario keys take the defaults of the chosen scenario kind.
fn fill_scenario_preset(table: &mut Table) -> Result<()> {
    let user = match table.remove("scenario") {
        None => Table::new(),
        Some(Value::Table(t)) => t,
        Some(_) => return Err(Error::Config("scenario: expected a table".into())),
    };
    let kind = match user.get("kind") {
        None => ScenarioKind::ConstantSpeed,
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("scenario.kind: {}", e.message())))?,
    };
    let mut merged = Table::try_from(ScenarioConfig::preset(kind)).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in user {
        merged.insert(k, v);
    }
    table.insert("scenario".into(), Value::Table(merged));
    Ok(())
}
