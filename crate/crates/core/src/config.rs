//! Run configuration: one JSON document, optional per-task defaults, dotted overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::env::{TaskConfig, TaskId};
use crate::error::{Error, Result};
use crate::policy::UpdateConfig;
use crate::shaping::{Method, ShapingConfig};
use crate::train::TrainSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub shaping: ShapingConfig,
    pub learner: UpdateConfig,
    pub seeds: Vec<u64>,
    pub updates: u64,
    pub envs: usize,
    /// Defaults to the task horizon.
    #[serde(default)]
    pub steps_per_env: Option<u32>,
    pub output_dir: PathBuf,
    /// Checkpoint period in updates; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Run seeds on separate threads instead of one after another.
    #[serde(default)]
    pub parallel_seeds: bool,
}

impl RunConfig {
    pub fn defaults(task: TaskId, method: Method) -> Self {
        Self {
            task: TaskConfig::new(task),
            shaping: ShapingConfig::for_task(task, method),
            learner: UpdateConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            updates: 1000,
            envs: 32,
            steps_per_env: None,
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 100,
            parallel_seeds: false,
        }
    }

    /// Parses a config document. With `"defaults_from_task": "<task>"` every
    /// field not given in the document takes that task's default; a top-level
    /// `"method"` string picks the shaping method in that case.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, &[])
    }

    pub fn from_json_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let mut doc = match doc {
            Value::Object(m) => m,
            _ => return Err(Error::Config("config must be a JSON object".into())),
        };
        let mut value = match doc.remove("defaults_from_task") {
            Some(Value::String(t)) => {
                let task: TaskId = t.parse()?;
                let method: Method = match doc.remove("method") {
                    Some(Value::String(m)) => m.parse()?,
                    Some(_) => return Err(Error::Config("`method` must be a string".into())),
                    None => Method::Eiti,
                };
                let mut base = serde_json::to_value(Self::defaults(task, method))?;
                merge(&mut base, Value::Object(doc));
                base
            }
            Some(_) => return Err(Error::Config("`defaults_from_task` must be a task name".into())),
            None => Value::Object(doc),
        };
        for (path, raw) in overrides {
            set_path(&mut value, path, raw)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_with(&text, overrides)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.shaping.validate()?;
        self.learner.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.envs == 0 {
            return Err(Error::Config("envs must be > 0".into()));
        }
        if self.steps_per_env == Some(0) {
            return Err(Error::Config("steps_per_env must be > 0".into()));
        }
        Ok(())
    }

    pub fn steps_per_env(&self) -> u32 {
        self.steps_per_env.unwrap_or(self.task.horizon)
    }

    pub fn spec(&self, seed: u64) -> TrainSpec {
        TrainSpec {
            task: self.task.clone(),
            shaping: self.shaping.clone(),
            learner: self.learner.clone(),
            envs: self.envs,
            steps_per_env: self.steps_per_env(),
            seed,
        }
    }
}

/// Splits `a.b=c` into (`a.b`, `c`).
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Config(format!("override `{s}` must look like path.to.field=value"))),
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted path; the raw value is read as JSON when it parses, else as a string.
fn set_path(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(Error::Config(format!("`{}` is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}
