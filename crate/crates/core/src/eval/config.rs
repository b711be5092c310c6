//! Pipeline configuration with a flat `module.key` namespace.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::agents::{BackendConfig, BackendKind};
use crate::debate::DebateConfig;
use crate::embedding::{Metric, SimilarityConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Offline,
    Live,
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "offline" => Ok(Self::Offline),
            "live" => Ok(Self::Live),
            other => Err(format!("expected offline or live, got {other:?}")),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Offline => "offline",
            Self::Live => "live",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub mode: RunMode,
    pub similarity: SimilarityConfig,
    pub retrieval_k: usize,
    pub debate: DebateConfig,
    pub backend: BackendConfig,
    /// Write every agent exchange to `fixtures.jsonl` for offline replay.
    pub record_fixtures: bool,
    pub corpus_floor: Option<f64>,
    pub hits_k: Vec<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            mode: RunMode::Offline,
            similarity: SimilarityConfig::default(),
            retrieval_k: 20,
            debate: DebateConfig::default(),
            backend: BackendConfig::default(),
            record_fixtures: false,
            corpus_floor: None,
            hits_k: vec![1, 5, 10, 20],
        }
    }
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    v.as_f64()
        .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(key, format!("expected a number, got {v}")))
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    v.as_u64()
        .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
        .ok_or_else(|| bad(key, format!("expected a non-negative integer, got {v}")))
}

fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
    usize::try_from(as_u64(key, v)?).map_err(|_| bad(key, "out of range"))
}

fn as_u32(key: &str, v: &Value) -> Result<u32, ConfigError> {
    u32::try_from(as_u64(key, v)?).map_err(|_| bad(key, "out of range"))
}

fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::String(s) if s == "true" => Ok(true),
        Value::String(s) if s == "false" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got {v}"))),
    }
}

fn as_string(key: &str, v: &Value) -> Result<String, ConfigError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(bad(key, format!("expected a string, got {v}"))),
    }
}

fn as_list<T>(key: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    match v {
        Value::Array(a) => a.iter().map(|x| item(key, x)).collect(),
        Value::String(s) => s
            .split(',')
            .map(|p| item(key, &Value::String(p.trim().to_string())))
            .collect(),
        _ => Err(bad(key, format!("expected a list, got {v}"))),
    }
}

fn parse_enum<T: FromStr<Err = String>>(key: &str, v: &Value) -> Result<T, ConfigError> {
    as_string(key, v)?.parse().map_err(|e: String| bad(key, e))
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 31] = [
        "data.dir",
        "output.dir",
        "run.mode",
        "retrieval.k",
        "retrieval.metric",
        "retrieval.csls_k",
        "retrieval.normalize",
        "debate.delta1",
        "debate.delta2",
        "debate.rounds",
        "debate.ladder",
        "debate.w_sim",
        "debate.w_agents",
        "debate.judge_delta_clamp",
        "debate.ldv_confidence_floor",
        "debate.compression_budget",
        "debate.compression_floor_tokens",
        "debate.max_retries",
        "debate.workers",
        "backend.kind",
        "backend.endpoint",
        "backend.model",
        "backend.temperature",
        "backend.max_retries",
        "backend.timeout_secs",
        "backend.max_in_flight",
        "backend.api_key_env",
        "backend.fixtures",
        "backend.record",
        "corpus.floor",
        "eval.hits_k",
    ];

    pub fn set_value(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        let d = &mut self.debate;
        let b = &mut self.backend;
        match key {
            "data.dir" => self.data_dir = as_string(key, v)?.into(),
            "output.dir" => self.out_dir = as_string(key, v)?.into(),
            "run.mode" => self.mode = parse_enum(key, v)?,
            "retrieval.k" => self.retrieval_k = as_usize(key, v)?,
            "retrieval.metric" => {
                self.similarity.metric = match as_string(key, v)?.as_str() {
                    "csls" => Metric::Csls,
                    "cosine" => Metric::Cosine,
                    other => return Err(bad(key, format!("expected csls or cosine, got {other:?}"))),
                }
            }
            "retrieval.csls_k" => self.similarity.csls_k = as_usize(key, v)?,
            "retrieval.normalize" => self.similarity.normalize = as_bool(key, v)?,
            "debate.delta1" => d.delta1 = as_f64(key, v)?,
            "debate.delta2" => d.delta2 = as_f64(key, v)?,
            "debate.rounds" => d.max_rounds = as_u32(key, v)?,
            "debate.ladder" => d.ladder = as_list(key, v, as_usize)?,
            "debate.w_sim" => d.w_sim = as_f64(key, v)?,
            "debate.w_agents" => d.w_agents = as_f64(key, v)?,
            "debate.judge_delta_clamp" => d.judge_delta_clamp = as_f64(key, v)?,
            "debate.ldv_confidence_floor" => d.ldv_confidence_floor = as_f64(key, v)?,
            "debate.compression_budget" => d.compression_budget = as_f64(key, v)?,
            "debate.compression_floor_tokens" => d.compression_floor_tokens = as_u64(key, v)?,
            "debate.max_retries" => d.max_retries = as_u32(key, v)?,
            "debate.workers" => d.workers = as_usize(key, v)?,
            "backend.kind" => b.kind = parse_enum::<BackendKind>(key, v)?,
            "backend.endpoint" => b.endpoint = as_string(key, v)?,
            "backend.model" => b.model = as_string(key, v)?,
            "backend.temperature" => b.temperature = as_f64(key, v)?,
            "backend.max_retries" => b.max_retries = as_u32(key, v)?,
            "backend.timeout_secs" => b.timeout_secs = as_f64(key, v)?,
            "backend.max_in_flight" => b.max_in_flight = as_usize(key, v)?,
            "backend.api_key_env" => b.api_key_env = as_string(key, v)?,
            "backend.fixtures" => {
                b.fixtures = match v {
                    Value::Null => None,
                    _ => Some(as_string(key, v)?.into()),
                }
            }
            "backend.record" => self.record_fixtures = as_bool(key, v)?,
            "corpus.floor" => {
                self.corpus_floor = match v {
                    Value::Null => None,
                    _ => Some(as_f64(key, v)?),
                }
            }
            "eval.hits_k" => self.hits_k = as_list(key, v, as_u64)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Command-line form: the text is read as JSON when it parses, else as a
    /// bare string.
    pub fn set_str(&mut self, key: &str, text: &str) -> Result<(), ConfigError> {
        let v = serde_json::from_str::<Value>(text).unwrap_or_else(|_| Value::String(text.to_string()));
        self.set_value(key, &v)
    }

    pub fn apply_json(&mut self, text: &str) -> Result<(), ConfigError> {
        let map: Map<String, Value> = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (k, v) in &map {
            self.set_value(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::default();
        cfg.apply_json(&text).map_err(|e| match e {
            ConfigError::Invalid(reason) => ConfigError::File {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    /// Every key with its current value.
    pub fn to_flat(&self) -> Map<String, Value> {
        let d = &self.debate;
        let b = &self.backend;
        let s = &self.similarity;
        let path = |p: &Path| Value::String(p.display().to_string());
        let pairs: [(&str, Value); 31] = [
            ("data.dir", path(&self.data_dir)),
            ("output.dir", path(&self.out_dir)),
            ("run.mode", self.mode.to_string().into()),
            ("retrieval.k", self.retrieval_k.into()),
            (
                "retrieval.metric",
                match s.metric {
                    Metric::Csls => "csls",
                    Metric::Cosine => "cosine",
                }
                .into(),
            ),
            ("retrieval.csls_k", s.csls_k.into()),
            ("retrieval.normalize", s.normalize.into()),
            ("debate.delta1", d.delta1.into()),
            ("debate.delta2", d.delta2.into()),
            ("debate.rounds", d.max_rounds.into()),
            ("debate.ladder", d.ladder.clone().into()),
            ("debate.w_sim", d.w_sim.into()),
            ("debate.w_agents", d.w_agents.into()),
            ("debate.judge_delta_clamp", d.judge_delta_clamp.into()),
            ("debate.ldv_confidence_floor", d.ldv_confidence_floor.into()),
            ("debate.compression_budget", d.compression_budget.into()),
            ("debate.compression_floor_tokens", d.compression_floor_tokens.into()),
            ("debate.max_retries", d.max_retries.into()),
            ("debate.workers", d.workers.into()),
            ("backend.kind", b.kind.to_string().into()),
            ("backend.endpoint", b.endpoint.clone().into()),
            ("backend.model", b.model.clone().into()),
            ("backend.temperature", b.temperature.into()),
            ("backend.max_retries", b.max_retries.into()),
            ("backend.timeout_secs", b.timeout_secs.into()),
            ("backend.max_in_flight", b.max_in_flight.into()),
            ("backend.api_key_env", b.api_key_env.clone().into()),
            ("backend.fixtures", b.fixtures.as_deref().map_or(Value::Null, path)),
            ("backend.record", self.record_fixtures.into()),
            ("corpus.floor", self.corpus_floor.map_or(Value::Null, Value::from)),
            ("eval.hits_k", self.hits_k.clone().into()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.debate.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.retrieval_k < self.debate.max_ladder() {
            return invalid(format!(
                "retrieval.k = {} is smaller than the largest ladder rung {}",
                self.retrieval_k,
                self.debate.max_ladder()
            ));
        }
        if self.similarity.csls_k == 0 {
            return invalid("retrieval.csls_k must be at least 1".into());
        }
        if self.hits_k.is_empty() || self.hits_k.contains(&0) {
            return invalid("eval.hits_k needs positive entries".into());
        }
        match (self.mode, self.backend.kind) {
            (RunMode::Live, BackendKind::Http) => {}
            (RunMode::Live, k) => return invalid(format!("live mode needs backend.kind = http, got {k}")),
            (RunMode::Offline, BackendKind::Http) => {
                return invalid("offline mode cannot use the http backend".into())
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_cover_flat_view() {
        let flat = PipelineConfig::default().to_flat();
        let keys: Vec<&str> = flat.keys().map(String::as_str).collect();
        let mut expected = PipelineConfig::KEYS.to_vec();
        expected.sort();
        assert_eq!(keys, expected);
    }

    #[test]
    fn flat_round_trip() {
        let mut c = PipelineConfig::default();
        c.set_str("debate.ladder", "4,8").unwrap();
        c.set_str("debate.delta1", "0.1").unwrap();
        c.set_str("backend.kind", "scripted").unwrap();
        c.set_str("backend.fixtures", "f.jsonl").unwrap();
        c.set_str("corpus.floor", "0.25").unwrap();
        let text = serde_json::to_string(&c.to_flat()).unwrap();
        let mut back = PipelineConfig::default();
        back.apply_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.debate.ladder, vec![4, 8]);
    }

    #[test]
    fn errors() {
        let mut c = PipelineConfig::default();
        assert!(matches!(c.set_str("debate.nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set_str("debate.rounds", "-1"), Err(ConfigError::BadValue { .. })));
        assert!(c.set_str("run.mode", "sideways").is_err());
        c.set_str("run.mode", "live").unwrap();
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            retrieval_k: 10,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
