use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::http::HttpBackend;
use super::{RenderedPrompt, Role};
use crate::kg::EntityId;
use crate::tokens::estimate_tokens;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }

    pub fn estimated(prompt: &RenderedPrompt, completion: &str) -> Self {
        Self {
            prompt_tokens: estimate_tokens(&prompt.system) + estimate_tokens(&prompt.user),
            completion_tokens: estimate_tokens(completion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAgentOutput {
    pub text: String,
    pub usage: Usage,
}

/// One agent call. `source` and `candidates` mirror what the prompt was
/// rendered from, so lookup backends need not parse prompt text.
#[derive(Debug, Clone)]
pub struct AgentRequest {
    pub role: Role,
    pub source: EntityId,
    pub candidates: Vec<EntityId>,
    pub prompt: RenderedPrompt,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request failed after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Response(String),
    #[error("no fixture for prompt {sha256} ({role})")]
    MissingFixture { role: Role, sha256: String },
    #[error("fixture file {path}, line {line}: {reason}")]
    Fixture { path: String, line: usize, reason: String },
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub trait AgentBackend: Send + Sync {
    fn call(&self, req: &AgentRequest) -> Result<RawAgentOutput, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
    Oracle,
    Abstain,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "scripted" => Ok(Self::Scripted),
            "oracle" => Ok(Self::Oracle),
            "abstain" => Ok(Self::Abstain),
            other => Err(format!("unknown backend kind {other:?}")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Http => "http",
            Self::Scripted => "scripted",
            Self::Oracle => "oracle",
            Self::Abstain => "abstain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub fixtures: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Oracle,
            endpoint: "http://localhost:8000/v1".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_retries: 2,
            timeout_secs: 60.0,
            max_in_flight: 8,
            api_key_env: "OPENAI_API_KEY".into(),
            fixtures: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(m.into()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite value >= 0");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        match self.kind {
            BackendKind::Http if self.endpoint.trim().is_empty() => bad("http backend needs an endpoint"),
            BackendKind::Scripted if self.fixtures.is_none() => bad("scripted backend needs a fixtures path"),
            _ => Ok(()),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Builds the configured backend. `truth` is required by the oracle kind.
pub fn build_backend(
    cfg: &BackendConfig,
    truth: Option<&BTreeMap<EntityId, EntityId>>,
) -> Result<Arc<dyn AgentBackend>, BackendError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Http => Arc::new(HttpBackend::new(cfg)?),
        BackendKind::Scripted => {
            let path = cfg.fixtures.as_deref().expect("validated");
            Arc::new(ScriptedBackend::from_file(path)?)
        }
        BackendKind::Oracle => {
            let truth = truth.ok_or_else(|| BackendError::Config("oracle backend needs ground-truth pairs".into()))?;
            Arc::new(OracleBackend::new(truth.clone()))
        }
        BackendKind::Abstain => Arc::new(AbstainBackend),
    })
}

/// Issues one call and logs its outcome; the API key never reaches the log.
pub fn call_agent(backend: &dyn AgentBackend, req: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
    let out = backend.call(req);
    match &out {
        Ok(o) => tracing::trace!(role = %req.role, source = req.source.0, tokens = o.usage.total(), "agent call"),
        Err(e) => tracing::warn!(role = %req.role, source = req.source.0, error = %e, "agent call failed"),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub prompt_sha256: String,
    pub response_text: String,
}

pub fn parse_fixtures(text: &str, path: &str) -> Result<Vec<Fixture>, BackendError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Fixture = serde_json::from_str(l).map_err(|e| BackendError::Fixture {
                path: path.into(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            if f.prompt_sha256.len() != 64 || !f.prompt_sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(BackendError::Fixture {
                    path: path.into(),
                    line: i + 1,
                    reason: "prompt_sha256 must be 64 hex digits".into(),
                });
            }
            Ok(f)
        })
        .collect()
}

/// Replays fixture responses keyed by prompt hash. Several entries for the
/// same hash are served in file order; the last one repeats.
pub struct ScriptedBackend {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ScriptedBackend {
    pub fn new(fixtures: Vec<Fixture>) -> Self {
        let mut queues: HashMap<String, VecDeque<String>> = HashMap::new();
        for f in fixtures {
            queues
                .entry(f.prompt_sha256.to_ascii_lowercase())
                .or_default()
                .push_back(f.response_text);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|source| BackendError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::new(parse_fixtures(&text, &path.display().to_string())?))
    }
}

impl AgentBackend for ScriptedBackend {
    fn call(&self, req: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
        let sha = req.prompt.sha256();
        let mut queues = self.queues.lock().expect("fixture lock poisoned");
        let queue = queues
            .get_mut(&sha)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| BackendError::MissingFixture {
                role: req.role,
                sha256: sha.clone(),
            })?;
        let text = if queue.len() > 1 {
            queue.pop_front().expect("non-empty")
        } else {
            queue[0].clone()
        };
        Ok(RawAgentOutput {
            usage: Usage::estimated(&req.prompt, &text),
            text,
        })
    }
}

/// Answers from a ground-truth table: the true target is endorsed with full
/// confidence, every other candidate is rejected.
pub struct OracleBackend {
    truth: BTreeMap<EntityId, EntityId>,
    penalty: f64,
}

impl OracleBackend {
    pub fn new(truth: BTreeMap<EntityId, EntityId>) -> Self {
        Self { truth, penalty: 0.2 }
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn respond(&self, role: Role, source: EntityId, candidates: &[EntityId]) -> String {
        let gt = self.truth.get(&source).copied();
        let is_gt = |c: &EntityId| Some(*c) == gt;
        let value = match role {
            Role::Proponent | Role::Opponent | Role::Referee => json!(candidates
                .iter()
                .map(|c| json!({"candidate_id": c.0.to_string(), "align_score": if is_gt(c) { 1.0 } else { 0.0 }}))
                .collect::<Vec<_>>()),
            Role::Alias | Role::Type | Role::Attribute | Role::Neighborhood => json!(candidates
                .iter()
                .map(|c| {
                    let hit = is_gt(c);
                    json!({
                        "candidate_id": c.0.to_string(),
                        "score": if hit { 1.0 } else { 0.0 },
                        "align": hit,
                        "evidence": if hit { "ground truth" } else { "not ground truth" },
                    })
                })
                .collect::<Vec<_>>()),
            Role::Attack => json!(candidates
                .iter()
                .map(|c| {
                    let hit = is_gt(c);
                    json!({
                        "candidate_id": c.0.to_string(),
                        "issues": if hit { vec![] } else { vec!["not ground truth"] },
                        "evidence": "",
                        "penalty": if hit { 0.0 } else { self.penalty },
                    })
                })
                .collect::<Vec<_>>()),
            Role::Judge => {
                let found = candidates.iter().find(|c| is_gt(c));
                json!({
                    "endorse": found.map(|c| c.0.to_string()),
                    "adjustments": [],
                    "align": found.is_some(),
                })
            }
        };
        value.to_string()
    }
}

impl AgentBackend for OracleBackend {
    fn call(&self, req: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
        let text = self.respond(req.role, req.source, &req.candidates);
        Ok(RawAgentOutput {
            usage: Usage::estimated(&req.prompt, &text),
            text,
        })
    }
}

/// Declines every judgment: empty score lists, abstaining specialists, no
/// penalties, no adjustments and no endorsement.
pub struct AbstainBackend;

impl AgentBackend for AbstainBackend {
    fn call(&self, req: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
        let text = match req.role {
            r if r.is_specialist() => json!(req
                .candidates
                .iter()
                .map(|c| json!({"candidate_id": c.0.to_string(), "score": null, "align": "abstain", "evidence": ""}))
                .collect::<Vec<_>>())
            .to_string(),
            Role::Judge => r#"{"endorse": null, "adjustments": []}"#.to_string(),
            _ => "[]".to_string(),
        };
        Ok(RawAgentOutput {
            usage: Usage::estimated(&req.prompt, &text),
            text,
        })
    }
}

/// Wraps a backend and keeps every successful exchange as a fixture, so a
/// live run can be replayed offline.
pub struct RecordingBackend {
    inner: Arc<dyn AgentBackend>,
    log: Mutex<Vec<Fixture>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn AgentBackend>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Recorded fixtures sorted by hash (stable under concurrent calls).
    pub fn fixtures(&self) -> Vec<Fixture> {
        let mut out = self.log.lock().expect("recording lock poisoned").clone();
        out.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.fixtures()
            .iter()
            .map(|f| serde_json::to_string(f).expect("plain struct") + "\n")
            .collect()
    }
}

impl AgentBackend for RecordingBackend {
    fn call(&self, req: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
        let out = self.inner.call(req)?;
        self.log.lock().expect("recording lock poisoned").push(Fixture {
            prompt_sha256: req.prompt.sha256(),
            response_text: out.text.clone(),
        });
        Ok(out)
    }
}
