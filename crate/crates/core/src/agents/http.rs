//! OpenAI-compatible chat-completion client.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::backend::{AgentBackend, AgentRequest, BackendConfig, BackendError, RawAgentOutput, Usage};

/// Counting semaphore capping concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    temperature: f64,
    max_retries: u32,
    api_key: Option<String>,
    gate: Gate,
    backoff: Duration,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(RawAgentOutput),
    Retry(String),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        let base = cfg.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            tracing::debug!(var = %cfg.api_key_env, "no API key in environment; sending unauthenticated requests");
        }
        Ok(Self {
            client,
            url,
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            api_key,
            gate: Gate::new(cfg.max_in_flight),
            backoff: Duration::from_millis(250),
        })
    }

    /// Base delay between retries (doubled per attempt).
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, req: &AgentRequest) -> Attempt {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.prompt.system},
                {"role": "user", "content": req.prompt.user},
            ],
            "temperature": self.temperature,
        });
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.without_url().to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.without_url().to_string()),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Fail(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        let parsed: Completion = match serde_json::from_str(&text) {
            Ok(c) => c,
            Err(e) => return Attempt::Fail(BackendError::Response(e.to_string())),
        };
        let Some(content) = parsed.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Fail(BackendError::Response("no choices[0].message.content".into()));
        };
        let usage = match parsed.usage {
            Some(u) => Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            },
            None => Usage::estimated(&req.prompt, &content),
        };
        Attempt::Done(RawAgentOutput { text: content, usage })
    }
}

impl AgentBackend for HttpBackend {
    fn call(&self, req: &AgentRequest) -> Result<RawAgentOutput, BackendError> {
        let _permit = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(req) {
                Attempt::Done(out) => return Ok(out),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    tracing::debug!(role = %req.role, attempt, error = %msg, "retrying agent call");
                    last = msg;
                }
            }
        }
        Err(BackendError::Network {
            attempts: self.max_retries + 1,
            message: last,
        })
    }
}
