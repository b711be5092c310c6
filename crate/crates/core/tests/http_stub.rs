use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use kgalign_core::agents::{call_agent, AgentRequest, BackendConfig, BackendError, BackendKind, HttpBackend, RenderedPrompt, Role};
use kgalign_core::eval::{run_pipeline, synth, PipelineConfig, RunMode};
use kgalign_core::kg::EntityId;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    body: Value,
    auth: Option<String>,
    status: u16,
    tokens: u64,
}

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering chat completions. The handler gets the
/// request index and JSON body and returns a status plus message content;
/// successful replies report `prompt_tokens = 13`, `completion_tokens = 5`.
struct Stub {
    url: String,
    log: Arc<Mutex<Vec<Seen>>>,
}

impl Stub {
    fn start(handler: Arc<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let log: Arc<Mutex<Vec<Seen>>> = Arc::default();
        let counter = Arc::new(Mutex::new(0usize));
        let l2 = log.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (handler, log, counter) = (handler.clone(), l2.clone(), counter.clone());
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    let mut auth = None;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = line.split_once(':') {
                            match k.to_ascii_lowercase().as_str() {
                                "content-length" => len = v.trim().parse().unwrap(),
                                "authorization" => auth = Some(v.trim().to_string()),
                                _ => {}
                            }
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let body: Value = serde_json::from_slice(&body).unwrap();
                    let idx = {
                        let mut c = counter.lock().unwrap();
                        *c += 1;
                        *c - 1
                    };
                    let (status, content) = handler(idx, &body);
                    let (payload, tokens) = if status == 200 {
                        (
                            json!({
                                "choices": [{"message": {"role": "assistant", "content": content}}],
                                "usage": {"prompt_tokens": 13, "completion_tokens": 5},
                            })
                            .to_string(),
                            18,
                        )
                    } else {
                        (json!({"error": content}).to_string(), 0)
                    };
                    log.lock().unwrap().push(Seen {
                        body,
                        auth,
                        status,
                        tokens,
                    });
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(reply.as_bytes());
                });
            }
        });
        Self { url, log }
    }

    fn seen(&self) -> Vec<Seen> {
        self.log.lock().unwrap().clone()
    }
}

fn backend(url: &str, retries: u32, key_env: &str) -> HttpBackend {
    HttpBackend::new(&BackendConfig {
        kind: BackendKind::Http,
        endpoint: url.into(),
        model: "stub-model".into(),
        max_retries: retries,
        timeout_secs: 10.0,
        api_key_env: key_env.into(),
        ..Default::default()
    })
    .unwrap()
    .with_backoff(Duration::from_millis(1))
}

fn request() -> AgentRequest {
    AgentRequest {
        role: Role::Referee,
        source: EntityId(0),
        candidates: vec![EntityId(1)],
        prompt: RenderedPrompt {
            role: Role::Referee,
            system: "system text".into(),
            user: "user text".into(),
        },
    }
}

#[test]
fn request_shape_and_auth_header() {
    let stub = Stub::start(Arc::new(|_, _| (200, "[]".into())));
    std::env::set_var("KGALIGN_STUB_KEY_A", "sekret");
    let out = call_agent(&backend(&stub.url, 0, "KGALIGN_STUB_KEY_A"), &request()).unwrap();
    assert_eq!(out.text, "[]");
    assert_eq!((out.usage.prompt_tokens, out.usage.completion_tokens), (13, 5));
    let seen = stub.seen();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sekret"));
    let b = &seen[0].body;
    assert_eq!(b["model"], "stub-model");
    assert_eq!(b["messages"][0]["role"], "system");
    assert_eq!(b["messages"][0]["content"], "system text");
    assert_eq!(b["messages"][1]["content"], "user text");
    assert_eq!(b["temperature"], 0.0);
}

#[test]
fn no_key_means_no_header() {
    let stub = Stub::start(Arc::new(|_, _| (200, "[]".into())));
    call_agent(&backend(&stub.url, 0, "KGALIGN_STUB_KEY_UNSET"), &request()).unwrap();
    assert_eq!(stub.seen()[0].auth, None);
}

#[test]
fn retries_transient_statuses() {
    let stub = Stub::start(Arc::new(|i, _| match i {
        0 => (500, "boom".into()),
        1 => (429, "slow down".into()),
        _ => (200, "[]".into()),
    }));
    call_agent(&backend(&stub.url, 2, "KGALIGN_STUB_KEY_UNSET"), &request()).unwrap();
    let statuses: Vec<u16> = stub.seen().iter().map(|s| s.status).collect();
    assert_eq!(statuses, [500, 429, 200]);
}

#[test]
fn gives_up_after_retry_budget() {
    let stub = Stub::start(Arc::new(|_, _| (503, "down".into())));
    let err = call_agent(&backend(&stub.url, 1, "KGALIGN_STUB_KEY_UNSET"), &request()).unwrap_err();
    assert!(matches!(err, BackendError::Network { attempts: 2, .. }), "{err}");
    assert_eq!(stub.seen().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::start(Arc::new(|_, _| (400, "bad request".into())));
    let err = call_agent(&backend(&stub.url, 3, "KGALIGN_STUB_KEY_UNSET"), &request()).unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 400, .. }), "{err}");
    assert_eq!(stub.seen().len(), 1);
}

#[test]
fn live_run_cost_matches_served_tokens() {
    // Score lists parse; the judge's reply does not, so it is re-asked and
    // then treated as abstaining. Every served reply still costs tokens.
    let stub = Stub::start(Arc::new(|_, _| (200, "[]".into())));
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ds = synth::generate(&synth::SynthConfig {
        entities: 60,
        ..Default::default()
    })
    .unwrap();
    synth::write_dataset(&ds, &data).unwrap();
    let mut cfg = PipelineConfig {
        data_dir: data,
        out_dir: tmp.path().join("out"),
        mode: RunMode::Live,
        ..Default::default()
    };
    cfg.backend.kind = BackendKind::Http;
    cfg.backend.endpoint = stub.url.clone();
    cfg.backend.api_key_env = "KGALIGN_STUB_KEY_UNSET".into();
    let run = run_pipeline(&cfg).unwrap();
    let served: u64 = stub.seen().iter().map(|s| s.tokens).sum();
    assert!(served > 0);
    assert!(run.report.partition.uncertain > 0);
    assert_eq!(run.report.cost.total_tokens, served);
    // Nothing was decided by an agent, so the embedding order stands.
    assert_eq!(run.report.metrics, run.report.baseline);
}
