//! Minimal chat-completion client.
//!
//! Requests go through a [`Transport`]: [`HttpTransport`] for a live
//! endpoint, [`FixtureTransport`] to replay recorded responses keyed by the
//! request hash, and [`ScriptedTransport`] for canned status sequences.
//! Retries (429, 5xx, timeouts) with exponential backoff live in
//! [`send_chat`] and apply to every transport.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_URL: &str = "LLM_API_URL";
pub const ENV_KEY: &str = "LLM_API_KEY";
pub const ENV_MODEL: &str = "LLM_MODEL";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway configuration: {0}")]
    Configuration(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("no fixture for request {hash} in {dir}")]
    FixtureMiss { hash: String, dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

/// Wire body. Field order is fixed by the struct, so serialization is
/// canonical and request hashes are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest { model: model.into(), messages, temperature: 0.0 }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::Configuration("chat request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Configuration(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("chat request serializes")
    }

    /// Hex SHA-256 of the canonical body; fixture file stem.
    pub fn fingerprint(&self) -> String {
        body_fingerprint(self.canonical_json().as_bytes())
    }
}

fn body_fingerprint(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub latency_ms: u64,
    /// Attempts beyond the first.
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backoff {
    pub base_ms: u64,
    pub max_ms: u64,
    /// Randomize each delay within `[d/2, d]`.
    pub jitter: bool,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base_ms: 500, max_ms: 8_000, jitter: true }
    }
}

impl Backoff {
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self.base_ms.saturating_mul(1u64 << retry.min(20));
        let d = exp.min(self.max_ms);
        let d = if self.jitter && d > 1 {
            rand::thread_rng().gen_range(d / 2..=d)
        } else {
            d
        };
        Duration::from_millis(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    /// Never written to disk; filled from the environment.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub require_api_key: bool,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff: Backoff,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: String::new(),
            api_key: None,
            require_api_key: true,
            model: "gpt-4".into(),
            timeout_ms: 30_000,
            max_retries: 3,
            backoff: Backoff::default(),
        }
    }
}

impl GatewayConfig {
    /// Fills URL, key and model from `LLM_API_URL`, `LLM_API_KEY` and
    /// `LLM_MODEL` where they are set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_URL) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        if let Ok(key) = std::env::var(ENV_KEY) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.is_empty() {
                self.model = model;
            }
        }
        self
    }

    /// Settings for replaying fixtures: no URL or key needed, no waiting.
    pub fn for_fixtures() -> Self {
        GatewayConfig {
            base_url: "fixture://".into(),
            require_api_key: false,
            backoff: Backoff { base_ms: 0, max_ms: 0, jitter: false },
            ..GatewayConfig::default()
        }
    }

    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if self.base_url.trim().is_empty() {
            return Err(GatewayError::Configuration(format!(
                "no endpoint configured (set {ENV_URL})"
            )));
        }
        if self.require_api_key && self.api_key.as_deref().unwrap_or("").is_empty() {
            return Err(GatewayError::Configuration(format!(
                "endpoint requires an API key (set {ENV_KEY})"
            )));
        }
        Ok(())
    }
}

/// Raw HTTP exchange result.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    Timeout,
    Connection(String),
    /// Not retryable: the transport can never serve this request.
    Fatal(GatewayErrorKind, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayErrorKind {
    FixtureMiss,
    Configuration,
}

pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportFailure>;

    /// Where fixture misses should point the operator.
    fn describe(&self) -> String {
        String::new()
    }
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Configuration(format!("building HTTP client: {e}")))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportFailure> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header("Content-Type", "application/json")
            .body(body.to_string());
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .text()
                    .map_err(|e| TransportFailure::Connection(e.to_string()))?;
                Ok(HttpReply { status, body })
            }
            Err(e) if e.is_timeout() => Err(TransportFailure::Timeout),
            Err(e) => Err(TransportFailure::Connection(e.to_string())),
        }
    }
}

/// Wraps content the way a chat-completion endpoint returns it.
pub fn completion_body(content: &str, finish_reason: &str) -> String {
    serde_json::json!({
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": finish_reason,
        }]
    })
    .to_string()
}

/// Replays `<sha256-of-request>.txt` files from a directory.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn fixture_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.txt"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Opens a fixture directory for replay.
pub fn load_fixture_transport(dir: impl AsRef<Path>) -> Result<FixtureTransport, GatewayError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(GatewayError::Configuration(format!(
            "fixture directory {} does not exist",
            dir.display()
        )));
    }
    Ok(FixtureTransport { dir: dir.to_path_buf() })
}

/// Stores `content` as the recorded response to `req`.
pub fn record_fixture(dir: impl AsRef<Path>, req: &ChatRequest, content: &str) -> std::io::Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.txt", req.fingerprint()));
    fs::write(&path, content)?;
    Ok(path)
}

impl Transport for FixtureTransport {
    fn post(
        &self,
        _url: &str,
        _api_key: Option<&str>,
        body: &str,
        _timeout: Duration,
    ) -> Result<HttpReply, TransportFailure> {
        let hash = body_fingerprint(body.as_bytes());
        match fs::read_to_string(self.fixture_path(&hash)) {
            Ok(content) => Ok(HttpReply { status: 200, body: completion_body(&content, "stop") }),
            Err(_) => Err(TransportFailure::Fatal(GatewayErrorKind::FixtureMiss, hash)),
        }
    }

    fn describe(&self) -> String {
        self.dir.display().to_string()
    }
}

/// Serves a fixed sequence of replies and records how often it was called.
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<Result<HttpReply, TransportFailure>>>,
    calls: Mutex<u32>,
}

impl ScriptedTransport {
    pub fn new(replies: Vec<Result<HttpReply, TransportFailure>>) -> Self {
        ScriptedTransport { replies: Mutex::new(replies.into()), calls: Mutex::new(0) }
    }

    /// Status-only script; 200 replies carry `content`.
    pub fn statuses(statuses: &[u16], content: &str) -> Self {
        ScriptedTransport::new(
            statuses
                .iter()
                .map(|&status| {
                    let body = if status == 200 {
                        completion_body(content, "stop")
                    } else {
                        format!("{{\"error\":{{\"code\":{status}}}}}")
                    };
                    Ok(HttpReply { status, body })
                })
                .collect(),
        )
    }

    pub fn calls(&self) -> u32 {
        *self.calls.lock().unwrap()
    }
}

impl Transport for ScriptedTransport {
    fn post(
        &self,
        _url: &str,
        _api_key: Option<&str>,
        _body: &str,
        _timeout: Duration,
    ) -> Result<HttpReply, TransportFailure> {
        *self.calls.lock().unwrap() += 1;
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(TransportFailure::Connection("script exhausted".into())))
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

fn parse_completion(body: &str) -> Result<(String, String), GatewayError> {
    let parsed: CompletionBody =
        serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let first = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let content = first
        .message
        .content
        .ok_or_else(|| GatewayError::Protocol("first choice has no content".into()))?;
    Ok((content, first.finish_reason.unwrap_or_default()))
}

/// POSTs `req` and returns the first choice's content.
///
/// 429, 5xx and timeouts are retried up to `cfg.max_retries` times with
/// exponential backoff; 401/403 are configuration errors; other 4xx fail
/// immediately.
pub fn send_chat(
    req: &ChatRequest,
    cfg: &GatewayConfig,
    transport: &dyn Transport,
) -> Result<ChatResponse, GatewayError> {
    cfg.check()?;
    req.validate()?;
    let body = req.canonical_json();
    let url = cfg.endpoint();
    let timeout = Duration::from_millis(cfg.timeout_ms);
    let started = Instant::now();
    let mut retries = 0u32;
    loop {
        let last = match transport.post(&url, cfg.api_key.as_deref(), &body, timeout) {
            Ok(reply) if (200..300).contains(&reply.status) => {
                let (content, finish_reason) = parse_completion(&reply.body)?;
                return Ok(ChatResponse {
                    content,
                    finish_reason,
                    latency_ms: started.elapsed().as_millis() as u64,
                    retries,
                });
            }
            Ok(reply) if reply.status == 401 || reply.status == 403 => {
                return Err(GatewayError::Configuration(format!(
                    "endpoint rejected credentials (HTTP {})",
                    reply.status
                )));
            }
            Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                format!("HTTP {}", reply.status)
            }
            Ok(reply) => {
                return Err(GatewayError::Transport {
                    attempts: retries + 1,
                    message: format!("HTTP {}: {}", reply.status, truncate(&reply.body, 200)),
                });
            }
            Err(TransportFailure::Timeout) => format!("timed out after {} ms", cfg.timeout_ms),
            Err(TransportFailure::Connection(e)) => e,
            Err(TransportFailure::Fatal(GatewayErrorKind::FixtureMiss, hash)) => {
                return Err(GatewayError::FixtureMiss { hash, dir: transport.describe().into() });
            }
            Err(TransportFailure::Fatal(GatewayErrorKind::Configuration, msg)) => {
                return Err(GatewayError::Configuration(msg));
            }
        };
        if retries >= cfg.max_retries {
            return Err(GatewayError::Transport { attempts: retries + 1, message: last });
        }
        log::warn!("chat request failed ({last}); retrying");
        std::thread::sleep(cfg.backoff.delay(retries));
        retries += 1;
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
