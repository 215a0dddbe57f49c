//! Chat-completion transport with retries, plus a record/replay layer that
//! makes every model-backed stage runnable without network access.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned non-retryable status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("reply does not match the chat-completion schema: {0}")]
    Schema(String),
    #[error("no recorded exchange for request digest {0}")]
    CacheMiss(String),
    #[error("transcript store is corrupt at {path}: {message}")]
    StoreCorrupt { path: PathBuf, message: String },
    #[error("invalid client config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_units: Option<u64>,
    pub reply_units: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    /// Number of HTTP attempts spent; zero for replayed exchanges.
    #[serde(skip)]
    pub attempts: u32,
}

/// Anything that can turn a message list into a reply.
pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ChatExchange, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub retry_budget: u32,
    pub backoff_base_ms: u64,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub temperature: f64,
    pub max_reply_tokens: u32,
    pub max_in_flight: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "local-model".into(),
            timeout_ms: 120_000,
            retry_budget: 3,
            backoff_base_ms: 500,
            auth_env: "SEEKER_API_KEY".into(),
            temperature: 0.0,
            max_reply_tokens: 4096,
            max_in_flight: 8,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout_ms == 0 {
            return Err(ClientError::Config("timeout_ms must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be positive".into()));
        }
        if !self.temperature.is_finite() {
            return Err(ClientError::Config("temperature must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Raw HTTP layer, kept behind a trait so retry behaviour is testable.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, String>;
}

/// Blocking HTTP transport.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

/// Builds the wire request body.
pub fn request_body(cfg: &ClientConfig, messages: &[ChatMessage]) -> Value {
    json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_reply_tokens,
    })
}

/// Extracts the reply text and usage from a chat-completion response body.
pub fn parse_response(body: &str) -> Result<(String, Option<Usage>), ClientError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ClientError::Schema(e.to_string()))?;
    let reply = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ClientError::Schema("missing choices[0].message.content".into()))?;
    let usage = v.get("usage").map(|u| Usage {
        prompt_units: u.get("prompt_tokens").and_then(Value::as_u64),
        reply_units: u.get("completion_tokens").and_then(Value::as_u64),
    });
    Ok((reply.to_string(), usage))
}

/// Sends one chat-completion request, retrying transient failures with
/// exponential backoff (`backoff_base_ms * 2^attempt`).
pub fn complete(
    cfg: &ClientConfig,
    transport: &dyn Transport,
    messages: &[ChatMessage],
) -> Result<ChatExchange, ClientError> {
    cfg.validate()?;
    let bearer = std::env::var(&cfg.auth_env).ok();
    let body = request_body(cfg, messages);
    let timeout = Duration::from_millis(cfg.timeout_ms);
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let failure = match transport.post_json(&cfg.endpoint, bearer.as_deref(), &body, timeout) {
            Ok(resp) if (200..300).contains(&resp.status) => {
                let (reply, usage) = parse_response(&resp.body)?;
                return Ok(ChatExchange { messages: messages.to_vec(), reply, usage, attempts });
            }
            Ok(resp) if retryable_status(resp.status) => format!("status {}", resp.status),
            Ok(resp) => return Err(ClientError::Status { status: resp.status, body: resp.body }),
            Err(e) => e,
        };
        if attempts > cfg.retry_budget {
            return Err(ClientError::Transport { attempts, message: failure });
        }
        log::warn!("chat request attempt {attempts} failed ({failure}), retrying");
        let delay = cfg.backoff_base_ms.saturating_mul(1u64 << (attempts - 1).min(16));
        if delay > 0 {
            std::thread::sleep(Duration::from_millis(delay));
        }
    }
}

/// Stable digest of a request: canonical JSON of model, temperature and messages.
pub fn request_digest(model: &str, temperature: f64, messages: &[ChatMessage]) -> String {
    let canonical = json!({ "messages": messages, "model": model, "temperature": temperature });
    let bytes = serde_json::to_vec(&canonical).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    Live,
    Record,
    #[default]
    Replay,
}

#[derive(Serialize, Deserialize)]
struct StoredExchange {
    digest: String,
    model: String,
    temperature: f64,
    #[serde(flatten)]
    exchange: ChatExchange,
}

/// Content-addressed directory of request/reply documents, one file per digest.
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
}

impl TranscriptStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TranscriptStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn load(&self, digest: &str) -> Result<ChatExchange, ClientError> {
        let path = self.path_for(digest);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ClientError::CacheMiss(digest.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let stored: StoredExchange = serde_json::from_str(&text)
            .map_err(|e| ClientError::StoreCorrupt { path: path.clone(), message: e.to_string() })?;
        let actual = request_digest(&stored.model, stored.temperature, &stored.exchange.messages);
        if stored.digest != digest || actual != digest {
            return Err(ClientError::StoreCorrupt { path, message: "digest mismatch".into() });
        }
        Ok(stored.exchange)
    }

    pub fn save(&self, model: &str, temperature: f64, exchange: &ChatExchange) -> Result<String, ClientError> {
        fs::create_dir_all(&self.dir)?;
        let digest = request_digest(model, temperature, &exchange.messages);
        let stored = StoredExchange {
            digest: digest.clone(),
            model: model.to_string(),
            temperature,
            exchange: exchange.clone(),
        };
        let path = self.path_for(&digest);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&stored).expect("serializable"))?;
        fs::rename(tmp, path)?;
        Ok(digest)
    }
}

/// Caps the number of concurrent in-flight requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().expect("poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("poisoned");
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable client handle in live, record or replay mode.
pub struct ModelClient {
    cfg: ClientConfig,
    mode: ClientMode,
    store: Option<TranscriptStore>,
    transport: Box<dyn Transport>,
    in_flight: InFlight,
}

impl std::fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelClient").field("mode", &self.mode).field("model", &self.cfg.model).finish()
    }
}

/// Opens a client handle. Replay mode requires the store directory to exist.
pub fn record_replay(
    mode: ClientMode,
    store: Option<&Path>,
    cfg: ClientConfig,
    transport: Box<dyn Transport>,
) -> Result<ModelClient, ClientError> {
    cfg.validate()?;
    let store = match (mode, store) {
        (ClientMode::Live, s) => s.map(TranscriptStore::new),
        (ClientMode::Replay, Some(p)) => {
            if !p.is_dir() {
                return Err(ClientError::Config(format!("replay store {} does not exist", p.display())));
            }
            Some(TranscriptStore::new(p))
        }
        (ClientMode::Record, Some(p)) => Some(TranscriptStore::new(p)),
        (_, None) => return Err(ClientError::Config(format!("{mode:?} mode needs a transcript store"))),
    };
    let limit = cfg.max_in_flight;
    Ok(ModelClient {
        cfg,
        mode,
        store,
        transport,
        in_flight: InFlight { limit, active: Mutex::new(0), freed: Condvar::new() },
    })
}

impl ModelClient {
    pub fn mode(&self) -> ClientMode {
        self.mode
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }
}

impl ChatModel for ModelClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<ChatExchange, ClientError> {
        match self.mode {
            ClientMode::Replay => {
                let digest = request_digest(&self.cfg.model, self.cfg.temperature, messages);
                self.store.as_ref().expect("replay has a store").load(&digest)
            }
            ClientMode::Live | ClientMode::Record => {
                let exchange = {
                    let _slot = self.in_flight.acquire();
                    complete(&self.cfg, self.transport.as_ref(), messages)?
                };
                if self.mode == ClientMode::Record {
                    let store = self.store.as_ref().expect("record has a store");
                    store.save(&self.cfg.model, self.cfg.temperature, &exchange)?;
                }
                Ok(exchange)
            }
        }
    }
}
