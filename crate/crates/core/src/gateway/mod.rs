//! Generation backends, schema gate and result routing.

pub mod broadcast;
pub mod live;
pub mod mock;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc::UnboundedSender;
use tokio::sync::Notify;

pub use broadcast::{Broadcaster, Delivery, RequestTarget};
pub use live::LiveBackend;
pub use mock::{MockBackend, MockConfig, MockFault};

use crate::ids::{LayerId, RequestId, TaskId};
use crate::prompt::{ComposedPrompt, Parsed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Live,
    Mock,
}

/// Which backend a session talks to and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend: BackendKind,
    pub model: String,
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Extra attempts after a network failure (live only).
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Per-chunk delay of the mock backend.
    #[serde(default)]
    pub mock_latency_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    2
}

fn default_key_env() -> String {
    "STRATA_API_KEY".into()
}

impl BackendDescriptor {
    pub fn mock() -> Self {
        BackendDescriptor {
            backend: BackendKind::Mock,
            model: "mock".into(),
            endpoint: None,
            timeout_secs: default_timeout(),
            max_retries: 0,
            api_key_env: default_key_env(),
            mock_latency_ms: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, BackendError> {
        let d: BackendDescriptor =
            toml::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?;
        if !(d.timeout_secs > 0.0 && d.timeout_secs.is_finite()) {
            return Err(BackendError::Config("timeout_secs must be positive".into()));
        }
        if d.backend == BackendKind::Live && d.endpoint.is_none() {
            return Err(BackendError::Config("live backend needs an endpoint".into()));
        }
        Ok(d)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Build the backend `descriptor` asks for. A live descriptor whose key
/// variable is unset falls back to the mock; the second value is the warning
/// to show at startup.
pub fn build_backend(
    descriptor: &BackendDescriptor,
    key: impl Fn(&str) -> Option<String>,
) -> (Arc<dyn Backend>, Option<String>) {
    let mock = || {
        Arc::new(MockBackend::new(MockConfig {
            latency: Duration::from_millis(descriptor.mock_latency_ms),
            ..MockConfig::default()
        })) as Arc<dyn Backend>
    };
    match descriptor.backend {
        BackendKind::Mock => (mock(), None),
        BackendKind::Live => match key(&descriptor.api_key_env).filter(|k| !k.is_empty()) {
            Some(k) => (Arc::new(LiveBackend::new(descriptor.clone(), k)), None),
            None => (
                mock(),
                Some(format!(
                    "{} is not set; using the offline mock backend",
                    descriptor.api_key_env
                )),
            ),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider returned {status}: {body}")]
    Http { status: u16, body: String },
    #[error("bad backend configuration: {0}")]
    Config(String),
}

/// One streamed element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StreamItem {
    Chunk(String),
    /// Discard what was streamed so far; a repair attempt starts over.
    Restart,
}

/// What a backend is asked to answer.
#[derive(Clone, Debug)]
pub struct BackendRequest {
    pub prompt: ComposedPrompt,
    /// The exact text sent to the model.
    pub text: String,
    /// 0 for the first attempt, 1 for the repair re-ask.
    pub attempt: u32,
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Produce the full response text, sending chunks to `sink` as they
    /// arrive. Dropping the future must be safe at any await point.
    async fn generate(
        &self,
        request: &BackendRequest,
        sink: &UnboundedSender<StreamItem>,
    ) -> Result<String, BackendError>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub id: RequestId,
    pub prompt: ComposedPrompt,
    pub origin: (LayerId, TaskId),
    pub issued_at_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultStatus {
    Ok,
    SchemaInvalid,
    BackendError,
    Timeout,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub request: RequestId,
    /// Present exactly when `status` is ok.
    pub parts: Option<Parsed>,
    pub raw_text: String,
    pub status: ResultStatus,
    #[serde(default)]
    pub error: Option<String>,
}

impl GenerationResult {
    fn failed(request: RequestId, status: ResultStatus, raw_text: String, error: String) -> Self {
        GenerationResult {
            request,
            parts: None,
            raw_text,
            status,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ResultStatus::Ok
    }
}

/// Cooperative cancellation shared between a request and its owner.
#[derive(Clone, Debug, Default)]
pub struct CancelToken(Arc<CancelInner>);

#[derive(Debug, Default)]
struct CancelInner {
    flag: AtomicBool,
    notify: Notify,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.flag.store(true, Ordering::SeqCst);
        self.0.notify.notify_waiters();
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.flag.load(Ordering::SeqCst)
    }

    pub async fn cancelled(&self) {
        let notified = self.0.notify.notified();
        tokio::pin!(notified);
        notified.as_mut().enable();
        if self.is_cancelled() {
            return;
        }
        notified.await;
    }
}

fn repair_text(prompt: &ComposedPrompt, error: &str) -> String {
    format!(
        "{}\n[[repair]]\nYour previous reply was rejected: {error}. Reply again, following the output-format section exactly.\n",
        prompt.serialize()
    )
}

/// Runs requests against one backend with the timeout and repair policy.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    timeout: Duration,
    repair_attempts: u32,
}

enum Attempted {
    Ok(Parsed, String),
    Failed(ResultStatus, String, String),
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        let timeout = backend.descriptor().timeout();
        Gateway {
            backend,
            timeout,
            repair_attempts: 1,
        }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend::default()))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_repair_attempts(mut self, n: u32) -> Self {
        self.repair_attempts = n;
        self
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    /// Generate, stream into `sink`, validate, and return the final result.
    /// Prompts that ask for several instances are fanned out and their parts
    /// merged in instance order.
    pub async fn generate(
        &self,
        request: &GenerationRequest,
        sink: &UnboundedSender<StreamItem>,
        cancel: &CancelToken,
    ) -> GenerationResult {
        let id = request.id;
        let work = async {
            let instances = request.prompt.instances();
            let runs = instances.iter().map(|p| self.one_instance(p, sink));
            let outcomes = futures::future::join_all(runs).await;
            merge(id, outcomes)
        };
        tokio::select! {
            _ = cancel.cancelled() => GenerationResult::failed(
                id, ResultStatus::Cancelled, String::new(), "cancelled".into()),
            r = tokio::time::timeout(self.timeout, work) => r.unwrap_or_else(|_| {
                GenerationResult::failed(
                    id,
                    ResultStatus::Timeout,
                    String::new(),
                    format!("no complete answer within {:?}", self.timeout),
                )
            }),
        }
    }

    async fn one_instance(&self, prompt: &ComposedPrompt, sink: &UnboundedSender<StreamItem>) -> Attempted {
        let mut text = prompt.serialize();
        let mut attempt = 0;
        loop {
            let req = BackendRequest {
                prompt: prompt.clone(),
                text: text.clone(),
                attempt,
            };
            let raw = match self.backend.generate(&req, sink).await {
                Ok(raw) => raw,
                Err(e) => return Attempted::Failed(ResultStatus::BackendError, String::new(), e.to_string()),
            };
            match prompt.schema.parse(&raw) {
                Ok(parts) => return Attempted::Ok(parts, raw),
                Err(e) if attempt < self.repair_attempts => {
                    log::warn!("{} reply failed its schema ({e}); asking again", prompt.task);
                    let _ = sink.send(StreamItem::Restart);
                    text = repair_text(prompt, &e.to_string());
                    attempt += 1;
                }
                Err(e) => return Attempted::Failed(ResultStatus::SchemaInvalid, raw, e.to_string()),
            }
        }
    }
}

fn merge(id: RequestId, outcomes: Vec<Attempted>) -> GenerationResult {
    let mut raws = Vec::new();
    let mut parts: Vec<Parsed> = Vec::new();
    for o in outcomes {
        match o {
            Attempted::Ok(p, raw) => {
                parts.push(p);
                raws.push(raw);
            }
            Attempted::Failed(status, raw, error) => {
                raws.push(raw);
                return GenerationResult::failed(id, status, raws.join("\n"), error);
            }
        }
    }
    let raw_text = raws.join("\n");
    let parts = if parts.len() == 1 {
        parts.pop()
    } else {
        // Only new-layer prompts are split into several instances.
        let mut layers = Vec::new();
        for p in parts {
            match p {
                Parsed::Layers(l) => layers.extend(l),
                other => {
                    return GenerationResult::failed(
                        id,
                        ResultStatus::SchemaInvalid,
                        raw_text,
                        format!("cannot merge {other:?} across instances"),
                    )
                }
            }
        }
        Some(Parsed::Layers(layers))
    };
    GenerationResult {
        request: id,
        parts,
        raw_text,
        status: ResultStatus::Ok,
        error: None,
    }
}

#[cfg(test)]
mod tests;
