//! Routes validated results to the workspace, at most once per request.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::unbounded_channel;

use super::{CancelToken, Gateway, GenerationRequest, GenerationResult, ResultStatus, StreamItem};
use crate::engine::Engine;
use crate::ids::*;
use crate::prompt::Parsed;
use crate::workspace::{Workspace, WorkspaceEvent};

/// Where a request's parts go once they validate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum RequestTarget {
    /// Fill an inline placeholder.
    Placeholder { layer: LayerId, placeholder: PlaceholderId },
    /// One new writing layer per part, placed beside `origin`.
    NewLayers {
        origin: LayerId,
        names: Vec<String>,
        friend: FriendId,
        #[serde(default)]
        tag: Option<String>,
    },
    /// A single new layer built from heading/paragraph sections.
    Sections { origin: LayerId, name: String, friend: FriendId },
    Feedback { layer: LayerId, persona: FriendId },
    Comparison { left: LayerId, right: LayerId, instruction: String },
    Preview { layer: LayerId },
    FoldSummary { layer: LayerId },
    Scratchpad {
        layer: LayerId,
        question: String,
        /// References were attached when the question was asked.
        grounded: bool,
    },
    /// Handed back to the issuer without touching the workspace.
    Caller,
}

impl RequestTarget {
    /// The layer whose existence decides whether the result still applies.
    pub fn layer(&self) -> Option<LayerId> {
        match self {
            RequestTarget::Placeholder { layer, .. }
            | RequestTarget::Feedback { layer, .. }
            | RequestTarget::Preview { layer }
            | RequestTarget::FoldSummary { layer }
            | RequestTarget::Scratchpad { layer, .. } => Some(*layer),
            RequestTarget::NewLayers { origin, .. } | RequestTarget::Sections { origin, .. } => Some(*origin),
            RequestTarget::Comparison { left, .. } => Some(*left),
            RequestTarget::Caller => None,
        }
    }

    fn placeholder(&self) -> Option<PlaceholderId> {
        match self {
            RequestTarget::Placeholder { placeholder, .. } => Some(*placeholder),
            _ => None,
        }
    }
}

/// What applying a result created.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Applied {
    Filled { placeholder: PlaceholderId },
    Layers { layers: Vec<LayerId> },
    Annotations { annotations: Vec<AnnotationId> },
    Comparison { session: ComparisonId },
    Preview { preview: PreviewId },
    Folded { layer: LayerId },
    Entry { layer: LayerId, entry: BlockId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Delivery {
    Applied { request: RequestId, applied: Applied },
    /// A [`RequestTarget::Caller`] result.
    Returned { request: RequestId, parts: Parsed },
    /// Valid, but its target is gone; logged and not applied.
    Archived { request: RequestId, reason: String },
    Failed {
        request: RequestId,
        status: ResultStatus,
        error: String,
    },
    /// Not pending: unknown, or already published.
    Duplicate { request: RequestId },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastStats {
    /// Results that passed the schema gate and were routed.
    pub published: u64,
    pub archived: u64,
    pub failed: u64,
}

struct Pending {
    target: RequestTarget,
    cancel: CancelToken,
}

#[derive(Default)]
struct Inner {
    next: u64,
    pending: BTreeMap<RequestId, Pending>,
    stats: BroadcastStats,
}

/// Pending-request registry plus the publish side of the gateway.
pub struct Broadcaster {
    engine: Engine,
    gateway: Gateway,
    inner: Mutex<Inner>,
}

fn highest_request(w: &Workspace) -> u64 {
    let placeholders = w.placeholders.values().filter_map(|p| p.request);
    let annotations = w.annotations.values().map(|a| a.request);
    let previews = w.previews.values().map(|p| p.request);
    w.applied_requests
        .iter()
        .copied()
        .chain(placeholders)
        .chain(annotations)
        .chain(previews)
        .map(|r| r.0)
        .max()
        .unwrap_or(0)
}

impl Broadcaster {
    pub fn new(engine: Engine, gateway: Gateway) -> Self {
        let next = highest_request(&engine.snapshot()) + 1;
        Broadcaster {
            engine,
            gateway,
            inner: Mutex::new(Inner {
                next,
                ..Inner::default()
            }),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("broadcaster lock")
    }

    pub fn next_request_id(&self) -> RequestId {
        let mut inner = self.lock();
        let id = RequestId(inner.next);
        inner.next += 1;
        id
    }

    /// Register `request` as pending. Returns its cancel token.
    pub fn register(&self, request: RequestId, target: RequestTarget) -> CancelToken {
        let cancel = CancelToken::new();
        self.lock().pending.insert(
            request,
            Pending {
                target,
                cancel: cancel.clone(),
            },
        );
        cancel
    }

    /// Cancel an in-flight request. Returns whether it was pending.
    pub fn cancel(&self, request: RequestId) -> bool {
        match self.lock().pending.get(&request) {
            Some(p) => {
                p.cancel.cancel();
                true
            }
            None => false,
        }
    }

    /// Cancel whatever request is filling `placeholder`.
    pub fn cancel_placeholder(&self, placeholder: PlaceholderId) -> bool {
        let inner = self.lock();
        let hit = inner
            .pending
            .values()
            .filter(|p| p.target.placeholder() == Some(placeholder))
            .map(|p| p.cancel.cancel())
            .count();
        hit > 0
    }

    pub fn in_flight(&self) -> Vec<RequestId> {
        self.lock().pending.keys().copied().collect()
    }

    pub fn stats(&self) -> BroadcastStats {
        self.lock().stats
    }

    /// Run `request` through the gateway, streaming into the target
    /// placeholder if there is one, then publish the outcome.
    pub async fn dispatch(&self, request: GenerationRequest, target: RequestTarget) -> Delivery {
        let placeholder = target.placeholder();
        let cancel = self.register(request.id, target);
        let (tx, mut rx) = unbounded_channel::<StreamItem>();
        let engine = self.engine.clone();
        let forward = async move {
            while let Some(item) = rx.recv().await {
                let Some(p) = placeholder else { continue };
                let r = engine
                    .mutate_async(move |w| match item {
                        StreamItem::Chunk(c) => w.stream_into(p, &c),
                        StreamItem::Restart => w.restart_stream(p),
                    })
                    .await;
                if let Err(e) = r {
                    log::debug!("stream chunk for {p} dropped: {e}");
                }
            }
        };
        let generate = async {
            let tx = tx;
            self.gateway.generate(&request, &tx, &cancel).await
        };
        let (result, ()) = futures::join!(generate, forward);
        self.publish(result).await
    }

    /// Route a finished result. Only results with status ok reach the
    /// workspace; anything else rejects the target placeholder and is logged.
    pub async fn publish(&self, result: GenerationResult) -> Delivery {
        let request = result.request;
        let Some(pending) = self.lock().pending.remove(&request) else {
            return Delivery::Duplicate { request };
        };
        let target = pending.target;
        match (result.status, result.parts) {
            (ResultStatus::Ok, Some(parts)) => self.route(request, target, parts).await,
            (status, _) => {
                let error = result.error.unwrap_or_else(|| format!("{status:?}"));
                self.lock().stats.failed += 1;
                if let Some(p) = target.placeholder() {
                    let note = error.clone();
                    let _ = self
                        .engine
                        .mutate_async(move |w| {
                            if w.placeholder(p)?.is_open() {
                                w.fail_placeholder(p, &note)?;
                            }
                            Ok(())
                        })
                        .await;
                }
                if status != ResultStatus::Cancelled {
                    self.engine
                        .notify(WorkspaceEvent::ResultArchived {
                            request,
                            reason: format!("{}: {error}", status_label(status)),
                        })
                        .await;
                }
                Delivery::Failed {
                    request,
                    status,
                    error,
                }
            }
        }
    }

    async fn route(&self, request: RequestId, target: RequestTarget, parts: Parsed) -> Delivery {
        self.lock().stats.published += 1;
        let Some(layer) = target.layer() else {
            return Delivery::Returned { request, parts };
        };
        let outcome = self
            .engine
            .mutate_async(move |w| {
                if !w.accepts_results(layer) {
                    return Ok(Err(format!("{layer} is retired or binned")));
                }
                if w.applied_requests.contains(&request) {
                    return Ok(Err(format!("{request} was already applied")));
                }
                let applied = match w.apply_result(request, &target, parts) {
                    Ok(a) => a,
                    Err(e) => return Err(e),
                };
                w.mark_applied(request, layer)?;
                Ok(Ok(applied))
            })
            .await;
        let reason = match outcome {
            Ok(Ok(applied)) => return Delivery::Applied { request, applied },
            Ok(Err(reason)) => reason,
            Err(e) => e.to_string(),
        };
        self.lock().stats.archived += 1;
        log::info!("result {request} archived: {reason}");
        self.engine
            .notify(WorkspaceEvent::ResultArchived {
                request,
                reason: reason.clone(),
            })
            .await;
        Delivery::Archived { request, reason }
    }
}

fn status_label(s: ResultStatus) -> &'static str {
    match s {
        ResultStatus::Ok => "ok",
        ResultStatus::SchemaInvalid => "schema-invalid",
        ResultStatus::BackendError => "backend-error",
        ResultStatus::Timeout => "timeout",
        ResultStatus::Cancelled => "cancelled",
    }
}
