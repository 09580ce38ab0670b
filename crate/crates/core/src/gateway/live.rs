//! OpenAI-compatible chat-completion backend with server-sent-event streaming.

use async_trait::async_trait;
use futures::StreamExt;
use serde_json::{json, Value};
use tokio::sync::mpsc::UnboundedSender;

use super::{Backend, BackendDescriptor, BackendError, BackendRequest, StreamItem};

pub struct LiveBackend {
    descriptor: BackendDescriptor,
    key: String,
    client: reqwest::Client,
}

impl LiveBackend {
    pub fn new(descriptor: BackendDescriptor, key: String) -> Self {
        LiveBackend {
            descriptor,
            key,
            client: reqwest::Client::new(),
        }
    }

    fn url(&self) -> String {
        let base = self.descriptor.endpoint.as_deref().unwrap_or_default();
        format!("{}/chat/completions", base.trim_end_matches('/'))
    }

    async fn attempt(
        &self,
        request: &BackendRequest,
        sink: &UnboundedSender<StreamItem>,
        sent_any: &mut bool,
    ) -> Result<String, BackendError> {
        let body = json!({
            "model": self.descriptor.model,
            "stream": true,
            "messages": [{"role": "user", "content": request.text}],
        });
        let resp = self
            .client
            .post(self.url())
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .await
            .map_err(|e| BackendError::Network(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::Auth(format!("{status}: {}", body.trim())));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: body.trim().to_string(),
            });
        }
        let mut stream = resp.bytes_stream();
        let mut sse = SseDecoder::default();
        let mut out = String::new();
        while let Some(bytes) = stream.next().await {
            let bytes = bytes.map_err(|e| BackendError::Network(e.to_string()))?;
            for data in sse.feed(&bytes) {
                if data == "[DONE]" {
                    return Ok(out);
                }
                if let Some(chunk) = delta_content(&data)? {
                    out.push_str(&chunk);
                    *sent_any = true;
                    let _ = sink.send(StreamItem::Chunk(chunk));
                }
            }
        }
        Ok(out)
    }
}

/// The text delta of one streamed completion event.
fn delta_content(data: &str) -> Result<Option<String>, BackendError> {
    let v: Value = serde_json::from_str(data)
        .map_err(|e| BackendError::Network(format!("undecodable event: {e}")))?;
    if let Some(err) = v.get("error") {
        return Err(BackendError::Http {
            status: 200,
            body: err.to_string(),
        });
    }
    Ok(v.pointer("/choices/0/delta/content")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string))
}

/// Incremental `data:` field extraction from an event stream.
#[derive(Default)]
struct SseDecoder {
    buf: Vec<u8>,
    data: Vec<String>,
}

impl SseDecoder {
    fn feed(&mut self, bytes: &[u8]) -> Vec<String> {
        self.buf.extend_from_slice(bytes);
        let mut events = Vec::new();
        while let Some(nl) = self.buf.iter().position(|b| *b == b'\n') {
            let line: Vec<u8> = self.buf.drain(..=nl).collect();
            let line = String::from_utf8_lossy(&line);
            let line = line.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                if !self.data.is_empty() {
                    events.push(self.data.join("\n"));
                    self.data.clear();
                }
            } else if let Some(d) = line.strip_prefix("data:") {
                self.data.push(d.strip_prefix(' ').unwrap_or(d).to_string());
            }
        }
        events
    }
}

#[async_trait]
impl Backend for LiveBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn generate(
        &self,
        request: &BackendRequest,
        sink: &UnboundedSender<StreamItem>,
    ) -> Result<String, BackendError> {
        let mut tries = 0;
        loop {
            let mut sent_any = false;
            match self.attempt(request, sink, &mut sent_any).await {
                // Retry only transport failures that happened before any
                // text reached the sink.
                Err(BackendError::Network(e)) if !sent_any && tries < self.descriptor.max_retries => {
                    log::warn!("backend request failed ({e}), retrying");
                    tries += 1;
                }
                other => return other,
            }
        }
    }
}
