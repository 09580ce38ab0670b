//! Deterministic offline backend.
//!
//! Output is a pure function of the serialized prompt plus the structured
//! context it was composed from. Every text carries a tag of the form
//! `[(task)·<digest>·<body>]`, where `<digest>` is the 16-hex digest of the
//! prompt text the backend received.

use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::mpsc::UnboundedSender;

use super::{Backend, BackendDescriptor, BackendError, BackendRequest, StreamItem};
use crate::digest::digest16;
use crate::prompt::{ComposedPrompt, ContextLayer, SchemaKind};
use crate::text::{char_len, word_count};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum MockFault {
    #[default]
    None,
    /// Every attempt returns text that fails its schema.
    Malformed,
    /// The first attempt is malformed, the repair attempt is valid.
    MalformedOnce,
    /// Ordering tasks return a well-formed list that is not a permutation.
    InvalidOrdering,
    /// Every call fails like a network error.
    Fail(String),
}

#[derive(Clone, Debug)]
pub struct MockConfig {
    /// Delay before each streamed chunk.
    pub latency: Duration,
    pub chunk_chars: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            latency: Duration::ZERO,
            chunk_chars: 24,
        }
    }
}

pub struct MockBackend {
    descriptor: BackendDescriptor,
    config: MockConfig,
    fault: Mutex<MockFault>,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        MockBackend {
            descriptor: BackendDescriptor::mock(),
            config,
            fault: Mutex::new(MockFault::None),
        }
    }

    pub fn with_fault(config: MockConfig, fault: MockFault) -> Self {
        let m = Self::new(config);
        m.set_fault(fault);
        m
    }

    pub fn set_fault(&self, fault: MockFault) {
        *self.fault.lock().expect("fault lock") = fault;
    }

    fn fault(&self) -> MockFault {
        self.fault.lock().expect("fault lock").clone()
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(MockConfig::default())
    }
}

fn tag(task: &str, digest: &str, body: &str) -> String {
    format!("[({task})·{digest}·{body}]")
}

fn parts(bodies: &[String]) -> String {
    bodies
        .iter()
        .enumerate()
        .map(|(i, b)| format!("<<<PART {}>>>\n{b}\n<<<END>>>", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The mock's answer for `prompt`, received as `text`.
pub fn mock_output(prompt: &ComposedPrompt, text: &str, fault: &MockFault) -> String {
    let task = prompt.task.as_str();
    let d = digest16(text);
    let ctx = &prompt.context;
    let primary = ctx.layers.first();
    match prompt.schema {
        SchemaKind::FreeText => tag(task, &d, "generated text"),
        SchemaKind::InlineParagraph => {
            if task == "ideate" {
                (1..=3)
                    .map(|i| tag(task, &d, &format!("idea {i}")))
                    .collect::<Vec<_>>()
                    .join("; ")
            } else {
                tag(task, &d, "generated text")
            }
        }
        SchemaKind::NewLayers(n) if task.starts_with("template-") => {
            // Contiguous runs of the source paragraphs, one run per component.
            let texts = paragraph_texts(primary);
            let bodies: Vec<String> = (0..n)
                .map(|k| {
                    let lo = k * texts.len() / n;
                    let hi = (k + 1) * texts.len() / n;
                    if lo == hi {
                        "-".to_string()
                    } else {
                        texts[lo..hi].join("\n\n")
                    }
                })
                .collect();
            parts(&bodies)
        }
        SchemaKind::NewLayers(n) => {
            let paragraphs = paragraph_texts(primary).len().max(1);
            let bodies: Vec<String> = (1..=n)
                .map(|k| {
                    (1..=paragraphs)
                        .map(|i| tag(task, &d, &format!("variant {k} paragraph {i}")))
                        .collect::<Vec<_>>()
                        .join("\n\n")
                })
                .collect();
            parts(&bodies)
        }
        SchemaKind::StructuredSections => {
            let texts = paragraph_texts(primary);
            let half = texts.len().div_ceil(2);
            let mut out = Vec::new();
            for (s, chunk) in [&texts[..half], &texts[half..]].iter().enumerate() {
                out.push(format!("# {}", tag(task, &d, &format!("section {}", s + 1))));
                if chunk.is_empty() {
                    out.push(tag(task, &d, "section body"));
                }
                out.extend(chunk.iter().cloned());
            }
            out.join("\n\n")
        }
        SchemaKind::AnnotationList => {
            if task == "compare" {
                let mut bodies = Vec::new();
                for (layer, kind) in ctx.layers.iter().take(2).zip(["similarity", "difference"]) {
                    if let Some(b) = layer.blocks.first().filter(|b| !b.text.is_empty()) {
                        bodies.push(format!(
                            "layer: {}\nblock: {}\nrange: 0-{}\nkind: {kind}\nnote: {}",
                            layer.id,
                            b.id,
                            char_len(&b.text).min(40),
                            tag(task, &d, kind)
                        ));
                    }
                }
                parts(&bodies)
            } else {
                let bodies: Vec<String> = primary
                    .map(|l| {
                        l.blocks
                            .iter()
                            .map(|b| {
                                format!(
                                    "layer: {}\nblock: {}\nnote: {}",
                                    l.id,
                                    b.id,
                                    tag(task, &d, &format!("note on {}", b.id))
                                )
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                parts(&bodies)
            }
        }
        SchemaKind::Ordering => {
            let mut layers: Vec<_> = ctx.layers.iter().collect();
            layers.sort_by(|a, b| a.name.cmp(&b.name).then(a.id.cmp(&b.id)));
            let mut ids: Vec<String> = layers.iter().map(|l| l.id.to_string()).collect();
            if *fault == MockFault::InvalidOrdering {
                match ids.len() {
                    0 | 1 => ids = vec!["L0".into()],
                    n => ids[n - 1] = ids[0].clone(),
                }
            }
            ids.join(", ")
        }
        SchemaKind::CitedAnswer => {
            let mut lines = vec![tag(task, &d, "answer")];
            for r in &ctx.references {
                lines.push(format!("cite: {} 0-{}", r.doc, r.chars.min(40)));
            }
            lines.join("\n")
        }
        SchemaKind::BlockReplacements => {
            let mut bodies = Vec::new();
            match ctx.target_words {
                Some(target) => {
                    let total: usize = ctx
                        .layers
                        .iter()
                        .flat_map(|l| &l.blocks)
                        .map(|b| word_count(&b.text))
                        .sum();
                    if total > 0 {
                        for l in &ctx.layers {
                            for b in l.blocks.iter().filter(|b| !b.heading) {
                                let words: Vec<&str> = b.text.split_whitespace().collect();
                                if words.is_empty() {
                                    continue;
                                }
                                let share = (words.len() * target + total / 2) / total;
                                let keep = share.clamp(1, words.len());
                                if keep < words.len() {
                                    bodies.push(format!(
                                        "layer: {}\nblock: {}\ntext: {}",
                                        l.id,
                                        b.id,
                                        words[..keep].join(" ")
                                    ));
                                }
                            }
                        }
                    }
                }
                None => {
                    let last = ctx
                        .layers
                        .iter()
                        .rev()
                        .find_map(|l| l.blocks.iter().rev().find(|b| !b.heading).map(|b| (l.id, b.id)));
                    if let Some((layer, block)) = last {
                        bodies.push(format!(
                            "layer: {layer}\nblock: {block}\ntext: {}",
                            tag(task, &d, "edited")
                        ));
                    }
                }
            }
            if bodies.is_empty() {
                // Nothing to change: an empty, well-formed list.
                String::new()
            } else {
                parts(&bodies)
            }
        }
    }
}

/// Non-heading, non-empty paragraphs of `layer`, made safe to echo inside a
/// reply: single paragraphs, no leading `#`, no part delimiters.
fn paragraph_texts(layer: Option<&ContextLayer>) -> Vec<String> {
    layer
        .map(|l| {
            l.blocks
                .iter()
                .filter(|b| !b.heading && !b.text.trim().is_empty())
                .map(|b| {
                    let t = b.text.split_whitespace().collect::<Vec<_>>().join(" ");
                    t.trim_start_matches('#').replace("<<<", "‹‹‹").trim().to_string()
                })
                .filter(|t| !t.is_empty() && t != "-")
                .collect()
        })
        .unwrap_or_default()
}

const MALFORMED: &str = "<<<PART 1>>>\nthis reply never closes its part";

fn chunks(text: &str, size: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chars
        .chunks(size.max(1))
        .map(|c| c.iter().collect())
        .collect()
}

#[async_trait]
impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    async fn generate(
        &self,
        request: &BackendRequest,
        sink: &UnboundedSender<StreamItem>,
    ) -> Result<String, BackendError> {
        let fault = self.fault();
        let out = match &fault {
            MockFault::Fail(msg) => return Err(BackendError::Network(msg.clone())),
            MockFault::Malformed => MALFORMED.to_string(),
            MockFault::MalformedOnce if request.attempt == 0 => MALFORMED.to_string(),
            _ => mock_output(&request.prompt, &request.text, &fault),
        };
        for c in chunks(&out, self.config.chunk_chars) {
            if !self.config.latency.is_zero() {
                tokio::time::sleep(self.config.latency).await;
            }
            let _ = sink.send(StreamItem::Chunk(c));
        }
        Ok(out)
    }
}
