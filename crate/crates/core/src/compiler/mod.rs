//! Compile layers into an immutable document with span-level provenance.

mod export;
#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_markup, export_provenance, export_text};

use crate::error::WorkspaceError;
use crate::gateway::{Broadcaster, Delivery, GenerationRequest, RequestTarget, ResultStatus};
use crate::ids::{BlockId, LayerId, TaskId};
use crate::layer::*;
use crate::prompt::{compose, ComposeInput, ComposeOptions, Parsed, PromptError, TaskRegistry};
use crate::text::{word_count, CharRange};
use crate::workspace::{Workspace, WorkspaceEvent};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Directive {
    AudienceVersion,
    ConsistencyEdit,
    TargetLength { words: usize },
}

impl Directive {
    pub fn label(&self) -> &'static str {
        match self {
            Directive::AudienceVersion => "audience-version",
            Directive::ConsistencyEdit => "consistency-edit",
            Directive::TargetLength { .. } => "target-length",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompileMode {
    /// Members in the order given.
    #[default]
    Manual,
    /// Members are an unordered set; the order-stack task proposes one.
    LlmOrder,
}

/// Bridge text requested between two members that end up next to each other.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub after: LayerId,
    pub before: LayerId,
    #[serde(default)]
    pub prompt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileSpec {
    pub members: Vec<LayerId>,
    #[serde(default)]
    pub mode: CompileMode,
    #[serde(default)]
    pub directives: Vec<Directive>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
    #[serde(default)]
    pub name: Option<String>,
    /// Accepted relative error of a target-length compile.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.1
}

impl CompileSpec {
    pub fn manual(members: Vec<LayerId>) -> Self {
        CompileSpec {
            members,
            mode: CompileMode::Manual,
            directives: Vec::new(),
            transitions: Vec::new(),
            name: None,
            tolerance: default_tolerance(),
        }
    }

    pub fn target_words(&self) -> Option<usize> {
        self.directives.iter().find_map(|d| match d {
            Directive::TargetLength { words } => Some(*words),
            _ => None,
        })
    }
}

/// Largest number of directive rounds for a target-length compile.
pub const MAX_ROUNDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{task} failed ({status:?}): {error}")]
    Generation {
        task: TaskId,
        status: ResultStatus,
        error: String,
    },
}

impl CompileError {
    pub fn code(&self) -> &'static str {
        match self {
            CompileError::Workspace(e) => e.code(),
            CompileError::Prompt(e) => e.code(),
            CompileError::Generation { status, .. } => match status {
                ResultStatus::SchemaInvalid => "schema-invalid",
                ResultStatus::Timeout => "timeout",
                _ => "backend-error",
            },
        }
    }
}

/// Members that take part, in spec order, plus notices about the rest.
pub fn eligible_members(w: &Workspace, spec: &CompileSpec) -> Result<(Vec<LayerId>, Vec<String>), WorkspaceError> {
    if spec.members.is_empty() {
        return Err(WorkspaceError::EmptyCompile);
    }
    if spec.target_words() == Some(0) {
        return Err(WorkspaceError::Precondition("target length must be positive".into()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut notices = Vec::new();
    for &id in &spec.members {
        let l = w.layer(id)?;
        if l.kind() == LayerKind::Document {
            return Err(WorkspaceError::DocumentLayerMember(id));
        }
        if !seen.insert(id) {
            return Err(WorkspaceError::DuplicateMember);
        }
        if w.is_binned(id) {
            notices.push(format!("{id} is in the bin and was left out"));
        } else if l.folded {
            notices.push(format!("{id} is folded and was left out"));
        } else {
            out.push(id);
        }
    }
    if out.is_empty() {
        return Err(WorkspaceError::EmptyCompile);
    }
    Ok((out, notices))
}

/// `proposed` if it is a bijection over `members`.
pub fn check_permutation(members: &[LayerId], proposed: &[LayerId]) -> Result<Vec<LayerId>, String> {
    let want: BTreeSet<_> = members.iter().collect();
    let got: BTreeSet<_> = proposed.iter().collect();
    if proposed.len() != members.len() || got.len() != proposed.len() || want != got {
        let shown: Vec<String> = proposed.iter().map(ToString::to_string).collect();
        return Err(format!("ordering-invalid: [{}] is not a permutation of the members", shown.join(", ")));
    }
    Ok(proposed.to_vec())
}

/// Everything the document is assembled from.
#[derive(Clone, Debug, Default)]
pub struct Assembly {
    pub order: Vec<LayerId>,
    /// Member layers as they were when the compile started.
    pub layers: BTreeMap<LayerId, Layer>,
    /// Directive output keyed by source block.
    pub replacements: BTreeMap<(LayerId, BlockId), String>,
    /// Generated text placed before the keyed member.
    pub transitions: BTreeMap<LayerId, String>,
    pub directives: Vec<Directive>,
    pub notices: Vec<String>,
}

impl Assembly {
    fn blocks(&self) -> impl Iterator<Item = (LayerId, Block)> + '_ {
        self.order
            .iter()
            .flat_map(|id| self.layers[id].view_blocks().into_iter().map(move |b| (*id, b)))
    }

    /// Member layers with replacements applied, in order.
    pub fn edited_layers(&self) -> Vec<Layer> {
        self.order
            .iter()
            .map(|id| {
                let mut l = self.layers[id].clone();
                if let Some(w) = l.writing_mut() {
                    for b in &mut w.blocks {
                        if let Some(t) = self.replacements.get(&(*id, b.id)) {
                            let attr = b.spans.first().map_or_else(SpanAttribution::human, |s| s.attribution.clone());
                            b.spans = vec![Span::new(t.clone(), attr)];
                        }
                    }
                }
                l
            })
            .collect()
    }

    pub fn word_count(&self) -> usize {
        let body: usize = self
            .blocks()
            .map(|(l, b)| match self.replacements.get(&(l, b.id)) {
                Some(t) => word_count(t),
                None => b.word_count(),
            })
            .sum();
        body + self.transitions.values().map(|t| word_count(t)).sum::<usize>()
    }

    /// Lay out the document content. Pure: ids for new blocks come from
    /// `fresh`.
    pub fn build(&self, mut fresh: impl FnMut() -> BlockId) -> DocumentContent {
        let mut blocks = Vec::new();
        let mut refs = BTreeMap::new();
        for id in &self.order {
            if let Some(t) = self.transitions.get(id) {
                let bi = blocks.len();
                blocks.push(Block::paragraph(fresh(), t.clone(), SpanAttribution::new(Origin::Transition, true)));
                refs.insert(SpanAddress::new(bi, 0), HyperRef::CompilerEdit);
            }
            for b in self.layers[id].view_blocks() {
                let bi = blocks.len();
                if let Some(t) = self.replacements.get(&(*id, b.id)) {
                    refs.insert(
                        SpanAddress::new(bi, 0),
                        HyperRef::Source(SourceRef {
                            layer: *id,
                            block: b.id,
                            range: CharRange::new(0, b.char_len()),
                            kind: RefKind::CompilerEdit,
                        }),
                    );
                    let mut nb = Block::new(
                        fresh(),
                        b.kind,
                        vec![Span::new(t.clone(), SpanAttribution::new(Origin::CompilerEdit, true))],
                    );
                    nb.source = Some(BlockSource { layer: *id, block: b.id });
                    blocks.push(nb);
                    continue;
                }
                let mut pos = 0;
                for (si, s) in b.spans.iter().enumerate() {
                    let len = s.char_len();
                    refs.insert(
                        SpanAddress::new(bi, si),
                        HyperRef::Source(SourceRef {
                            layer: *id,
                            block: b.id,
                            range: CharRange::new(pos, pos + len),
                            kind: RefKind::Verbatim,
                        }),
                    );
                    pos += len;
                }
                // Links and placeholder marks belong to the source layer.
                let spans = b
                    .spans
                    .iter()
                    .map(|s| Span::new(s.text.clone(), s.attribution.clone()))
                    .collect();
                blocks.push(Block {
                    id: fresh(),
                    kind: b.kind,
                    spans,
                    source: Some(BlockSource { layer: *id, block: b.id }),
                });
            }
        }
        let index = blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| match b.kind {
                BlockKind::Heading { level } => Some(SectionEntry {
                    title: b.text(),
                    level,
                    block: i,
                }),
                _ => None,
            })
            .collect();
        DocumentContent {
            index,
            blocks,
            hyper_refs: refs,
            created_from: self.order.clone(),
            directives_used: self.directives.clone(),
            notices: self.notices.clone(),
        }
    }
}

impl Workspace {
    /// Insert the compiled document as a new layer.
    pub fn insert_document(&mut self, name: &str, assembly: &Assembly) -> Result<LayerId, WorkspaceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(WorkspaceError::EmptyName);
        }
        let content = assembly.build(|| self.fresh_block());
        for n in &assembly.notices {
            if n.starts_with("ordering-invalid") {
                self.emit(WorkspaceEvent::OrderingInvalid { reason: n.clone() });
            }
        }
        let placement = self.free_placement();
        Ok(self.insert_layer(name.to_string(), LayerContent::Document(content), "compile", placement))
    }

    pub fn traceback(&self, document: LayerId, address: SpanAddress) -> Result<Traceback, WorkspaceError> {
        let l = self.layer(document)?;
        let doc = l.document().ok_or(WorkspaceError::TypeMismatch {
            layer: document,
            actual: l.kind(),
            expected: LayerKind::Document,
        })?;
        doc.traceback(address)
    }
}

/// Inputs for [`compile`].
pub struct CompileContext<'a> {
    pub broadcaster: &'a Broadcaster,
    pub tasks: &'a TaskRegistry,
    pub options: ComposeOptions,
    pub now_ms: u64,
}

async fn ask(cx: &CompileContext<'_>, task: &str, input: &ComposeInput<'_>) -> Result<Parsed, CompileError> {
    let knowledge = cx.tasks.lookup(task)?;
    let prompt = compose(knowledge, input, &cx.options)?;
    let origin = input.layers.first().map_or(LayerId(0), |l| l.id);
    let b = cx.broadcaster;
    let request = GenerationRequest {
        id: b.next_request_id(),
        origin: (origin, knowledge.id.clone()),
        prompt,
        issued_at_ms: cx.now_ms,
    };
    match b.dispatch(request, RequestTarget::Caller).await {
        Delivery::Returned { parts, .. } => Ok(parts),
        Delivery::Failed { status, error, .. } => Err(CompileError::Generation {
            task: TaskId::new(task),
            status,
            error,
        }),
        other => Err(CompileError::Generation {
            task: TaskId::new(task),
            status: ResultStatus::BackendError,
            error: format!("unexpected delivery {other:?}"),
        }),
    }
}

/// Run a compile end to end and insert the resulting document layer.
pub async fn compile(cx: &CompileContext<'_>, spec: &CompileSpec) -> Result<LayerId, CompileError> {
    let engine = cx.broadcaster.engine();
    let snap = engine.snapshot();
    let (members, mut notices) = eligible_members(&snap, spec)?;
    let layers: BTreeMap<LayerId, Layer> = members.iter().map(|id| (*id, snap.layers[id].clone())).collect();
    let ordered = |ids: &[LayerId]| ids.iter().map(|id| layers[id].clone()).collect::<Vec<_>>();

    let order = match spec.mode {
        CompileMode::Manual => members.clone(),
        CompileMode::LlmOrder if members.len() < 2 => members.clone(),
        CompileMode::LlmOrder => {
            let ls = ordered(&members);
            let input = ComposeInput::new(&snap.meta, &ls);
            let proposed = match ask(cx, "order-stack", &input).await {
                Ok(Parsed::Ordering(ids)) => check_permutation(&members, &ids),
                Ok(other) => Err(format!("ordering-invalid: unexpected parts {other:?}")),
                Err(e) => Err(format!("ordering-invalid: {e}")),
            };
            proposed.unwrap_or_else(|reason| {
                log::warn!("{reason}; keeping the given order");
                notices.push(reason);
                members.clone()
            })
        }
    };

    let mut asm = Assembly {
        order: order.clone(),
        layers: layers.clone(),
        directives: spec.directives.clone(),
        notices,
        ..Assembly::default()
    };

    for pair in order.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let Some(t) = spec.transitions.iter().find(|t| t.after == a && t.before == b) else {
            continue;
        };
        let ls = ordered(&[a, b]);
        let Some(last) = ls[0].view_blocks().last().map(|b| (b.id, b.char_len())) else {
            asm.notices.push(format!("no transition after empty {a}"));
            continue;
        };
        let mut input = ComposeInput::new(&snap.meta, &ls);
        input.anchor = Some(last);
        input.user_prompt = t.prompt.as_deref().unwrap_or("");
        match ask(cx, "transition", &input).await? {
            Parsed::Text(text) => {
                asm.transitions.insert(b, text);
            }
            other => asm.notices.push(format!("transition {a}->{b} ignored: {other:?}")),
        }
    }

    if !spec.directives.is_empty() {
        let target = spec.target_words();
        let labels: Vec<&str> = spec.directives.iter().map(Directive::label).collect();
        let params = vec![("directives".to_string(), labels.join(", "))];
        let within = |asm: &Assembly| {
            target.is_none_or(|t| (asm.word_count() as f64 - t as f64).abs() <= spec.tolerance * t as f64)
        };
        let only_length = spec.directives.iter().all(|d| matches!(d, Directive::TargetLength { .. }));
        for round in 0..MAX_ROUNDS {
            if only_length && within(&asm) {
                break;
            }
            let ls = asm.edited_layers();
            let mut input = ComposeInput::new(&snap.meta, &ls);
            input.params = &params;
            input.target_words = target;
            let Parsed::Replacements(parts) = ask(cx, "compile-directives", &input).await? else {
                return Err(CompileError::Generation {
                    task: TaskId::new("compile-directives"),
                    status: ResultStatus::SchemaInvalid,
                    error: "expected block replacements".into(),
                });
            };
            let mut progressed = false;
            for p in parts {
                let known = layers
                    .get(&p.layer)
                    .is_some_and(|l| l.view_blocks().iter().any(|b| b.id == p.block));
                if !known {
                    asm.notices.push(format!("replacement for unknown block {} {} dropped", p.layer, p.block));
                    continue;
                }
                let prev = asm.replacements.insert((p.layer, p.block), p.text.clone());
                progressed |= prev.as_deref() != Some(p.text.as_str());
            }
            if target.is_none() || within(&asm) {
                break;
            }
            if !progressed {
                log::info!("target-length round {round} changed nothing");
                break;
            }
        }
        if let Some(t) = target {
            if !within(&asm) {
                asm.notices.push(format!(
                    "target length {t} not reached: document has {} words",
                    asm.word_count()
                ));
            }
        }
    }

    let name = spec.name.clone().unwrap_or_else(|| "Compiled document".into());
    let id = engine
        .mutate_async(move |w| w.insert_document(&name, &asm))
        .await?;
    Ok(id)
}
