//! The layer handler: every structural and spatial operation on a workspace.
//!
//! [`Workspace`] is a plain value. Mutations happen on a private copy inside
//! the [`crate::engine::Engine`] writer, so a method that returns `Err` leaves
//! no trace. Methods push [`WorkspaceEvent`]s that the engine drains and
//! broadcasts after each committed mutation.

mod delta;
mod group;
mod shift;
mod spatial;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use delta::{MapDelta, WorkspaceDelta};
pub use group::{Group, GroupKind, GroupMember, MemberRef};
pub use shift::{Excerpt, Selection, TunnelView};
pub use spatial::{Adjacency, AnnotationKind, ComparisonAnnotation, ComparisonSession, Placement};

use crate::digest::digest16;
use crate::error::WorkspaceError;
use crate::friends::{FeedbackAnnotation, PeekPreview};
use crate::ids::*;
use crate::layer::*;
use crate::text::CharRange;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    /// Largest horizontal gap, in workspace units, at which two edges touch.
    pub adjacency_epsilon: f64,
    /// Minimum vertical overlap, as a fraction of the shorter layer's height.
    pub min_vertical_overlap: f64,
    pub default_width: f64,
    pub default_height: f64,
    /// Spacing used when placing new layers.
    pub spacing: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        WorkspaceConfig {
            adjacency_epsilon: 8.0,
            min_vertical_overlap: 0.3,
            default_width: 320.0,
            default_height: 400.0,
            spacing: 40.0,
        }
    }
}

/// Why a layer sits in the bin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum BinEntry {
    User,
    Retired { into: Vec<LayerId> },
}

/// Tag/untag target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "kebab-case")]
pub enum Target {
    Layer(LayerId),
    Group(GroupId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    Accept,
    Reject,
}

/// Partial update of the meta layer's text fields.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaUpdate {
    #[serde(default)]
    pub purpose: Option<String>,
    #[serde(default)]
    pub audience: Option<String>,
    #[serde(default)]
    pub intent: Option<String>,
    #[serde(default)]
    pub domain_requirements: Option<String>,
}

/// Notifications produced by mutations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum WorkspaceEvent {
    LayerCreated {
        layer: LayerId,
        kind: LayerKind,
        cause: String,
    },
    LayerRetired {
        layer: LayerId,
        into: Vec<LayerId>,
    },
    LayerBinned {
        layer: LayerId,
    },
    LayerRestored {
        layer: LayerId,
    },
    Edited {
        layer: LayerId,
        block: Option<BlockId>,
        words_inserted: usize,
        chars_removed: usize,
    },
    Adjacency {
        left: LayerId,
        right: LayerId,
    },
    ComparisonDestroyed {
        session: ComparisonId,
    },
    PlaceholderChanged {
        placeholder: PlaceholderId,
        layer: LayerId,
        state: PlaceholderState,
    },
    StreamChunk {
        placeholder: PlaceholderId,
        chunk: String,
    },
    ResultApplied {
        request: RequestId,
        layer: LayerId,
    },
    Delivered {
        subscription: SubscriptionId,
        request: RequestId,
    },
    ResultArchived {
        request: RequestId,
        reason: String,
    },
    LinkOrphaned {
        child: LayerId,
        parent: LayerId,
    },
    PreviewResolved {
        preview: PreviewId,
        layer: LayerId,
        accepted: bool,
    },
    /// A compile fell back to the given member order.
    OrderingInvalid {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub revision: u64,
    next_id: u64,
    pub config: WorkspaceConfig,
    pub meta: MetaLayer,
    pub layers: BTreeMap<LayerId, Layer>,
    pub placements: BTreeMap<LayerId, Placement>,
    pub groups: Vec<Group>,
    pub bin: BTreeMap<LayerId, BinEntry>,
    pub placeholders: BTreeMap<PlaceholderId, Placeholder>,
    pub comparisons: BTreeMap<ComparisonId, ComparisonSession>,
    pub annotations: BTreeMap<AnnotationId, FeedbackAnnotation>,
    pub previews: BTreeMap<PreviewId, PeekPreview>,
    /// Excerpts imported by tunneling, consumed by the next prompt on the layer.
    pub cross_context: BTreeMap<LayerId, Vec<Excerpt>>,
    pub subscriptions: BTreeMap<SubscriptionId, LayerId>,
    /// Requests whose results have been applied; each applies at most once.
    pub applied_requests: BTreeSet<RequestId>,
    #[serde(skip)]
    events: EventBuffer,
}

/// Pending notifications. Not part of the workspace's observable state, so
/// two workspaces compare equal regardless of undrained events.
#[derive(Clone, Debug, Default)]
struct EventBuffer(Vec<WorkspaceEvent>);

impl PartialEq for EventBuffer {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace::new(WorkspaceConfig::default())
    }
}

impl Workspace {
    pub fn new(config: WorkspaceConfig) -> Self {
        Workspace {
            revision: 0,
            next_id: 1,
            config,
            meta: MetaLayer::default(),
            layers: BTreeMap::new(),
            placements: BTreeMap::new(),
            groups: Vec::new(),
            bin: BTreeMap::new(),
            placeholders: BTreeMap::new(),
            comparisons: BTreeMap::new(),
            annotations: BTreeMap::new(),
            previews: BTreeMap::new(),
            cross_context: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            applied_requests: BTreeSet::new(),
            events: EventBuffer::default(),
        }
    }

    pub(crate) fn fresh(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub(crate) fn fresh_block(&mut self) -> BlockId {
        BlockId(self.fresh())
    }

    pub(crate) fn emit(&mut self, event: WorkspaceEvent) {
        self.events.0.push(event);
    }

    pub fn take_events(&mut self) -> Vec<WorkspaceEvent> {
        std::mem::take(&mut self.events.0)
    }

    pub fn pending_events(&self) -> &[WorkspaceEvent] {
        &self.events.0
    }

    // ---- lookup ----------------------------------------------------------

    pub fn layer(&self, id: LayerId) -> Result<&Layer, WorkspaceError> {
        self.layers.get(&id).ok_or(WorkspaceError::UnknownLayer(id))
    }

    pub(crate) fn layer_mut(&mut self, id: LayerId) -> Result<&mut Layer, WorkspaceError> {
        self.layers
            .get_mut(&id)
            .ok_or(WorkspaceError::UnknownLayer(id))
    }

    pub fn is_binned(&self, id: LayerId) -> bool {
        self.bin.contains_key(&id)
    }

    /// A live (not binned) writing layer, or the matching error.
    pub fn writing_layer(&self, id: LayerId) -> Result<&Layer, WorkspaceError> {
        let layer = self.layer(id)?;
        match layer.kind() {
            LayerKind::Writing => {}
            LayerKind::Document => return Err(WorkspaceError::NotEditable(id)),
            actual => {
                return Err(WorkspaceError::TypeMismatch {
                    layer: id,
                    actual,
                    expected: LayerKind::Writing,
                })
            }
        }
        if self.is_binned(id) {
            return Err(WorkspaceError::Binned(id));
        }
        Ok(layer)
    }

    pub(crate) fn writing_mut(
        &mut self,
        id: LayerId,
    ) -> Result<&mut WritingContent, WorkspaceError> {
        self.writing_layer(id)?;
        Ok(self
            .layers
            .get_mut(&id)
            .and_then(Layer::writing_mut)
            .expect("checked above"))
    }

    /// Layers currently shown on the canvas.
    pub fn visible_layers(&self) -> impl Iterator<Item = &Layer> {
        self.layers.values().filter(|l| !self.bin.contains_key(&l.id))
    }

    pub fn block_index(&self, layer: LayerId, block: BlockId) -> Result<usize, WorkspaceError> {
        self.writing_layer(layer)?
            .writing()
            .expect("writing layer")
            .blocks
            .iter()
            .position(|b| b.id == block)
            .ok_or(WorkspaceError::UnknownBlock { layer, block })
    }

    // ---- creation --------------------------------------------------------

    pub(crate) fn insert_layer(
        &mut self,
        name: String,
        content: LayerContent,
        cause: &str,
        placement: Placement,
    ) -> LayerId {
        let id = LayerId(self.fresh());
        let kind = match content {
            LayerContent::Writing(_) => LayerKind::Writing,
            LayerContent::Scratchpad(_) => LayerKind::Scratchpad,
            LayerContent::Document(_) => LayerKind::Document,
        };
        self.layers.insert(id, Layer::new(id, name, content));
        self.placements.insert(id, placement);
        self.emit(WorkspaceEvent::LayerCreated {
            layer: id,
            kind,
            cause: cause.to_string(),
        });
        id
    }

    pub(crate) fn blocks_from_drafts(&mut self, drafts: Vec<BlockDraft>) -> Vec<Block> {
        drafts
            .into_iter()
            .map(|d| {
                let id = self.fresh_block();
                Block::new(id, d.kind, vec![Span::human(d.text)])
            })
            .collect()
    }

    pub fn new_writing_layer(
        &mut self,
        name: &str,
        initial: Option<Vec<BlockDraft>>,
    ) -> Result<LayerId, WorkspaceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(WorkspaceError::EmptyName);
        }
        for d in initial.iter().flatten() {
            if let BlockKind::Heading { level } = d.kind {
                BlockKind::heading(level)?;
            }
        }
        let blocks = match initial {
            Some(drafts) if !drafts.is_empty() => self.blocks_from_drafts(drafts),
            _ => vec![Block::empty_paragraph(self.fresh_block())],
        };
        let placement = self.free_placement();
        Ok(self.insert_layer(
            name.to_string(),
            LayerContent::Writing(WritingContent {
                blocks,
                parent_link: None,
            }),
            "manual",
            placement,
        ))
    }

    /// Writing layer built from already attributed blocks (friend output).
    pub(crate) fn new_generated_layer(
        &mut self,
        name: String,
        blocks: Vec<Block>,
        cause: &str,
        placement: Placement,
    ) -> LayerId {
        self.insert_layer(
            name,
            LayerContent::Writing(WritingContent {
                blocks,
                parent_link: None,
            }),
            cause,
            placement,
        )
    }

    pub fn new_scratchpad(&mut self, name: &str) -> Result<LayerId, WorkspaceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(WorkspaceError::EmptyName);
        }
        let placement = self.free_placement();
        Ok(self.insert_layer(
            name.to_string(),
            LayerContent::Scratchpad(ScratchpadContent::default()),
            "manual",
            placement,
        ))
    }

    // ---- meta --------------------------------------------------------------

    pub fn update_meta(&mut self, update: MetaUpdate) {
        let MetaUpdate {
            purpose,
            audience,
            intent,
            domain_requirements,
        } = update;
        if let Some(v) = purpose {
            self.meta.purpose = v;
        }
        if let Some(v) = audience {
            self.meta.audience = v;
        }
        if let Some(v) = intent {
            self.meta.intent = v;
        }
        if let Some(v) = domain_requirements {
            self.meta.domain_requirements = v;
        }
    }

    pub fn attach_reference(&mut self, title: &str, text: String) -> Result<DocId, WorkspaceError> {
        if text.len() > REFERENCE_SIZE_CAP {
            return Err(WorkspaceError::ReferenceTooLarge {
                size: text.len(),
                cap: REFERENCE_SIZE_CAP,
            });
        }
        let doc = DocId(self.fresh());
        self.meta.attach(doc, title.to_string(), text)?;
        Ok(doc)
    }

    // ---- editing -----------------------------------------------------------

    pub fn apply_edit(&mut self, layer: LayerId, edit: &Edit) -> Result<EditOutcome, WorkspaceError> {
        let fresh = BlockId(self.next_id);
        let content = self.writing_mut(layer)?;
        let mut used_fresh = false;
        let outcome = content.apply_edit(layer, edit, || {
            used_fresh = true;
            fresh
        })?;
        if used_fresh {
            self.next_id += 1;
        }
        if let Edit::RemoveBlock { block } = edit {
            self.reject_open_placeholders_on_block(layer, *block, "anchor block removed");
        }
        self.layer_mut(layer)?.touch();
        self.refresh_links(layer);
        self.emit(WorkspaceEvent::Edited {
            layer,
            block: outcome.block,
            words_inserted: outcome.words_inserted,
            chars_removed: outcome.chars_removed,
        });
        Ok(outcome)
    }

    /// Re-check sub-layer anchors in `parent` after its text changed.
    fn refresh_links(&mut self, parent: LayerId) {
        let Ok(parent_layer) = self.layer(parent) else {
            return;
        };
        let Some(content) = parent_layer.writing() else {
            return;
        };
        let anchored: BTreeMap<LayerId, (BlockId, CharRange)> = content
            .blocks
            .iter()
            .flat_map(|b| {
                let mut pos = 0;
                let mut found = Vec::new();
                for s in &b.spans {
                    let len = s.char_len();
                    if let Some(child) = s.link {
                        found.push((child, (b.id, CharRange::new(pos, pos + len))));
                    }
                    pos += len;
                }
                found
            })
            .fold(BTreeMap::new(), |mut acc, (child, (block, r))| {
                acc.entry(child)
                    .and_modify(|(_, range): &mut (BlockId, CharRange)| {
                        range.end = r.end.max(range.end)
                    })
                    .or_insert((block, r));
                acc
            });
        let children: Vec<LayerId> = self
            .layers
            .values()
            .filter(|l| {
                l.writing()
                    .and_then(|w| w.parent_link.as_ref())
                    .is_some_and(|p| p.parent == parent && !p.orphaned)
            })
            .map(|l| l.id)
            .collect();
        for child in children {
            let link = self
                .layers
                .get_mut(&child)
                .and_then(Layer::writing_mut)
                .and_then(|w| w.parent_link.as_mut())
                .expect("filtered above");
            match anchored.get(&child) {
                Some((block, range)) => {
                    link.block = *block;
                    link.range = *range;
                }
                None => {
                    link.orphaned = true;
                    self.emit(WorkspaceEvent::LinkOrphaned { child, parent });
                }
            }
        }
    }

    // ---- placeholders ------------------------------------------------------

    pub fn placeholder(&self, id: PlaceholderId) -> Result<&Placeholder, WorkspaceError> {
        self.placeholders
            .get(&id)
            .ok_or(WorkspaceError::UnknownPlaceholder(id))
    }

    fn open_placeholder_on(&self, layer: LayerId, block: BlockId) -> Option<PlaceholderId> {
        self.placeholders
            .values()
            .find(|p| p.layer == layer && p.block == block && p.is_open())
            .map(|p| p.id)
    }

    /// Open a placeholder at `(block, offset)`; with `new_block_after`, a fresh
    /// empty slot block is created after that block and anchors the placeholder.
    pub(crate) fn open_placeholder(
        &mut self,
        layer: LayerId,
        block: BlockId,
        offset: usize,
        new_block_after: bool,
        task: TaskId,
        origin: Origin,
    ) -> Result<PlaceholderId, WorkspaceError> {
        let idx = self.block_index(layer, block)?;
        let (anchor, offset, snapshot) = if new_block_after {
            let slot = Block::placeholder_slot(self.fresh_block());
            let anchor = slot.id;
            let snapshot = slot.clone();
            self.writing_mut(layer)?.blocks.insert(idx + 1, slot);
            (anchor, 0, snapshot)
        } else {
            if let Some(_busy) = self.open_placeholder_on(layer, block) {
                return Err(WorkspaceError::PlaceholderBusy { layer, block });
            }
            let b = &self.writing_layer(layer)?.writing().expect("writing").blocks[idx];
            b.check_range(CharRange::new(offset, offset))
                .map_err(|_| WorkspaceError::BadAnchor(format!("offset {offset} outside {block}")))?;
            (block, offset, b.clone())
        };
        let id = PlaceholderId(self.fresh());
        self.placeholders.insert(
            id,
            Placeholder {
                id,
                layer,
                block: anchor,
                offset,
                task,
                origin,
                state: PlaceholderState::Pending,
                request: None,
                snapshot,
                created_block: new_block_after,
                streamed: String::new(),
                note: None,
            },
        );
        self.emit(WorkspaceEvent::PlaceholderChanged {
            placeholder: id,
            layer,
            state: PlaceholderState::Pending,
        });
        Ok(id)
    }

    fn set_placeholder_state(
        &mut self,
        id: PlaceholderId,
        next: PlaceholderState,
    ) -> Result<(), WorkspaceError> {
        let p = self
            .placeholders
            .get_mut(&id)
            .ok_or(WorkspaceError::UnknownPlaceholder(id))?;
        p.transition(next)?;
        let layer = p.layer;
        self.emit(WorkspaceEvent::PlaceholderChanged {
            placeholder: id,
            layer,
            state: next,
        });
        Ok(())
    }

    pub(crate) fn stream_into(&mut self, id: PlaceholderId, chunk: &str) -> Result<(), WorkspaceError> {
        let state = self.placeholder(id)?.state;
        match state {
            PlaceholderState::Pending => self.set_placeholder_state(id, PlaceholderState::Streaming)?,
            PlaceholderState::Streaming => {}
            // Cancelled or already finished: late chunks are ignored.
            _ => return Ok(()),
        }
        self.placeholders
            .get_mut(&id)
            .expect("checked")
            .streamed
            .push_str(chunk);
        self.emit(WorkspaceEvent::StreamChunk {
            placeholder: id,
            chunk: chunk.to_string(),
        });
        Ok(())
    }

    /// Land the final generated text in the placeholder's anchor.
    pub(crate) fn fill_placeholder(&mut self, id: PlaceholderId, text: &str) -> Result<(), WorkspaceError> {
        if self.placeholder(id)?.state == PlaceholderState::Pending {
            self.set_placeholder_state(id, PlaceholderState::Streaming)?;
        }
        let p = self.placeholder(id)?.clone();
        if p.state != PlaceholderState::Streaming {
            return Err(WorkspaceError::WrongState {
                id,
                actual: p.state,
                expected: PlaceholderState::Streaming,
            });
        }
        let idx = self.block_index(p.layer, p.block)?;
        let mut span = Span::new(text, SpanAttribution::new(p.origin.clone(), false));
        span.placeholder = Some(id);
        let block = &mut self.writing_mut(p.layer)?.blocks[idx];
        let offset = p.offset.min(block.char_len());
        block.insert_spans(offset, vec![span]);
        self.layer_mut(p.layer)?.touch();
        self.set_placeholder_state(id, PlaceholderState::Filled)
    }

    pub fn resolve_placeholder(
        &mut self,
        id: PlaceholderId,
        resolution: Resolution,
    ) -> Result<(), WorkspaceError> {
        let p = self.placeholder(id)?.clone();
        if p.state != PlaceholderState::Filled {
            return Err(WorkspaceError::WrongState {
                id,
                actual: p.state,
                expected: PlaceholderState::Filled,
            });
        }
        match resolution {
            Resolution::Accept => {
                let idx = self.block_index(p.layer, p.block)?;
                let block = &mut self.writing_mut(p.layer)?.blocks[idx];
                for span in block.spans.iter_mut().filter(|s| s.placeholder == Some(id)) {
                    span.placeholder = None;
                    span.attribution.accept();
                }
                block.normalize();
                self.set_placeholder_state(id, PlaceholderState::Accepted)
            }
            Resolution::Reject => {
                self.roll_back(&p)?;
                self.set_placeholder_state(id, PlaceholderState::Rejected)
            }
        }
    }

    fn roll_back(&mut self, p: &Placeholder) -> Result<(), WorkspaceError> {
        let Ok(content) = self.writing_mut(p.layer) else {
            // Layer gone or binned; nothing to restore into.
            return Ok(());
        };
        if let Some(idx) = content.blocks.iter().position(|b| b.id == p.block) {
            if p.created_block {
                content.blocks.remove(idx);
            } else {
                content.blocks[idx] = p.snapshot.clone();
            }
        }
        self.layer_mut(p.layer)?.touch();
        Ok(())
    }

    /// Reject an open placeholder whose generation failed or was cancelled.
    pub fn fail_placeholder(&mut self, id: PlaceholderId, note: &str) -> Result<(), WorkspaceError> {
        let p = self.placeholder(id)?.clone();
        match p.state {
            PlaceholderState::Pending | PlaceholderState::Streaming => {}
            PlaceholderState::Filled => return self.resolve_placeholder(id, Resolution::Reject),
            actual => {
                return Err(WorkspaceError::WrongState {
                    id,
                    actual,
                    expected: PlaceholderState::Streaming,
                })
            }
        }
        self.roll_back(&p)?;
        self.placeholders.get_mut(&id).expect("exists").note = Some(note.to_string());
        self.set_placeholder_state(id, PlaceholderState::Rejected)
    }

    fn reject_open_placeholders_on_block(&mut self, layer: LayerId, block: BlockId, note: &str) {
        let open: Vec<PlaceholderId> = self
            .placeholders
            .values()
            .filter(|p| p.layer == layer && p.block == block && p.is_open())
            .map(|p| p.id)
            .collect();
        for id in open {
            let p = self.placeholders.get_mut(&id).expect("exists");
            p.state = PlaceholderState::Rejected;
            p.note = Some(note.to_string());
            self.emit(WorkspaceEvent::PlaceholderChanged {
                placeholder: id,
                layer,
                state: PlaceholderState::Rejected,
            });
        }
    }

    fn close_placeholders_on_layer(&mut self, layer: LayerId, note: &str) {
        let open: Vec<PlaceholderId> = self
            .placeholders
            .values()
            .filter(|p| p.layer == layer && !p.state.is_terminal())
            .map(|p| p.id)
            .collect();
        for id in open {
            let p = self.placeholders.get_mut(&id).expect("exists");
            p.state = PlaceholderState::Rejected;
            p.note = Some(note.to_string());
            self.emit(WorkspaceEvent::PlaceholderChanged {
                placeholder: id,
                layer,
                state: PlaceholderState::Rejected,
            });
        }
    }

    // ---- bin -------------------------------------------------------------

    pub(crate) fn retire(&mut self, layer: LayerId, into: Vec<LayerId>) {
        self.detach_from_groups(layer);
        self.close_placeholders_on_layer(layer, "layer retired");
        self.bin.insert(layer, BinEntry::Retired { into: into.clone() });
        self.drop_comparisons_with(layer);
        self.emit(WorkspaceEvent::LayerRetired { layer, into });
    }

    pub fn bin_layer(&mut self, layer: LayerId) -> Result<(), WorkspaceError> {
        let l = self.layer(layer)?;
        if self.is_binned(l.id) {
            return Err(WorkspaceError::Binned(layer));
        }
        self.detach_from_groups(layer);
        self.close_placeholders_on_layer(layer, "layer binned");
        self.bin.insert(layer, BinEntry::User);
        self.drop_comparisons_with(layer);
        self.emit(WorkspaceEvent::LayerBinned { layer });
        Ok(())
    }

    pub fn restore_layer(&mut self, layer: LayerId) -> Result<(), WorkspaceError> {
        self.layer(layer)?;
        if self.bin.remove(&layer).is_none() {
            return Err(WorkspaceError::NotBinned(layer));
        }
        self.emit(WorkspaceEvent::LayerRestored { layer });
        Ok(())
    }

    /// Whether results addressed to `layer` can still be applied.
    pub fn accepts_results(&self, layer: LayerId) -> bool {
        self.layers.contains_key(&layer) && !self.is_binned(layer)
    }

    /// Record that `request` mutated `layer`, and notify the layer's listeners.
    pub(crate) fn mark_applied(&mut self, request: RequestId, layer: LayerId) -> Result<(), WorkspaceError> {
        if !self.applied_requests.insert(request) {
            return Err(WorkspaceError::Precondition(format!("{request} was already applied")));
        }
        self.emit(WorkspaceEvent::ResultApplied { request, layer });
        let listeners: Vec<SubscriptionId> = self
            .layers
            .get(&layer)
            .map(|l| l.listeners.iter().copied().collect())
            .unwrap_or_default();
        for subscription in listeners {
            self.emit(WorkspaceEvent::Delivered {
                subscription,
                request,
            });
        }
        Ok(())
    }

    // ---- tags & subscriptions ------------------------------------------------

    pub fn tag(&mut self, target: Target, label: &str) -> Result<(), WorkspaceError> {
        let label = label.trim();
        if label.is_empty() {
            return Err(WorkspaceError::EmptyLabel);
        }
        self.tags_mut(target)?.insert(label.to_string());
        Ok(())
    }

    pub fn untag(&mut self, target: Target, label: &str) -> Result<(), WorkspaceError> {
        self.tags_mut(target)?.remove(label.trim());
        Ok(())
    }

    fn tags_mut(&mut self, target: Target) -> Result<&mut BTreeSet<String>, WorkspaceError> {
        match target {
            Target::Layer(id) => self
                .layers
                .get_mut(&id)
                .map(|l| &mut l.tags)
                .ok_or(WorkspaceError::UnknownTarget(id.to_string())),
            Target::Group(id) => self
                .group_mut(id)
                .map(|g| &mut g.tags)
                .map_err(|_| WorkspaceError::UnknownTarget(id.to_string())),
        }
    }

    pub fn subscribe(&mut self, layer: LayerId) -> Result<SubscriptionId, WorkspaceError> {
        self.layer(layer)?;
        let id = SubscriptionId(self.fresh());
        self.layer_mut(layer)?.listeners.insert(id);
        self.subscriptions.insert(id, layer);
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) -> Result<(), WorkspaceError> {
        let layer = self
            .subscriptions
            .remove(&id)
            .ok_or(WorkspaceError::UnknownSubscription(id))?;
        if let Some(l) = self.layers.get_mut(&layer) {
            l.listeners.remove(&id);
        }
        Ok(())
    }

    // ---- fold ---------------------------------------------------------------

    fn foldable(&self, layer: LayerId) -> Result<&Layer, WorkspaceError> {
        let l = self.layer(layer)?;
        if l.kind() == LayerKind::Document {
            return Err(WorkspaceError::NotEditable(layer));
        }
        Ok(l)
    }

    /// Cached summary text if it still matches the layer content.
    pub fn cached_fold_summary(&self, layer: LayerId) -> Result<Option<String>, WorkspaceError> {
        let l = self.foldable(layer)?;
        let digest = digest16(&l.plain_text());
        Ok(l.fold_summary
            .as_ref()
            .filter(|s| s.digest == digest)
            .map(|s| s.text.clone()))
    }

    pub fn fold(&mut self, layer: LayerId, summary: String) -> Result<(), WorkspaceError> {
        let digest = digest16(&self.foldable(layer)?.plain_text());
        let l = self.layer_mut(layer)?;
        l.folded = true;
        l.fold_summary = Some(FoldSummary {
            text: summary,
            stale: false,
            digest,
        });
        Ok(())
    }

    pub fn unfold(&mut self, layer: LayerId) -> Result<(), WorkspaceError> {
        self.foldable(layer)?;
        let l = self.layer_mut(layer)?;
        l.folded = false;
        if let Some(s) = l.fold_summary.as_mut() {
            s.stale = true;
        }
        Ok(())
    }

    // ---- invariants -------------------------------------------------------------

    /// Every structural invariant that must hold between mutations. Returns a
    /// description of each violation.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();

        let mut seen = BTreeSet::new();
        for g in &self.groups {
            g.check(&mut seen, &mut out);
        }
        for id in &seen {
            if !self.layers.contains_key(id) {
                out.push(format!("group references missing layer {id}"));
            }
            if self.bin.contains_key(id) {
                out.push(format!("binned layer {id} is grouped"));
            }
        }

        let mut open = BTreeSet::new();
        for p in self.placeholders.values().filter(|p| p.is_open()) {
            if !open.insert((p.layer, p.block)) {
                out.push(format!("two open placeholders on {}/{}", p.layer, p.block));
            }
        }

        let mut zs = BTreeSet::new();
        for (id, p) in &self.placements {
            if !self.layers.contains_key(id) {
                out.push(format!("placement for missing layer {id}"));
            }
            if !(p.width > 0.0 && p.height > 0.0) {
                out.push(format!("non-positive extent on {id}"));
            }
            if !zs.insert(p.z) {
                out.push(format!("duplicate z-order {}", p.z));
            }
        }

        for layer in self.layers.values() {
            if let Some(w) = layer.writing() {
                let mut ids = BTreeSet::new();
                for b in &w.blocks {
                    if !ids.insert(b.id) {
                        out.push(format!("duplicate block {} in {}", b.id, layer.id));
                    }
                    let hosts_open = open.contains(&(layer.id, b.id));
                    if b.spans.is_empty() && !hosts_open {
                        out.push(format!("block {} in {} has no spans", b.id, layer.id));
                    }
                }
                if let Some(link) = &w.parent_link {
                    if !self.layers.contains_key(&link.parent) {
                        out.push(format!("{} links to missing parent {}", layer.id, link.parent));
                    }
                }
            }
            if !layer.folded {
                if let Some(s) = &layer.fold_summary {
                    if !s.stale {
                        out.push(format!("unfolded {} has a fresh fold summary", layer.id));
                    }
                }
            }
            if let Some(doc) = layer.document() {
                if doc.hyper_refs.len() != doc.span_count() {
                    out.push(format!("document {} has unreferenced spans", layer.id));
                }
                for addr in doc.addresses() {
                    if !doc.hyper_refs.contains_key(&addr) {
                        out.push(format!("document {} span {addr} lacks a hyper-ref", layer.id));
                    }
                }
            }
            for span in layer.view_blocks().iter().flat_map(|b| b.spans.iter()) {
                if let Origin::Friend(f) = span.attribution.origin() {
                    if f.as_str().is_empty() {
                        out.push(format!("empty friend id in {}", layer.id));
                    }
                }
            }
        }

        for session in self.comparisons.values() {
            if !self.adjacent(session.left, session.right) {
                out.push(format!("comparison {} outlived adjacency", session.id));
            }
        }
        for (sub, layer) in &self.subscriptions {
            if !self.layers.get(layer).is_some_and(|l| l.listeners.contains(sub)) {
                out.push(format!("subscription {sub} not registered on {layer}"));
            }
        }
        out
    }
}
