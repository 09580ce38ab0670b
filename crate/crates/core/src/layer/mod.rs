//! Layer primitives and the attributed block/span content model.
//!
//! A layer's text is a list of [`Block`]s; each block is a list of [`Span`]s
//! and every span remembers who produced it. Spans may be split, shortened or
//! merged with identically attributed neighbours, but a span's origin is
//! fixed at creation.

mod document;
mod edit;
mod meta;
mod placeholder;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use document::{
    DocumentContent, HyperRef, RefKind, SectionEntry, SourceRef, SpanAddress, Traceback,
};
pub use edit::{Edit, EditOutcome};
pub use meta::{ExternalReference, MetaLayer, REFERENCE_SIZE_CAP};
pub use placeholder::{Placeholder, PlaceholderState};

use crate::error::WorkspaceError;
use crate::ids::{BlockId, DocId, FriendId, LayerId, PlaceholderId, SubscriptionId};
use crate::text::{self, CharRange};

/// Who produced a span of text.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "friend", rename_all = "kebab-case")]
pub enum Origin {
    Human,
    Friend(FriendId),
    CompilerEdit,
    Transition,
}

impl Origin {
    pub fn is_human(&self) -> bool {
        matches!(self, Origin::Human)
    }
}

/// Attribution carried by every span. The origin cannot be changed once the
/// attribution exists; only the `accepted` flag moves.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanAttribution {
    origin: Origin,
    accepted: bool,
}

impl SpanAttribution {
    pub fn new(origin: Origin, accepted: bool) -> Self {
        SpanAttribution { origin, accepted }
    }

    pub fn human() -> Self {
        SpanAttribution::new(Origin::Human, true)
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    pub fn accepted(&self) -> bool {
        self.accepted
    }

    pub fn accept(&mut self) {
        self.accepted = true;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub text: String,
    pub attribution: SpanAttribution,
    /// Set when this text anchors a sub-layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LayerId>,
    /// Set while the text is an unresolved generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placeholder: Option<PlaceholderId>,
}

impl Span {
    pub fn new(text: impl Into<String>, attribution: SpanAttribution) -> Self {
        Span {
            text: text.into(),
            attribution,
            link: None,
            placeholder: None,
        }
    }

    pub fn human(text: impl Into<String>) -> Self {
        Span::new(text, SpanAttribution::human())
    }

    pub fn char_len(&self) -> usize {
        text::char_len(&self.text)
    }

    fn mergeable_with(&self, other: &Span) -> bool {
        self.attribution == other.attribution
            && self.link == other.link
            && self.placeholder == other.placeholder
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BlockKind {
    Paragraph,
    Heading { level: u8 },
    CommentAnchor,
}

impl BlockKind {
    pub const MAX_HEADING_LEVEL: u8 = 3;

    pub fn heading(level: u8) -> Result<Self, WorkspaceError> {
        if (1..=Self::MAX_HEADING_LEVEL).contains(&level) {
            Ok(BlockKind::Heading { level })
        } else {
            Err(WorkspaceError::Precondition(format!(
                "heading level {level} outside 1..=3"
            )))
        }
    }

    pub fn label(&self) -> String {
        match self {
            BlockKind::Paragraph => "paragraph".into(),
            BlockKind::Heading { level } => format!("heading {level}"),
            BlockKind::CommentAnchor => "comment".into(),
        }
    }
}

/// Where an imported block was copied from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSource {
    pub layer: LayerId,
    pub block: BlockId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub kind: BlockKind,
    pub spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<BlockSource>,
}

impl Block {
    pub fn new(id: BlockId, kind: BlockKind, spans: Vec<Span>) -> Self {
        let mut block = Block {
            id,
            kind,
            spans,
            source: None,
        };
        block.normalize();
        block
    }

    pub fn empty_paragraph(id: BlockId) -> Self {
        Block::new(id, BlockKind::Paragraph, Vec::new())
    }

    pub fn paragraph(id: BlockId, text: impl Into<String>, attribution: SpanAttribution) -> Self {
        Block::new(id, BlockKind::Paragraph, vec![Span::new(text, attribution)])
    }

    /// A block with no spans at all; only valid while it hosts an open placeholder.
    pub fn placeholder_slot(id: BlockId) -> Self {
        Block {
            id,
            kind: BlockKind::Paragraph,
            spans: Vec::new(),
            source: None,
        }
    }

    pub fn text(&self) -> String {
        self.spans.iter().map(|s| s.text.as_str()).collect()
    }

    pub fn char_len(&self) -> usize {
        self.spans.iter().map(Span::char_len).sum()
    }

    pub fn is_blank(&self) -> bool {
        self.spans.iter().all(|s| s.text.trim().is_empty())
    }

    pub fn word_count(&self) -> usize {
        text::word_count(&self.text())
    }

    /// Make sure a span boundary exists at `offset` and return the index of
    /// the first span starting there (may equal `spans.len()`).
    pub(crate) fn split_at(&mut self, offset: usize) -> usize {
        let mut pos = 0;
        for i in 0..self.spans.len() {
            let len = self.spans[i].char_len();
            if offset == pos {
                return i;
            }
            if offset < pos + len {
                let local = offset - pos;
                let (head, tail) = text::split_chars(&self.spans[i].text, local);
                let mut rest = self.spans[i].clone();
                rest.text = tail.to_string();
                self.spans[i].text = head.to_string();
                self.spans.insert(i + 1, rest);
                return i + 1;
            }
            pos += len;
        }
        self.spans.len()
    }

    pub(crate) fn check_range(&self, range: CharRange) -> Result<(), WorkspaceError> {
        let len = self.char_len();
        if range.is_valid_within(len) {
            Ok(())
        } else {
            Err(WorkspaceError::BadRange {
                block: self.id,
                range,
                len,
            })
        }
    }

    /// Indices `[a, b)` of the spans exactly covering `range`, after splitting.
    pub(crate) fn isolate(&mut self, range: CharRange) -> (usize, usize) {
        let start = self.split_at(range.start);
        let end = self.split_at(range.end);
        (start, end)
    }

    pub(crate) fn insert_spans(&mut self, offset: usize, spans: Vec<Span>) {
        let at = self.split_at(offset);
        for (k, span) in spans.into_iter().enumerate() {
            self.spans.insert(at + k, span);
        }
        self.normalize();
    }

    pub(crate) fn delete_range(&mut self, range: CharRange) -> Vec<Span> {
        if range.is_empty() {
            return Vec::new();
        }
        let (a, b) = self.isolate(range);
        let removed: Vec<Span> = self.spans.drain(a..b).collect();
        self.normalize();
        removed
    }

    /// Drop empty spans and merge identically marked neighbours. A block
    /// that ends up with no text keeps a single empty human span.
    pub(crate) fn normalize(&mut self) {
        let mut out: Vec<Span> = Vec::with_capacity(self.spans.len());
        for span in self.spans.drain(..) {
            if span.text.is_empty() {
                continue;
            }
            match out.last_mut() {
                Some(prev) if prev.mergeable_with(&span) => prev.text.push_str(&span.text),
                _ => out.push(span),
            }
        }
        if out.is_empty() {
            out.push(Span::human(""));
        }
        self.spans = out;
    }
}

/// Text for a new block, before ids are assigned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDraft {
    pub kind: BlockKind,
    pub text: String,
}

impl BlockDraft {
    pub fn paragraph(text: impl Into<String>) -> Self {
        BlockDraft {
            kind: BlockKind::Paragraph,
            text: text.into(),
        }
    }

    pub fn heading(level: u8, text: impl Into<String>) -> Self {
        BlockDraft {
            kind: BlockKind::Heading {
                level: level.clamp(1, BlockKind::MAX_HEADING_LEVEL),
            },
            text: text.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Writing,
    Scratchpad,
    Document,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub text: String,
    pub stale: bool,
    /// Digest of the content the summary was generated from.
    pub digest: String,
}

/// Persistent link from a sub-layer back to the text it was created from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentLink {
    pub parent: LayerId,
    pub block: BlockId,
    pub range: CharRange,
    pub orphaned: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritingContent {
    pub blocks: Vec<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_link: Option<ParentLink>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub doc: DocId,
    pub excerpt: CharRange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScratchEntry {
    pub id: BlockId,
    pub question: String,
    pub answer: Vec<Block>,
    pub citations: Vec<Citation>,
    /// No reference material backed this answer.
    pub unverified: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScratchpadContent {
    pub entries: Vec<ScratchEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerContent {
    Writing(WritingContent),
    Scratchpad(ScratchpadContent),
    Document(DocumentContent),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub id: LayerId,
    pub name: String,
    pub tags: BTreeSet<String>,
    pub listeners: BTreeSet<SubscriptionId>,
    pub folded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_summary: Option<FoldSummary>,
    pub content: LayerContent,
}

impl Layer {
    pub fn new(id: LayerId, name: impl Into<String>, content: LayerContent) -> Self {
        Layer {
            id,
            name: name.into(),
            tags: BTreeSet::new(),
            listeners: BTreeSet::new(),
            folded: false,
            fold_summary: None,
            content,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self.content {
            LayerContent::Writing(_) => LayerKind::Writing,
            LayerContent::Scratchpad(_) => LayerKind::Scratchpad,
            LayerContent::Document(_) => LayerKind::Document,
        }
    }

    pub fn writing(&self) -> Option<&WritingContent> {
        match &self.content {
            LayerContent::Writing(w) => Some(w),
            _ => None,
        }
    }

    pub fn writing_mut(&mut self) -> Option<&mut WritingContent> {
        match &mut self.content {
            LayerContent::Writing(w) => Some(w),
            _ => None,
        }
    }

    pub fn document(&self) -> Option<&DocumentContent> {
        match &self.content {
            LayerContent::Document(d) => Some(d),
            _ => None,
        }
    }

    /// The layer's content as a flat block list, as seen by prompts and
    /// summaries. Scratchpad questions appear as level-3 headings.
    pub fn view_blocks(&self) -> Vec<Block> {
        match &self.content {
            LayerContent::Writing(w) => w.blocks.clone(),
            LayerContent::Document(d) => d.blocks.clone(),
            LayerContent::Scratchpad(s) => s
                .entries
                .iter()
                .flat_map(|e| {
                    std::iter::once(Block::new(
                        e.id,
                        BlockKind::Heading { level: 3 },
                        vec![Span::human(e.question.clone())],
                    ))
                    .chain(e.answer.iter().cloned())
                })
                .collect(),
        }
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.writing()?.blocks.iter().find(|b| b.id == id)
    }

    pub fn has_text(&self) -> bool {
        self.view_blocks().iter().any(|b| !b.is_blank())
    }

    pub fn plain_text(&self) -> String {
        self.view_blocks()
            .iter()
            .map(Block::text)
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Mark a cached fold summary as stale after the content changed.
    pub(crate) fn touch(&mut self) {
        if let Some(summary) = self.fold_summary.as_mut() {
            summary.stale = true;
        }
    }
}
