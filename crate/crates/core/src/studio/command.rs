//! The operation set, as data. Each variant is one endpoint of the service.

use serde::{Deserialize, Serialize};

use crate::compiler::CompileSpec;
use crate::ids::*;
use crate::layer::{BlockDraft, DocumentContent, Edit, SpanAddress, Traceback};
use crate::text::CharRange;
use crate::workspace::{
    Adjacency, MemberRef, MetaUpdate, Placement, Resolution, Selection, Target, TunnelView,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    // layers
    NewWritingLayer {
        name: String,
        #[serde(default)]
        blocks: Option<Vec<BlockDraft>>,
    },
    NewScratchpad {
        name: String,
    },
    ApplyEdit {
        layer: LayerId,
        edit: Edit,
    },
    ResolvePlaceholder {
        placeholder: PlaceholderId,
        resolution: Resolution,
    },
    CancelGeneration {
        placeholder: PlaceholderId,
    },
    UpdateMeta {
        update: MetaUpdate,
    },
    AttachReference {
        title: String,
        text: String,
    },
    BinLayer {
        layer: LayerId,
    },
    RestoreLayer {
        layer: LayerId,
    },

    // canvas
    MoveLayer {
        layer: LayerId,
        placement: Placement,
    },
    MoveGroup {
        group: GroupId,
        x: f64,
        y: f64,
    },
    Stack {
        members: Vec<MemberRef>,
    },
    Cluster {
        members: Vec<MemberRef>,
    },
    Ungroup {
        group: GroupId,
    },
    ReorderStack {
        group: GroupId,
        permutation: Vec<usize>,
    },
    Fan {
        group: GroupId,
    },
    Unfan {
        group: GroupId,
    },
    Fold {
        layer: LayerId,
    },
    Unfold {
        layer: LayerId,
    },
    Tear {
        layer: LayerId,
        cuts: Vec<usize>,
    },
    Combine {
        top: LayerId,
        bottom: LayerId,
        #[serde(default)]
        transition_prompt: Option<String>,
    },
    CreateSublayer {
        parent: LayerId,
        block: BlockId,
        range: CharRange,
        name: String,
    },
    Tunnel {
        current: LayerId,
        target: LayerId,
        cursor: BlockId,
    },
    ImportSelection {
        current: LayerId,
        cursor: BlockId,
        selection: Selection,
    },
    Compare {
        left: LayerId,
        right: LayerId,
        instruction: String,
    },
    CloseComparison {
        session: ComparisonId,
    },
    Tag {
        target: Target,
        label: String,
    },
    Untag {
        target: Target,
        label: String,
    },
    Subscribe {
        layer: LayerId,
    },
    Unsubscribe {
        subscription: SubscriptionId,
    },

    // friends
    InvokeInline {
        layer: LayerId,
        block: BlockId,
        #[serde(default)]
        offset: usize,
        friend: String,
        #[serde(default)]
        prompt: String,
        /// Put the generated text in a new block after `block`.
        #[serde(default)]
        new_block: bool,
    },
    Peek {
        layer: LayerId,
    },
    AcceptPreview {
        preview: PreviewId,
    },
    DismissPreview {
        preview: PreviewId,
    },
    Restructure {
        layer: LayerId,
    },
    ToneVariants {
        layer: LayerId,
        #[serde(default)]
        instruction: String,
        #[serde(default)]
        n: Option<usize>,
    },
    Annotate {
        layer: LayerId,
        persona: String,
        #[serde(default)]
        prompt: Option<String>,
    },
    ToggleAnnotations {
        layer: LayerId,
        visible: bool,
    },
    Research {
        scratchpad: LayerId,
        question: String,
    },
    ApplyTemplate {
        template: String,
        layer: LayerId,
    },

    // compiler
    Compile {
        spec: CompileSpec,
    },
    Traceback {
        document: LayerId,
        address: SpanAddress,
    },
    Adjacencies {
        layer: LayerId,
    },
}

impl Command {
    /// Every operation name, in declaration order.
    pub const OPS: [&'static str; 43] = [
        "new_writing_layer",
        "new_scratchpad",
        "apply_edit",
        "resolve_placeholder",
        "cancel_generation",
        "update_meta",
        "attach_reference",
        "bin_layer",
        "restore_layer",
        "move_layer",
        "move_group",
        "stack",
        "cluster",
        "ungroup",
        "reorder_stack",
        "fan",
        "unfan",
        "fold",
        "unfold",
        "tear",
        "combine",
        "create_sublayer",
        "tunnel",
        "import_selection",
        "compare",
        "close_comparison",
        "tag",
        "untag",
        "subscribe",
        "unsubscribe",
        "invoke_inline",
        "peek",
        "accept_preview",
        "dismiss_preview",
        "restructure",
        "tone_variants",
        "annotate",
        "toggle_annotations",
        "research",
        "apply_template",
        "compile",
        "traceback",
        // Read-only, but still one endpoint per operation.
        "adjacencies",
    ];

    pub fn op(&self) -> &'static str {
        match self {
            Command::NewWritingLayer { .. } => "new_writing_layer",
            Command::NewScratchpad { .. } => "new_scratchpad",
            Command::ApplyEdit { .. } => "apply_edit",
            Command::ResolvePlaceholder { .. } => "resolve_placeholder",
            Command::CancelGeneration { .. } => "cancel_generation",
            Command::UpdateMeta { .. } => "update_meta",
            Command::AttachReference { .. } => "attach_reference",
            Command::BinLayer { .. } => "bin_layer",
            Command::RestoreLayer { .. } => "restore_layer",
            Command::MoveLayer { .. } => "move_layer",
            Command::MoveGroup { .. } => "move_group",
            Command::Stack { .. } => "stack",
            Command::Cluster { .. } => "cluster",
            Command::Ungroup { .. } => "ungroup",
            Command::ReorderStack { .. } => "reorder_stack",
            Command::Fan { .. } => "fan",
            Command::Unfan { .. } => "unfan",
            Command::Fold { .. } => "fold",
            Command::Unfold { .. } => "unfold",
            Command::Tear { .. } => "tear",
            Command::Combine { .. } => "combine",
            Command::CreateSublayer { .. } => "create_sublayer",
            Command::Tunnel { .. } => "tunnel",
            Command::ImportSelection { .. } => "import_selection",
            Command::Compare { .. } => "compare",
            Command::CloseComparison { .. } => "close_comparison",
            Command::Tag { .. } => "tag",
            Command::Untag { .. } => "untag",
            Command::Subscribe { .. } => "subscribe",
            Command::Unsubscribe { .. } => "unsubscribe",
            Command::InvokeInline { .. } => "invoke_inline",
            Command::Peek { .. } => "peek",
            Command::AcceptPreview { .. } => "accept_preview",
            Command::DismissPreview { .. } => "dismiss_preview",
            Command::Restructure { .. } => "restructure",
            Command::ToneVariants { .. } => "tone_variants",
            Command::Annotate { .. } => "annotate",
            Command::ToggleAnnotations { .. } => "toggle_annotations",
            Command::Research { .. } => "research",
            Command::ApplyTemplate { .. } => "apply_template",
            Command::Compile { .. } => "compile",
            Command::Traceback { .. } => "traceback",
            Command::Adjacencies { .. } => "adjacencies",
        }
    }

    /// Free text the writer typed, if the operation carries any.
    pub fn user_prompt(&self) -> Option<&str> {
        let p = match self {
            Command::InvokeInline { prompt, .. } => prompt.as_str(),
            Command::ToneVariants { instruction, .. } => instruction,
            Command::Annotate { prompt, .. } => prompt.as_deref()?,
            Command::Research { question, .. } => question,
            Command::Compare { instruction, .. } => instruction,
            Command::Combine {
                transition_prompt, ..
            } => transition_prompt.as_deref()?,
            _ => return None,
        };
        (!p.trim().is_empty()).then_some(p)
    }

    /// Operations that only read state.
    pub fn is_read_only(&self) -> bool {
        matches!(self, Command::Tunnel { .. } | Command::Traceback { .. } | Command::Adjacencies { .. })
    }
}

/// What an operation produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Outcome {
    Done,
    Layer {
        layer: LayerId,
    },
    Layers {
        layers: Vec<LayerId>,
    },
    Combined {
        layer: LayerId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transition: Option<PlaceholderId>,
    },
    Edited {
        block: Option<BlockId>,
        words_inserted: usize,
        chars_removed: usize,
    },
    Block {
        block: BlockId,
    },
    Doc {
        doc: DocId,
    },
    Group {
        group: GroupId,
    },
    Adjacencies {
        adjacencies: Vec<Adjacency>,
    },
    Tunnel {
        view: TunnelView,
    },
    Placeholder {
        placeholder: PlaceholderId,
        request: RequestId,
    },
    Preview {
        preview: PreviewId,
        text: String,
    },
    Annotations {
        annotations: Vec<AnnotationId>,
    },
    Count {
        count: usize,
    },
    Comparison {
        session: ComparisonId,
    },
    Entry {
        layer: LayerId,
        entry: BlockId,
    },
    Subscription {
        subscription: SubscriptionId,
    },
    Document {
        layer: LayerId,
        content: Box<DocumentContent>,
    },
    Traceback {
        traceback: Traceback,
    },
    Cancelled {
        cancelled: bool,
    },
}
