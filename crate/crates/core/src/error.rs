use thiserror::Error;

use crate::ids::{
    AnnotationId, BlockId, ComparisonId, DocId, GroupId, LayerId, PlaceholderId, PreviewId,
    RequestId, SubscriptionId,
};
use crate::layer::{LayerKind, PlaceholderState};
use crate::text::CharRange;

/// Errors raised by workspace mutations and queries.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkspaceError {
    #[error("layer name must not be empty")]
    EmptyName,
    #[error("layer {0} is a document layer and cannot be edited")]
    NotEditable(LayerId),
    #[error("range {range} is out of bounds for block {block} (length {len})")]
    BadRange {
        block: BlockId,
        range: CharRange,
        len: usize,
    },
    #[error("unknown layer {0}")]
    UnknownLayer(LayerId),
    #[error("unknown block {block} in layer {layer}")]
    UnknownBlock { layer: LayerId, block: BlockId },
    #[error("unknown placeholder {0}")]
    UnknownPlaceholder(PlaceholderId),
    #[error("placeholder {id} is {actual:?}, expected {expected:?}")]
    WrongState {
        id: PlaceholderId,
        actual: PlaceholderState,
        expected: PlaceholderState,
    },
    #[error("block {block} in layer {layer} already hosts an open placeholder")]
    PlaceholderBusy { layer: LayerId, block: BlockId },
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("layer {0} is stacked; move the stack instead")]
    MemberOfStack(LayerId),
    #[error("a group needs at least two members")]
    TooFewMembers,
    #[error("member listed twice")]
    DuplicateMember,
    #[error("{0} already belongs to a group")]
    AlreadyGrouped(String),
    #[error("not a permutation of the current member indices")]
    NotAPermutation,
    #[error("group {0} is not a stack")]
    NotAStack(GroupId),
    #[error("cut points must be strictly increasing and inside (0, {blocks})")]
    BadCutPoint { blocks: usize },
    #[error("layer {0} has too few blocks for this operation")]
    EmptyLayer(LayerId),
    #[error("layer {layer} is a {actual:?} layer, expected {expected:?}")]
    TypeMismatch {
        layer: LayerId,
        actual: LayerKind,
        expected: LayerKind,
    },
    #[error("layer {0} is folded")]
    FoldedInput(LayerId),
    #[error("the two layers must differ")]
    SameLayer,
    #[error("bad anchor: {0}")]
    BadAnchor(String),
    #[error("cannot tunnel into the current layer")]
    SelfTunnel,
    #[error("layers {left} and {right} are not adjacent")]
    NotAdjacent { left: LayerId, right: LayerId },
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("tag label must not be empty")]
    EmptyLabel,
    #[error("reference of {size} bytes exceeds the {cap} byte cap")]
    ReferenceTooLarge { size: usize, cap: usize },
    #[error("unknown reference document {0}")]
    UnknownDoc(DocId),
    #[error("z-order {0} is already taken")]
    ZOrderConflict(i64),
    #[error("placement extents must be positive and finite")]
    InvalidPlacement,
    #[error("unknown comparison {0}")]
    UnknownComparison(ComparisonId),
    #[error("unknown annotation {0}")]
    UnknownAnnotation(AnnotationId),
    #[error("unknown preview {0}")]
    UnknownPreview(PreviewId),
    #[error("unknown subscription {0}")]
    UnknownSubscription(SubscriptionId),
    #[error("layer {0} is in the bin")]
    Binned(LayerId),
    #[error("layer {0} is not in the bin")]
    NotBinned(LayerId),
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("result for {0} failed schema validation and was not applied")]
    SchemaInvalid(RequestId),
    #[error("compile has no eligible members")]
    EmptyCompile,
    #[error("layer {0} is a document and cannot be compiled")]
    DocumentLayerMember(LayerId),
    #[error("no span at address {0}")]
    BadAddress(String),
    #[error("{0}")]
    Precondition(String),
}

impl WorkspaceError {
    /// Stable machine-readable code, used on the wire.
    pub fn code(&self) -> &'static str {
        use WorkspaceError::*;
        match self {
            EmptyName => "empty-name",
            NotEditable(_) => "not-editable",
            BadRange { .. } => "bad-range",
            UnknownLayer(_) => "unknown-layer",
            UnknownBlock { .. } => "unknown-block",
            UnknownPlaceholder(_) => "unknown-id",
            WrongState { .. } => "wrong-state",
            PlaceholderBusy { .. } => "placeholder-busy",
            UnknownGroup(_) => "unknown-group",
            MemberOfStack(_) => "member-of-stack",
            TooFewMembers => "too-few-members",
            DuplicateMember => "duplicate-member",
            AlreadyGrouped(_) => "already-grouped",
            NotAPermutation => "not-a-permutation",
            NotAStack(_) => "not-a-stack",
            BadCutPoint { .. } => "bad-cut-point",
            EmptyLayer(_) => "empty-layer",
            TypeMismatch { .. } => "type-mismatch",
            FoldedInput(_) => "folded-input",
            SameLayer => "same-layer",
            BadAnchor(_) => "bad-anchor",
            SelfTunnel => "self-tunnel",
            NotAdjacent { .. } => "not-adjacent",
            UnknownTarget(_) => "unknown-target",
            EmptyLabel => "empty-label",
            ReferenceTooLarge { .. } => "reference-too-large",
            UnknownDoc(_) => "unknown-doc",
            ZOrderConflict(_) => "z-order-conflict",
            InvalidPlacement => "invalid-placement",
            UnknownComparison(_) => "unknown-comparison",
            UnknownAnnotation(_) => "unknown-annotation",
            UnknownPreview(_) => "unknown-preview",
            UnknownSubscription(_) => "unknown-subscription",
            Binned(_) => "binned",
            NotBinned(_) => "not-binned",
            UnknownRequest(_) => "unknown-request",
            SchemaInvalid(_) => "schema-invalid",
            EmptyCompile => "empty-compile",
            DocumentLayerMember(_) => "document-layer-member",
            BadAddress(_) => "bad-address",
            Precondition(_) => "precondition",
        }
    }
}
