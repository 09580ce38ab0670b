//! Prompt composer: task knowledge, layer templatizer and orchestration.

mod compose;
pub mod schema;
mod task;

use thiserror::Error;

pub use compose::{
    compose, escape, templatize, AnchorPlan, ComposeInput, ComposeOptions, ComposedPrompt,
    ContextBlock, ContextLayer, ContextReference, PromptContext, Segment, SegmentKind, Templatized,
    ANCHOR,
};
pub use schema::{Parsed, SchemaError, SchemaKind};
pub use task::{RenderTarget, TaskKnowledge, TaskRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("bad anchor: {0}")]
    BadAnchor(String),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("no layers to compose from")]
    NoLayers,
    #[error("task asset: {0}")]
    Asset(String),
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::UnknownTask(_) => "unknown-task",
            PromptError::BadAnchor(_) => "bad-anchor",
            PromptError::BadParameter(_) => "bad-parameter",
            PromptError::NoLayers => "no-layers",
            PromptError::Asset(_) => "asset",
        }
    }
}
