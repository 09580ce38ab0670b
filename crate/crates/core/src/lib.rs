//! Layered writing workspace.
//!
//! Text lives in layers on a canvas. Layers are edited, torn, combined,
//! stacked and compiled into documents that keep a link from every span back
//! to its source. Model-backed "friends" generate into placeholders and new
//! layers through a composer, a pluggable backend and a broadcaster that
//! applies each result at most once. [`Studio`] is the entry point.

pub mod compiler;
pub mod digest;
pub mod engine;
pub mod error;
pub mod friends;
pub mod gateway;
pub mod ids;
pub mod layer;
pub mod persist;
pub mod prompt;
pub mod studio;
pub mod telemetry;
pub mod text;
pub mod workspace;

pub use compiler::{CompileMode, CompileSpec, Directive};
pub use engine::{Engine, EngineEvent};
pub use error::WorkspaceError;
pub use gateway::{BackendDescriptor, Gateway, MockBackend, MockConfig, MockFault, ResultStatus};
pub use ids::*;
pub use layer::{Block, BlockDraft, BlockKind, Edit, Layer, LayerKind, Origin, SpanAddress};
pub use persist::{FileStore, PersistError, WorkspaceStore};
pub use studio::{Command, Outcome, StrataError, Studio};
pub use telemetry::{EventKind, EventRecord, Telemetry};
pub use text::CharRange;
pub use workspace::{Placement, Workspace, WorkspaceDelta, WorkspaceEvent};
