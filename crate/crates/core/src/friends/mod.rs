//! The writer's friends: persona catalog, feedback annotations, peek previews
//! and writing templates.

mod apply;
mod template;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use template::{guidance, TemplateRegistry, WritingTemplate, EMPTY_COMPONENT};

use crate::ids::{AnnotationId, BlockId, FriendId, LayerId, PreviewId, RequestId, TaskId};

/// Paragraph-level note from a feedback persona. Never alters block content.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackAnnotation {
    pub id: AnnotationId,
    pub layer: LayerId,
    pub block: BlockId,
    pub persona: FriendId,
    pub note: String,
    pub visible: bool,
    pub request: RequestId,
}

/// Greyed continuation shown beside a layer until accepted or dismissed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeekPreview {
    pub id: PreviewId,
    pub layer: LayerId,
    pub text: String,
    pub request: RequestId,
}

/// Where in the UI a friend can be called from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Surface {
    InlineSlash,
    LayerToolbar,
    Scratchpad,
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::InlineSlash, Surface::LayerToolbar, Surface::Scratchpad];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Friend {
    pub id: FriendId,
    pub display_name: String,
    pub description: String,
    pub task: TaskId,
    pub surface: Surface,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FriendError {
    #[error("unknown friend {0}")]
    UnknownFriend(String),
    #[error("{friend} cannot be invoked from the {surface:?} surface")]
    WrongSurface { friend: FriendId, surface: Surface },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("set the audience in the meta layer before asking for audience feedback")]
    AudienceRequired,
    #[error("{what} must be within {min}..={max}, got {got}")]
    OutOfRange {
        what: &'static str,
        min: usize,
        max: usize,
        got: usize,
    },
    #[error("bad template asset: {0}")]
    Asset(String),
}

impl FriendError {
    pub fn code(&self) -> &'static str {
        match self {
            FriendError::UnknownFriend(_) => "unknown-friend",
            FriendError::WrongSurface { .. } => "unknown-friend-for-surface",
            FriendError::UnknownTemplate(_) => "unknown-template",
            FriendError::AudienceRequired => "audience-required",
            FriendError::OutOfRange { .. } => "out-of-range",
            FriendError::Asset(_) => "asset",
        }
    }
}

pub const IVY: &str = "ivy";
pub const DANNY: &str = "danny";
pub const SAM: &str = "sam";
pub const TARA: &str = "tara";
pub const FELIX: &str = "felix";
pub const ALI: &str = "ali";
pub const RAMESH: &str = "ramesh";
/// Continuation preview, attributed like a friend.
pub const PEEK: &str = "peek";
/// Template partitioning, attributed like a friend.
pub const TEMPLATE: &str = "template";

/// The seven personas, in catalog order.
pub const PERSONAS: [&str; 7] = [IVY, DANNY, SAM, TARA, FELIX, ALI, RAMESH];

/// Smallest and largest number of tone variants.
pub const VARIANTS: (usize, usize) = (1, 4);
pub const DEFAULT_VARIANTS: usize = 2;

/// Friend id to entry.
#[derive(Clone, Debug)]
pub struct Catalog {
    friends: BTreeMap<FriendId, Friend>,
}

fn entry(id: &str, name: &str, description: &str, task: &str, surface: Surface) -> Friend {
    Friend {
        id: FriendId::new(id),
        display_name: name.into(),
        description: description.into(),
        task: TaskId::new(task),
        surface,
    }
}

impl Catalog {
    pub fn builtin() -> Self {
        use Surface::*;
        let all = [
            entry(IVY, "Idea Ivy", "Brainstorms ideas and perspectives at the cursor.", "ideate", InlineSlash),
            entry(DANNY, "Detail Danny", "Elaborates on a point at the cursor.", "elaborate", InlineSlash),
            entry(SAM, "Structure Sam", "Organizes a layer into headings and sections.", "restructure", LayerToolbar),
            entry(TARA, "Tone Tara", "Rewrites a layer in another tone, as new layers.", "tone-variants", LayerToolbar),
            entry(FELIX, "Feedback Felix", "Leaves paragraph-level comments.", "feedback", LayerToolbar),
            entry(ALI, "Audience Ali", "Comments from the target audience's point of view.", "audience-feedback", LayerToolbar),
            entry(RAMESH, "Research Ramesh", "Answers questions from the uploaded references.", "research", Scratchpad),
            entry(PEEK, "Peek", "Previews how the layer could continue.", "peek-continuation", LayerToolbar),
            entry(TEMPLATE, "Templates", "Splits a layer into the components of a writing template.", "template", LayerToolbar),
        ];
        Catalog {
            friends: all.into_iter().map(|f| (f.id.clone(), f)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&Friend, FriendError> {
        self.friends
            .get(&FriendId::new(id))
            .ok_or_else(|| FriendError::UnknownFriend(id.to_string()))
    }

    /// The friend, if it may be invoked from `surface`.
    pub fn for_surface(&self, id: &str, surface: Surface) -> Result<&Friend, FriendError> {
        let f = self.get(id)?;
        if f.surface != surface {
            return Err(FriendError::WrongSurface {
                friend: f.id.clone(),
                surface,
            });
        }
        Ok(f)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Friend> {
        self.friends.values()
    }

    /// Add or replace an entry, e.g. for a persona defined by a task asset.
    pub fn register(&mut self, friend: Friend) {
        self.friends.insert(friend.id.clone(), friend);
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Self::builtin()
    }
}
