use serde::{Deserialize, Serialize};

use super::{Block, Origin};
use crate::error::WorkspaceError;
use crate::ids::{BlockId, LayerId, PlaceholderId, RequestId, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaceholderState {
    Pending,
    Streaming,
    Filled,
    Accepted,
    Rejected,
}

impl PlaceholderState {
    pub fn is_terminal(self) -> bool {
        matches!(self, PlaceholderState::Accepted | PlaceholderState::Rejected)
    }

    /// Forward edges of the lifecycle. Failures and cancellation may also
    /// reject an open placeholder before it is filled.
    pub fn can_move_to(self, next: PlaceholderState) -> bool {
        use PlaceholderState::*;
        matches!(
            (self, next),
            (Pending, Streaming)
                | (Streaming, Filled)
                | (Filled, Accepted)
                | (Filled, Rejected)
                | (Pending, Rejected)
                | (Streaming, Rejected)
        )
    }
}

/// An anchored slot where generated text lands until accepted or rejected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placeholder {
    pub id: PlaceholderId,
    pub layer: LayerId,
    pub block: BlockId,
    pub offset: usize,
    pub task: TaskId,
    /// Attribution given to the generated spans.
    pub origin: Origin,
    pub state: PlaceholderState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<RequestId>,
    /// The anchor block as it was when the generation was invoked.
    pub snapshot: Block,
    /// The anchor block did not exist before the invocation.
    pub created_block: bool,
    /// Text received so far while streaming.
    #[serde(default)]
    pub streamed: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Placeholder {
    pub(crate) fn transition(&mut self, next: PlaceholderState) -> Result<(), WorkspaceError> {
        if self.state.can_move_to(next) {
            self.state = next;
            Ok(())
        } else {
            Err(WorkspaceError::WrongState {
                id: self.id,
                actual: self.state,
                expected: match next {
                    PlaceholderState::Streaming => PlaceholderState::Pending,
                    PlaceholderState::Filled => PlaceholderState::Streaming,
                    _ => PlaceholderState::Filled,
                },
            })
        }
    }

    pub fn is_open(&self) -> bool {
        !self.state.is_terminal()
    }
}
