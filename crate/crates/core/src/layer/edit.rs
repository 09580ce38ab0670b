use serde::{Deserialize, Serialize};

use super::{Block, BlockKind, Span, WritingContent};
use crate::error::WorkspaceError;
use crate::ids::{BlockId, LayerId};
use crate::text::{self, CharRange};

/// A user edit against one writing layer. Inserted text is always human.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Edit {
    Insert {
        block: BlockId,
        offset: usize,
        text: String,
    },
    Delete {
        block: BlockId,
        range: CharRange,
    },
    Replace {
        block: BlockId,
        range: CharRange,
        text: String,
    },
    InsertBlock {
        #[serde(default)]
        after: Option<BlockId>,
        kind: BlockKind,
        #[serde(default)]
        text: String,
    },
    RemoveBlock {
        block: BlockId,
    },
}

impl Edit {
    pub fn block(&self) -> Option<BlockId> {
        match self {
            Edit::Insert { block, .. }
            | Edit::Delete { block, .. }
            | Edit::Replace { block, .. }
            | Edit::RemoveBlock { block } => Some(*block),
            Edit::InsertBlock { after, .. } => *after,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub block: Option<BlockId>,
    pub words_inserted: usize,
    pub chars_removed: usize,
}

fn find(content: &mut WritingContent, layer: LayerId, id: BlockId) -> Result<usize, WorkspaceError> {
    content
        .blocks
        .iter()
        .position(|b| b.id == id)
        .ok_or(WorkspaceError::UnknownBlock { layer, block: id })
}

impl WritingContent {
    pub(crate) fn apply_edit(
        &mut self,
        layer: LayerId,
        edit: &Edit,
        fresh_id: impl FnOnce() -> BlockId,
    ) -> Result<EditOutcome, WorkspaceError> {
        match edit {
            Edit::Insert {
                block,
                offset,
                text: t,
            } => {
                let i = find(self, layer, *block)?;
                let b = &mut self.blocks[i];
                b.check_range(CharRange::new(*offset, *offset))?;
                b.insert_spans(*offset, vec![Span::human(t.clone())]);
                Ok(EditOutcome {
                    block: Some(*block),
                    words_inserted: text::word_count(t),
                    chars_removed: 0,
                })
            }
            Edit::Delete { block, range } => {
                let i = find(self, layer, *block)?;
                let b = &mut self.blocks[i];
                b.check_range(*range)?;
                b.delete_range(*range);
                Ok(EditOutcome {
                    block: Some(*block),
                    words_inserted: 0,
                    chars_removed: range.len(),
                })
            }
            Edit::Replace {
                block,
                range,
                text: t,
            } => {
                let i = find(self, layer, *block)?;
                let b = &mut self.blocks[i];
                b.check_range(*range)?;
                b.delete_range(*range);
                b.insert_spans(range.start, vec![Span::human(t.clone())]);
                Ok(EditOutcome {
                    block: Some(*block),
                    words_inserted: text::word_count(t),
                    chars_removed: range.len(),
                })
            }
            Edit::InsertBlock {
                after,
                kind,
                text: t,
            } => {
                if let BlockKind::Heading { level } = kind {
                    BlockKind::heading(*level)?;
                }
                let at = match after {
                    Some(id) => find(self, layer, *id)? + 1,
                    None => 0,
                };
                let id = fresh_id();
                self.blocks
                    .insert(at, Block::new(id, *kind, vec![Span::human(t.clone())]));
                Ok(EditOutcome {
                    block: Some(id),
                    words_inserted: text::word_count(t),
                    chars_removed: 0,
                })
            }
            Edit::RemoveBlock { block } => {
                let i = find(self, layer, *block)?;
                if self.blocks.len() == 1 {
                    return Err(WorkspaceError::Precondition(
                        "a writing layer keeps at least one block".into(),
                    ));
                }
                let removed = self.blocks.remove(i);
                Ok(EditOutcome {
                    block: Some(*block),
                    words_inserted: 0,
                    chars_removed: removed.char_len(),
                })
            }
        }
    }
}
