//! Placement on the canvas, edge adjacency and comparison sessions.

use serde::{Deserialize, Serialize};

use super::{Workspace, WorkspaceEvent};
use crate::error::WorkspaceError;
use crate::ids::{BlockId, ComparisonId, GroupId, LayerId};
use crate::layer::LayerKind;
use crate::text::CharRange;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub z: i64,
}

impl Placement {
    pub fn new(x: f64, y: f64, width: f64, height: f64, z: i64) -> Self {
        Placement {
            x,
            y,
            width,
            height,
            z,
        }
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.width.is_finite()
            && self.height.is_finite()
            && self.width > 0.0
            && self.height > 0.0
    }

    /// Whether this placement's right edge touches `other`'s left edge.
    pub fn touches_left_of(&self, other: &Placement, epsilon: f64, min_overlap: f64) -> bool {
        let gap = other.x - self.right();
        if gap.abs() > epsilon {
            return false;
        }
        let overlap = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        overlap >= min_overlap * self.height.min(other.height)
    }
}

/// Right edge of `left` touches left edge of `right`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Adjacency {
    pub left: LayerId,
    pub right: LayerId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationKind {
    Similarity,
    Difference,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonAnnotation {
    pub layer: LayerId,
    pub block: BlockId,
    pub range: CharRange,
    pub kind: AnnotationKind,
    pub note: String,
}

/// Lives only while its two layers stay edge to edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSession {
    pub id: ComparisonId,
    pub left: LayerId,
    pub right: LayerId,
    pub instruction: String,
    pub annotations: Vec<ComparisonAnnotation>,
}

impl Workspace {
    pub(crate) fn next_z(&self) -> i64 {
        self.placements.values().map(|p| p.z).max().map_or(0, |z| z + 1)
    }

    /// A slot to the right of everything on the canvas.
    pub(crate) fn free_placement(&self) -> Placement {
        let x = self
            .placements
            .iter()
            .filter(|(id, _)| !self.is_binned(**id))
            .map(|(_, p)| p.right() + self.config.spacing)
            .fold(0.0_f64, f64::max);
        Placement::new(
            x,
            0.0,
            self.config.default_width,
            self.config.default_height,
            self.next_z(),
        )
    }

    /// The `k`th slot to the right of `origin`.
    pub(crate) fn placement_beside(&self, origin: LayerId, k: usize) -> Placement {
        let Some(o) = self.placements.get(&origin).copied() else {
            return self.free_placement();
        };
        let step = o.width + self.config.spacing;
        Placement::new(
            o.right() + self.config.spacing + step * k as f64,
            o.y,
            o.width,
            o.height,
            self.next_z(),
        )
    }

    fn free_for_adjacency(&self, id: LayerId) -> bool {
        self.layers
            .get(&id)
            .is_some_and(|l| l.kind() != LayerKind::Document)
            && !self.is_binned(id)
            && !self.in_stack(id)
    }

    pub fn adjacent(&self, left: LayerId, right: LayerId) -> bool {
        if left == right || !self.free_for_adjacency(left) || !self.free_for_adjacency(right) {
            return false;
        }
        match (self.placements.get(&left), self.placements.get(&right)) {
            (Some(a), Some(b)) => a.touches_left_of(
                b,
                self.config.adjacency_epsilon,
                self.config.min_vertical_overlap,
            ),
            _ => false,
        }
    }

    pub fn adjacencies_of(&self, layer: LayerId) -> Vec<Adjacency> {
        let mut out = Vec::new();
        for other in self.layers.keys().copied() {
            if self.adjacent(layer, other) {
                out.push(Adjacency {
                    left: layer,
                    right: other,
                });
            }
            if self.adjacent(other, layer) {
                out.push(Adjacency {
                    left: other,
                    right: layer,
                });
            }
        }
        out
    }

    pub fn move_layer(
        &mut self,
        layer: LayerId,
        placement: Placement,
    ) -> Result<Vec<Adjacency>, WorkspaceError> {
        self.layer(layer)?;
        if self.is_binned(layer) {
            return Err(WorkspaceError::Binned(layer));
        }
        if self.in_stack(layer) {
            return Err(WorkspaceError::MemberOfStack(layer));
        }
        if !placement.is_valid() {
            return Err(WorkspaceError::InvalidPlacement);
        }
        if self
            .placements
            .iter()
            .any(|(id, p)| *id != layer && p.z == placement.z)
        {
            return Err(WorkspaceError::ZOrderConflict(placement.z));
        }
        self.placements.insert(layer, placement);
        self.refresh_comparisons();
        let adj = self.adjacencies_of(layer);
        for a in &adj {
            self.emit(WorkspaceEvent::Adjacency {
                left: a.left,
                right: a.right,
            });
        }
        Ok(adj)
    }

    /// Move a group's anchor; every layer inside moves by the same offset.
    pub fn move_group(&mut self, group: GroupId, x: f64, y: f64) -> Result<(), WorkspaceError> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(WorkspaceError::InvalidPlacement);
        }
        let g = self.group(group)?;
        let members = g.layers();
        let anchor = g.anchor;
        let (dx, dy) = (x - anchor.x, y - anchor.y);
        for id in members {
            if let Some(p) = self.placements.get_mut(&id) {
                p.x += dx;
                p.y += dy;
            }
        }
        let g = self.group_mut(group)?;
        g.anchor.x = x;
        g.anchor.y = y;
        self.refresh_comparisons();
        Ok(())
    }

    // ---- comparisons ---------------------------------------------------------

    pub(crate) fn open_comparison(
        &mut self,
        left: LayerId,
        right: LayerId,
        instruction: String,
        annotations: Vec<ComparisonAnnotation>,
    ) -> Result<ComparisonId, WorkspaceError> {
        if !self.adjacent(left, right) {
            return Err(WorkspaceError::NotAdjacent { left, right });
        }
        let id = ComparisonId(self.fresh());
        self.comparisons.insert(
            id,
            ComparisonSession {
                id,
                left,
                right,
                instruction,
                annotations,
            },
        );
        Ok(id)
    }

    /// The session, if it exists and its layers are still touching.
    pub fn comparison(&self, id: ComparisonId) -> Option<&ComparisonSession> {
        self.comparisons
            .get(&id)
            .filter(|s| self.adjacent(s.left, s.right))
    }

    pub fn close_comparison(&mut self, id: ComparisonId) -> Result<(), WorkspaceError> {
        self.comparisons
            .remove(&id)
            .map(|_| ())
            .ok_or(WorkspaceError::UnknownComparison(id))
    }

    pub(crate) fn refresh_comparisons(&mut self) {
        let dead: Vec<ComparisonId> = self
            .comparisons
            .values()
            .filter(|s| !self.adjacent(s.left, s.right))
            .map(|s| s.id)
            .collect();
        for id in dead {
            self.comparisons.remove(&id);
            self.emit(WorkspaceEvent::ComparisonDestroyed { session: id });
        }
    }

    pub(crate) fn drop_comparisons_with(&mut self, layer: LayerId) {
        let dead: Vec<ComparisonId> = self
            .comparisons
            .values()
            .filter(|s| s.left == layer || s.right == layer)
            .map(|s| s.id)
            .collect();
        for id in dead {
            self.comparisons.remove(&id);
            self.emit(WorkspaceEvent::ComparisonDestroyed { session: id });
        }
    }

    /// Whether `(layer, block, range)` addresses existing text.
    pub fn valid_address(&self, layer: LayerId, block: BlockId, range: CharRange) -> bool {
        self.layers.get(&layer).is_some_and(|l| {
            l.view_blocks()
                .iter()
                .find(|b| b.id == block)
                .is_some_and(|b| range.is_valid_within(b.char_len()))
        })
    }
}
