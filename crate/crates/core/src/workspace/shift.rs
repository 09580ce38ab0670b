//! Tear, combine, sub-layers and tunneling.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Workspace;
use crate::error::WorkspaceError;
use crate::ids::{BlockId, LayerId};
use crate::layer::*;
use crate::text::CharRange;

/// Text imported from another layer, kept as context for the next prompt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub layer: LayerId,
    pub block: BlockId,
    pub text: String,
}

/// A block, or part of one, picked from a tunnel view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub layer: LayerId,
    pub block: BlockId,
    /// Whole block when absent.
    #[serde(default)]
    pub range: Option<CharRange>,
}

/// Read-only look into another layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnelView {
    pub layer: LayerId,
    pub name: String,
    pub blocks: Vec<Block>,
}

impl Workspace {
    fn unfolded_writing(&self, id: LayerId) -> Result<&Layer, WorkspaceError> {
        let l = self.writing_layer(id)?;
        if l.folded {
            return Err(WorkspaceError::FoldedInput(id));
        }
        Ok(l)
    }

    /// Point children of any `old` layer at whichever new layer now holds the
    /// anchor block.
    fn relink_children(&mut self, old: &[LayerId], new: &[LayerId]) {
        let holders: Vec<(LayerId, BTreeSet<BlockId>)> = new
            .iter()
            .filter_map(|id| {
                let w = self.layers.get(id)?.writing()?;
                Some((*id, w.blocks.iter().map(|b| b.id).collect()))
            })
            .collect();
        for layer in self.layers.values_mut() {
            let Some(link) = layer.writing_mut().and_then(|w| w.parent_link.as_mut()) else {
                continue;
            };
            if !old.contains(&link.parent) {
                continue;
            }
            if let Some((holder, _)) = holders.iter().find(|(_, ids)| ids.contains(&link.block)) {
                link.parent = *holder;
            }
        }
    }

    /// Split a layer at block indices. `cuts` must be strictly increasing and
    /// each inside `(0, block_count)`.
    pub fn tear(&mut self, layer: LayerId, cuts: &[usize]) -> Result<Vec<LayerId>, WorkspaceError> {
        let source = self.unfolded_writing(layer)?.clone();
        let content = source.writing().expect("writing layer");
        let n = content.blocks.len();
        if n < 2 {
            return Err(WorkspaceError::EmptyLayer(layer));
        }
        let valid = !cuts.is_empty()
            && cuts.windows(2).all(|w| w[0] < w[1])
            && cuts.iter().all(|&c| c > 0 && c < n);
        if !valid {
            return Err(WorkspaceError::BadCutPoint { blocks: n });
        }

        let origin = self.placements.get(&layer).copied();
        let mut bounds = vec![0];
        bounds.extend_from_slice(cuts);
        bounds.push(n);
        let mut parts = Vec::with_capacity(bounds.len() - 1);
        for (k, w) in bounds.windows(2).enumerate() {
            let mut placement = match origin {
                Some(o) if k == 0 => o,
                _ => self.placement_beside(layer, k - 1),
            };
            placement.z = self.next_z();
            let blocks = content.blocks[w[0]..w[1]].to_vec();
            let id = self.new_generated_layer(
                format!("{} (part {})", source.name, k + 1),
                blocks,
                "tear",
                placement,
            );
            let part = self.layer_mut(id)?;
            part.tags = source.tags.clone();
            if k == 0 {
                part.writing_mut().expect("writing").parent_link = content.parent_link.clone();
            }
            parts.push(id);
        }
        self.relink_children(&[layer], &parts);
        self.replace_in_groups(layer, &parts);
        self.retire(layer, parts.clone());
        Ok(parts)
    }

    /// Glue `bottom` under `top`. Returns the new layer and the number of
    /// blocks that came from `top`, which is where a transition would go.
    pub fn combine(&mut self, top: LayerId, bottom: LayerId) -> Result<(LayerId, usize), WorkspaceError> {
        if top == bottom {
            return Err(WorkspaceError::SameLayer);
        }
        let upper = self.unfolded_writing(top)?.clone();
        let lower = self.unfolded_writing(bottom)?.clone();
        let mut blocks = upper.writing().expect("writing").blocks.clone();
        let split = blocks.len();
        let mut ids: BTreeSet<BlockId> = blocks.iter().map(|b| b.id).collect();
        for mut b in lower.writing().expect("writing").blocks.clone() {
            // A restored original and one of its torn parts share block ids.
            if !ids.insert(b.id) {
                b.id = self.fresh_block();
                ids.insert(b.id);
            }
            blocks.push(b);
        }

        let mut placement = self
            .placements
            .get(&top)
            .copied()
            .unwrap_or_else(|| self.free_placement());
        placement.z = self.next_z();
        let id = self.new_generated_layer(upper.name.clone(), blocks, "combine", placement);
        let merged = self.layer_mut(id)?;
        merged.tags = upper.tags.union(&lower.tags).cloned().collect();
        merged.writing_mut().expect("writing").parent_link =
            upper.writing().expect("writing").parent_link.clone();

        self.relink_children(&[top, bottom], &[id]);
        self.replace_in_groups(top, &[id]);
        self.retire(top, vec![id]);
        self.retire(bottom, vec![id]);
        Ok((id, split))
    }

    /// New layer seeded with the anchored text; the anchor becomes a link.
    pub fn create_sublayer(
        &mut self,
        parent: LayerId,
        block: BlockId,
        range: CharRange,
        name: &str,
    ) -> Result<LayerId, WorkspaceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(WorkspaceError::EmptyName);
        }
        let idx = self.block_index(parent, block)?;
        let anchor_block = &self.writing_layer(parent)?.writing().expect("writing").blocks[idx];
        if range.is_empty() || !range.is_valid_within(anchor_block.char_len()) {
            return Err(WorkspaceError::BadAnchor(format!(
                "{range} is not a non-empty range inside {block}"
            )));
        }
        let mut probe = anchor_block.clone();
        let (a, b) = probe.isolate(range);
        if let Some(other) = probe.spans[a..b].iter().find_map(|s| s.link) {
            return Err(WorkspaceError::BadAnchor(format!(
                "{range} already anchors {other}"
            )));
        }
        let seed_spans: Vec<Span> = probe.spans[a..b]
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.link = None;
                s.placeholder = None;
                s
            })
            .collect();

        let seed = Block::new(self.fresh_block(), BlockKind::Paragraph, seed_spans);
        let placement = self.placement_beside(parent, 0);
        let child = self.new_generated_layer(name.to_string(), vec![seed], "sublayer", placement);
        self.layer_mut(child)?
            .writing_mut()
            .expect("writing")
            .parent_link = Some(ParentLink {
            parent,
            block,
            range,
            orphaned: false,
        });

        let target = &mut self.writing_mut(parent)?.blocks[idx];
        let (a, b) = target.isolate(range);
        for s in &mut target.spans[a..b] {
            s.link = Some(child);
        }
        target.normalize();
        Ok(child)
    }

    fn tunnel_target(&self, current: LayerId, target: LayerId) -> Result<&Layer, WorkspaceError> {
        if current == target {
            return Err(WorkspaceError::SelfTunnel);
        }
        let t = self
            .layers
            .get(&target)
            .filter(|_| !self.is_binned(target))
            .ok_or(WorkspaceError::UnknownTarget(target.to_string()))?;
        if t.kind() == LayerKind::Document {
            return Err(WorkspaceError::TypeMismatch {
                layer: target,
                actual: LayerKind::Document,
                expected: LayerKind::Writing,
            });
        }
        Ok(t)
    }

    pub fn tunnel(
        &self,
        current: LayerId,
        target: LayerId,
        cursor: BlockId,
    ) -> Result<TunnelView, WorkspaceError> {
        self.block_index(current, cursor)?;
        let t = self.tunnel_target(current, target)?;
        Ok(TunnelView {
            layer: target,
            name: t.name.clone(),
            blocks: t.view_blocks(),
        })
    }

    /// Copy the selection into `current` as a new block after `cursor`, and
    /// remember it as cross-layer context.
    pub fn import_selection(
        &mut self,
        current: LayerId,
        cursor: BlockId,
        selection: Selection,
    ) -> Result<BlockId, WorkspaceError> {
        let idx = self.block_index(current, cursor)?;
        let t = self.tunnel_target(current, selection.layer)?;
        let src = t
            .view_blocks()
            .into_iter()
            .find(|b| b.id == selection.block)
            .ok_or(WorkspaceError::UnknownBlock {
                layer: selection.layer,
                block: selection.block,
            })?;
        let range = selection.range.unwrap_or(CharRange::new(0, src.char_len()));
        src.check_range(range)?;
        let text = crate::text::slice_chars(&src.text(), range).to_string();

        let id = self.fresh_block();
        let mut block = Block::paragraph(id, text.clone(), SpanAttribution::human());
        block.source = Some(BlockSource {
            layer: selection.layer,
            block: selection.block,
        });
        self.writing_mut(current)?.blocks.insert(idx + 1, block);
        self.layer_mut(current)?.touch();
        self.cross_context.entry(current).or_default().push(Excerpt {
            layer: selection.layer,
            block: selection.block,
            text,
        });
        Ok(id)
    }

    /// Excerpts waiting for the next prompt on `layer`; consumed by the call.
    pub(crate) fn take_cross_context(&mut self, layer: LayerId) -> Vec<Excerpt> {
        self.cross_context.remove(&layer).unwrap_or_default()
    }
}
