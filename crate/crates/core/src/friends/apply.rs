//! Landing validated results in the workspace, and the view-state operations
//! on what friends leave behind.

use super::{guidance, FeedbackAnnotation, PeekPreview, EMPTY_COMPONENT, PEEK, TEMPLATE};
use crate::error::WorkspaceError;
use crate::gateway::broadcast::{Applied, RequestTarget};
use crate::ids::*;
use crate::layer::*;
use crate::prompt::Parsed;
use crate::text::{char_len, CharRange};
use crate::workspace::{AnnotationKind, ComparisonAnnotation, Workspace, WorkspaceEvent};

fn generated(friend: &FriendId) -> SpanAttribution {
    SpanAttribution::new(Origin::Friend(friend.clone()), true)
}

impl Workspace {
    /// Apply `parts` to `target`. Fails without side effects when the parts do
    /// not fit the target or the target no longer exists.
    pub(crate) fn apply_result(
        &mut self,
        request: RequestId,
        target: &RequestTarget,
        parts: Parsed,
    ) -> Result<Applied, WorkspaceError> {
        let mismatch = || WorkspaceError::SchemaInvalid(request);
        match (target, parts) {
            (RequestTarget::Placeholder { placeholder, .. }, Parsed::Text(text)) => {
                let p = self.placeholder(*placeholder)?;
                if p.request.is_some_and(|r| r != request) {
                    return Err(WorkspaceError::UnknownRequest(request));
                }
                self.fill_placeholder(*placeholder, &text)?;
                Ok(Applied::Filled {
                    placeholder: *placeholder,
                })
            }
            (
                RequestTarget::NewLayers {
                    origin,
                    names,
                    friend,
                    tag,
                },
                Parsed::Layers(layers),
            ) => {
                if layers.len() != names.len() {
                    return Err(mismatch());
                }
                let mut out = Vec::new();
                for (k, (name, paragraphs)) in names.iter().zip(layers).enumerate() {
                    let blocks: Vec<Block> = if tag.is_some() && paragraphs == [EMPTY_COMPONENT] {
                        let id = self.fresh_block();
                        vec![Block::paragraph(id, guidance(name), generated(&FriendId::new(TEMPLATE)))]
                    } else {
                        paragraphs
                            .into_iter()
                            .map(|p| {
                                let id = self.fresh_block();
                                Block::paragraph(id, p, generated(friend))
                            })
                            .collect()
                    };
                    let placement = self.placement_beside(*origin, k);
                    let id = self.new_generated_layer(name.clone(), blocks, &format!("friend:{friend}"), placement);
                    if let Some(t) = tag {
                        self.layer_mut(id)?.tags.insert(t.clone());
                    }
                    out.push(id);
                }
                Ok(Applied::Layers { layers: out })
            }
            (RequestTarget::Sections { origin, name, friend }, Parsed::Sections(sections)) => {
                let blocks: Vec<Block> = sections
                    .into_iter()
                    .map(|s| {
                        let id = self.fresh_block();
                        Block::new(id, s.kind, vec![Span::new(s.text, generated(friend))])
                    })
                    .collect();
                let placement = self.placement_beside(*origin, 0);
                let id = self.new_generated_layer(name.clone(), blocks, &format!("friend:{friend}"), placement);
                Ok(Applied::Layers { layers: vec![id] })
            }
            (RequestTarget::Feedback { layer, persona }, Parsed::Annotations(parts)) => {
                let l = self.writing_layer(*layer)?;
                let valid: Vec<_> = parts
                    .into_iter()
                    .filter(|p| {
                        let ok = p.layer == *layer && l.block(p.block).is_some();
                        if !ok {
                            log::warn!("dropping annotation for unknown address {} {}", p.layer, p.block);
                        }
                        ok
                    })
                    .collect();
                self.annotations
                    .retain(|_, a| !(a.layer == *layer && a.persona == *persona));
                let mut ids = Vec::new();
                for p in valid {
                    let id = AnnotationId(self.fresh());
                    self.annotations.insert(
                        id,
                        FeedbackAnnotation {
                            id,
                            layer: *layer,
                            block: p.block,
                            persona: persona.clone(),
                            note: p.note,
                            visible: true,
                            request,
                        },
                    );
                    ids.push(id);
                }
                Ok(Applied::Annotations { annotations: ids })
            }
            (
                RequestTarget::Comparison {
                    left,
                    right,
                    instruction,
                },
                Parsed::Annotations(parts),
            ) => {
                let mut annotations = Vec::new();
                for p in parts {
                    if p.layer != *left && p.layer != *right {
                        log::warn!("dropping comparison note on unrelated layer {}", p.layer);
                        continue;
                    }
                    let range = match p.range {
                        Some(r) => r,
                        None => {
                            let len = self
                                .layer(p.layer)?
                                .view_blocks()
                                .iter()
                                .find(|b| b.id == p.block)
                                .map_or(0, Block::char_len);
                            CharRange::new(0, len)
                        }
                    };
                    if range.is_empty() || !self.valid_address(p.layer, p.block, range) {
                        log::warn!("dropping comparison note at invalid address {} {} {range}", p.layer, p.block);
                        continue;
                    }
                    let kind = match p.kind.as_deref().map(str::trim) {
                        Some("similarity") => AnnotationKind::Similarity,
                        _ => AnnotationKind::Difference,
                    };
                    annotations.push(ComparisonAnnotation {
                        layer: p.layer,
                        block: p.block,
                        range,
                        kind,
                        note: p.note,
                    });
                }
                let session = self.open_comparison(*left, *right, instruction.clone(), annotations)?;
                Ok(Applied::Comparison { session })
            }
            (RequestTarget::Preview { layer }, Parsed::Text(text)) => {
                self.writing_layer(*layer)?;
                self.previews.retain(|_, p| p.layer != *layer);
                let id = PreviewId(self.fresh());
                self.previews.insert(
                    id,
                    PeekPreview {
                        id,
                        layer: *layer,
                        text,
                        request,
                    },
                );
                Ok(Applied::Preview { preview: id })
            }
            (RequestTarget::FoldSummary { layer }, Parsed::Text(text)) => {
                self.fold(*layer, text)?;
                Ok(Applied::Folded { layer: *layer })
            }
            (
                RequestTarget::Scratchpad {
                    layer,
                    question,
                    grounded,
                },
                Parsed::Cited { answer, citations },
            ) => {
                let refs = &self.meta.external_references;
                let citations: Vec<Citation> = citations
                    .into_iter()
                    .filter_map(|c| {
                        let Some(r) = refs.iter().find(|r| r.doc == c.doc) else {
                            log::warn!("dropping citation of unknown document {}", c.doc);
                            return None;
                        };
                        if c.range.is_empty() || !c.range.is_valid_within(char_len(&r.text)) {
                            log::warn!("dropping citation with bad range {} in {}", c.range, c.doc);
                            return None;
                        }
                        Some(Citation {
                            doc: c.doc,
                            excerpt: c.range,
                        })
                    })
                    .collect();
                let ramesh = FriendId::new(super::RAMESH);
                let answer: Vec<Block> = answer
                    .into_iter()
                    .map(|p| {
                        let id = self.fresh_block();
                        Block::paragraph(id, p, generated(&ramesh))
                    })
                    .collect();
                let entry = self.fresh_block();
                let unverified = !grounded || citations.is_empty();
                let l = self.layer_mut(*layer)?;
                let LayerContent::Scratchpad(pad) = &mut l.content else {
                    return Err(WorkspaceError::TypeMismatch {
                        layer: *layer,
                        actual: l.kind(),
                        expected: LayerKind::Scratchpad,
                    });
                };
                pad.entries.push(ScratchEntry {
                    id: entry,
                    question: question.clone(),
                    answer,
                    citations,
                    unverified,
                });
                l.touch();
                Ok(Applied::Entry { layer: *layer, entry })
            }
            _ => Err(mismatch()),
        }
    }

    /// Drop text streamed so far; the generation is starting over.
    pub(crate) fn restart_stream(&mut self, id: PlaceholderId) -> Result<(), WorkspaceError> {
        let p = self
            .placeholders
            .get_mut(&id)
            .ok_or(WorkspaceError::UnknownPlaceholder(id))?;
        p.streamed.clear();
        Ok(())
    }

    /// Show or hide every feedback annotation on `layer`.
    pub fn toggle_annotations(&mut self, layer: LayerId, visible: bool) -> Result<usize, WorkspaceError> {
        self.layer(layer)?;
        let mut n = 0;
        for a in self.annotations.values_mut().filter(|a| a.layer == layer) {
            a.visible = visible;
            n += 1;
        }
        Ok(n)
    }

    pub fn annotations_on(&self, layer: LayerId) -> impl Iterator<Item = &FeedbackAnnotation> {
        self.annotations.values().filter(move |a| a.layer == layer)
    }

    pub fn preview(&self, id: PreviewId) -> Result<&PeekPreview, WorkspaceError> {
        self.previews.get(&id).ok_or(WorkspaceError::UnknownPreview(id))
    }

    /// Turn a preview into a real block at the end of its layer.
    pub fn accept_preview(&mut self, id: PreviewId) -> Result<BlockId, WorkspaceError> {
        let p = self.preview(id)?.clone();
        if self.is_binned(p.layer) {
            return Err(WorkspaceError::Binned(p.layer));
        }
        let block = self.fresh_block();
        let b = Block::paragraph(block, p.text, generated(&FriendId::new(PEEK)));
        self.writing_mut(p.layer)?.blocks.push(b);
        self.layer_mut(p.layer)?.touch();
        self.previews.remove(&id);
        self.emit(WorkspaceEvent::PreviewResolved {
            preview: id,
            layer: p.layer,
            accepted: true,
        });
        Ok(block)
    }

    pub fn dismiss_preview(&mut self, id: PreviewId) -> Result<(), WorkspaceError> {
        let p = self.previews.remove(&id).ok_or(WorkspaceError::UnknownPreview(id))?;
        self.emit(WorkspaceEvent::PreviewResolved {
            preview: id,
            layer: p.layer,
            accepted: false,
        });
        Ok(())
    }
}
