//! Layer templatizer and orchestrator: turn a task, the meta layer and layer
//! snapshots into one ordered, byte-stable prompt.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::schema::SchemaKind;
use super::task::{RenderTarget, TaskKnowledge};
use super::PromptError;
use crate::digest::digest16;
use crate::ids::{BlockId, DocId, LayerId, TaskId};
use crate::layer::{Block, Layer, MetaLayer};
use crate::text::{char_len, split_chars};
use crate::workspace::Excerpt;

/// Marks where generated text will land. User text can never contain it.
pub const ANCHOR: &str = "⟦ANCHOR⟧";

/// Make `text` safe to embed: every opening bracket of the sentinel alphabet
/// is followed by a backslash, so the sentinel cannot be forged.
pub fn escape(text: &str) -> String {
    text.replace('⟦', "⟦\\")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    BasePrompt,
    MetaContext,
    CrossLayerContext,
    LayerContent,
    UserParameters,
    OutputConstraints,
}

impl SegmentKind {
    pub const ORDER: [SegmentKind; 6] = [
        SegmentKind::BasePrompt,
        SegmentKind::MetaContext,
        SegmentKind::CrossLayerContext,
        SegmentKind::LayerContent,
        SegmentKind::UserParameters,
        SegmentKind::OutputConstraints,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SegmentKind::BasePrompt => "base-prompt",
            SegmentKind::MetaContext => "meta-context",
            SegmentKind::CrossLayerContext => "cross-layer-context",
            SegmentKind::LayerContent => "layer-content",
            SegmentKind::UserParameters => "user-parameters",
            SegmentKind::OutputConstraints => "output-constraints",
        }
    }

    pub fn header(self) -> String {
        format!("[[{}]]", self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
}

/// Where the result goes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "kebab-case")]
pub enum AnchorPlan {
    InPlace {
        layer: LayerId,
        block: BlockId,
        offset: usize,
    },
    NewLayers {
        origin: LayerId,
        names: Vec<String>,
    },
    WholeLayer {
        layer: LayerId,
    },
    Annotations {
        layers: Vec<LayerId>,
    },
    Document {
        layers: Vec<LayerId>,
    },
}

/// Structured view of what went into the prompt, for backends that need to
/// address ids (the mock) and for inspection.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub layers: Vec<ContextLayer>,
    pub references: Vec<ContextReference>,
    #[serde(default)]
    pub target_words: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLayer {
    pub id: LayerId,
    pub name: String,
    pub blocks: Vec<ContextBlock>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub id: BlockId,
    pub heading: bool,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextReference {
    pub doc: DocId,
    pub chars: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub task: TaskId,
    pub task_version: u32,
    pub schema: SchemaKind,
    pub render_target: RenderTarget,
    pub instance_count: u32,
    pub segments: Vec<Segment>,
    pub anchor_plan: AnchorPlan,
    pub context: PromptContext,
}

impl ComposedPrompt {
    /// The exact text sent to a backend.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            out.push_str(&s.kind.header());
            out.push('\n');
            out.push_str(&s.text);
        }
        out.push('\n');
        out
    }

    pub fn digest(&self) -> String {
        digest16(&self.serialize())
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    /// Split into the prompts actually issued. Only multi-layer output is
    /// spread across instances; everything else runs once.
    pub fn instances(&self) -> Vec<ComposedPrompt> {
        let k = self.instance_count.max(1) as usize;
        let SchemaKind::NewLayers(n) = self.schema else {
            return vec![self.single()];
        };
        if k == 1 || n < 2 {
            return vec![self.single()];
        }
        let k = k.min(n);
        (0..k)
            .map(|i| {
                let share = n / k + usize::from(i < n % k);
                let mut p = self.single();
                p.schema = SchemaKind::NewLayers(share);
                let note = format!("instance: {} of {k}", i + 1);
                match p.segments.iter_mut().find(|s| s.kind == SegmentKind::UserParameters) {
                    Some(s) => {
                        s.text.push('\n');
                        s.text.push_str(&note);
                    }
                    None => {
                        let at = p
                            .segments
                            .iter()
                            .position(|s| s.kind == SegmentKind::OutputConstraints)
                            .unwrap_or(p.segments.len());
                        p.segments.insert(
                            at,
                            Segment {
                                kind: SegmentKind::UserParameters,
                                text: note,
                            },
                        );
                    }
                }
                if let Some(s) = p
                    .segments
                    .iter_mut()
                    .find(|s| s.kind == SegmentKind::OutputConstraints)
                {
                    s.text = p.schema.constraints();
                }
                p
            })
            .collect()
    }

    fn single(&self) -> ComposedPrompt {
        let mut p = self.clone();
        p.instance_count = 1;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeOptions {
    /// Character budget for the layer-content segment.
    pub budget_chars: usize,
    /// Characters of each external reference included in meta context.
    pub reference_excerpt_chars: usize,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions {
            budget_chars: 24_000,
            reference_excerpt_chars: 4_000,
        }
    }
}

/// Inputs to [`compose`]. `layers[0]` is the layer the task was invoked on.
#[derive(Clone, Debug)]
pub struct ComposeInput<'a> {
    pub meta: &'a MetaLayer,
    pub layers: &'a [Layer],
    pub anchor: Option<(BlockId, usize)>,
    pub user_prompt: &'a str,
    pub params: &'a [(String, String)],
    pub cross_context: &'a [Excerpt],
    /// Part count for multi-layer tasks when it differs from the default.
    pub new_layers: Option<usize>,
    /// Names for new layers when the caller fixes them.
    pub names: Option<Vec<String>>,
    pub target_words: Option<usize>,
}

impl<'a> ComposeInput<'a> {
    pub fn new(meta: &'a MetaLayer, layers: &'a [Layer]) -> Self {
        ComposeInput {
            meta,
            layers,
            anchor: None,
            user_prompt: "",
            params: &[],
            cross_context: &[],
            new_layers: None,
            names: None,
            target_words: None,
        }
    }
}

/// Output of the templatizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Templatized {
    pub anchor_plan: AnchorPlan,
    pub schema: SchemaKind,
    pub layer_content: String,
    pub output_constraints: String,
}

fn block_line(block: &Block, anchor: Option<usize>) -> String {
    let text = block.text();
    let body = match anchor {
        Some(offset) => {
            let (head, tail) = split_chars(&text, offset);
            format!("{}{ANCHOR}{}", escape(head), escape(tail))
        }
        None => escape(&text),
    };
    format!("[{}] {}: {}", block.id, block.kind.label(), body)
}

/// Render one layer, keeping head and tail blocks (and always the anchor
/// block) within `budget` characters.
fn render_layer(layer: &Layer, anchor: Option<(BlockId, usize)>, budget: usize) -> String {
    let blocks = layer.view_blocks();
    let lines: Vec<String> = blocks
        .iter()
        .map(|b| block_line(b, anchor.filter(|(id, _)| *id == b.id).map(|(_, o)| o)))
        .collect();
    let mut keep = vec![false; lines.len()];
    let total: usize = lines.iter().map(|l| char_len(l) + 1).sum();
    if total <= budget {
        keep.iter_mut().for_each(|k| *k = true);
    } else {
        let mut used = 0;
        if let Some(i) = anchor.and_then(|(id, _)| blocks.iter().position(|b| b.id == id)) {
            keep[i] = true;
            used += char_len(&lines[i]) + 1;
        }
        let (mut lo, mut hi) = (0usize, lines.len());
        let mut from_head = true;
        while lo < hi {
            let i = if from_head { lo } else { hi - 1 };
            if !keep[i] {
                let cost = char_len(&lines[i]) + 1;
                if used + cost > budget {
                    break;
                }
                used += cost;
                keep[i] = true;
            }
            if from_head {
                lo += 1;
            } else {
                hi -= 1;
            }
            from_head = !from_head;
        }
    }

    let mut out = format!("== Layer {}: {} ==", layer.id, escape(&layer.name));
    let mut skipped = 0;
    for (line, kept) in lines.iter().zip(&keep) {
        if *kept {
            if skipped > 0 {
                let _ = write!(out, "\n[... {skipped} blocks omitted ...]");
                skipped = 0;
            }
            out.push('\n');
            out.push_str(line);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        let _ = write!(out, "\n[... {skipped} blocks omitted ...]");
    }
    out
}

/// Decide where output goes and render the layer content with the anchor
/// marked.
pub fn templatize(
    task: &TaskKnowledge,
    input: &ComposeInput<'_>,
    options: &ComposeOptions,
) -> Result<Templatized, PromptError> {
    let primary = input.layers.first().ok_or(PromptError::NoLayers)?;
    let schema = match (task.schema, input.new_layers) {
        (SchemaKind::NewLayers(_), Some(n)) if n >= 1 => SchemaKind::NewLayers(n),
        (SchemaKind::NewLayers(_), Some(n)) => {
            return Err(PromptError::BadParameter(format!("layer count {n} must be at least 1")))
        }
        (s, _) => s,
    };

    let anchor = match task.render_target {
        RenderTarget::InPlace => {
            let (block, offset) = input
                .anchor
                .ok_or_else(|| PromptError::BadAnchor(format!("{} needs an anchor", task.id)))?;
            let b = primary
                .view_blocks()
                .into_iter()
                .find(|b| b.id == block)
                .ok_or_else(|| PromptError::BadAnchor(format!("no block {block} in {}", primary.id)))?;
            if offset > b.char_len() {
                return Err(PromptError::BadAnchor(format!(
                    "offset {offset} past the end of {block}"
                )));
            }
            Some((block, offset))
        }
        _ => None,
    };

    let ids: Vec<LayerId> = input.layers.iter().map(|l| l.id).collect();
    let anchor_plan = match task.render_target {
        RenderTarget::InPlace => {
            let (block, offset) = anchor.expect("checked above");
            AnchorPlan::InPlace {
                layer: primary.id,
                block,
                offset,
            }
        }
        RenderTarget::NewLayers => {
            let count = match schema {
                SchemaKind::NewLayers(n) => n,
                _ => 1,
            };
            let names = match &input.names {
                Some(names) => names.clone(),
                None if matches!(schema, SchemaKind::NewLayers(_)) => (1..=count)
                    .map(|k| format!("{} — variant {k}", primary.name))
                    .collect(),
                None => vec![format!("{} (structured)", primary.name)],
            };
            AnchorPlan::NewLayers {
                origin: primary.id,
                names,
            }
        }
        RenderTarget::Annotations => AnchorPlan::Annotations { layers: ids },
        RenderTarget::Document => AnchorPlan::Document { layers: ids },
        RenderTarget::Preview | RenderTarget::FoldSummary | RenderTarget::Scratchpad => {
            AnchorPlan::WholeLayer { layer: primary.id }
        }
    };

    let budget = options.budget_chars / input.layers.len().max(1);
    let layer_content = input
        .layers
        .iter()
        .map(|l| render_layer(l, anchor.filter(|_| l.id == primary.id), budget))
        .collect::<Vec<_>>()
        .join("\n\n");

    Ok(Templatized {
        anchor_plan,
        schema,
        layer_content,
        output_constraints: schema.constraints(),
    })
}

fn meta_context(meta: &MetaLayer, options: &ComposeOptions) -> String {
    let mut lines: Vec<String> = meta
        .labeled_fields()
        .into_iter()
        .map(|(label, value)| format!("{label}: {}", escape(value.trim())))
        .collect();
    for r in &meta.external_references {
        let (excerpt, rest) = split_chars(&r.text, options.reference_excerpt_chars);
        let mut entry = format!(
            "Reference {} \"{}\" ({} chars):\n{}",
            r.doc,
            escape(&r.title),
            char_len(&r.text),
            escape(excerpt)
        );
        if !rest.is_empty() {
            entry.push_str("\n[... truncated ...]");
        }
        lines.push(entry);
    }
    lines.join("\n")
}

fn cross_context(excerpts: &[Excerpt]) -> String {
    excerpts
        .iter()
        .map(|e| format!("From {} block {}:\n{}", e.layer, e.block, escape(&e.text)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn user_parameters(user_prompt: &str, params: &[(String, String)]) -> String {
    let mut lines = Vec::new();
    if !user_prompt.trim().is_empty() {
        lines.push(format!("Request: {}", escape(user_prompt.trim())));
    }
    for (k, v) in params {
        lines.push(format!("{}: {}", escape(k), escape(v)));
    }
    lines.join("\n")
}

fn context_of(input: &ComposeInput<'_>) -> PromptContext {
    PromptContext {
        layers: input
            .layers
            .iter()
            .map(|l| ContextLayer {
                id: l.id,
                name: l.name.clone(),
                blocks: l
                    .view_blocks()
                    .iter()
                    .map(|b| ContextBlock {
                        id: b.id,
                        heading: matches!(b.kind, crate::layer::BlockKind::Heading { .. }),
                        text: b.text(),
                    })
                    .collect(),
            })
            .collect(),
        references: input
            .meta
            .external_references
            .iter()
            .map(|r| ContextReference {
                doc: r.doc,
                chars: char_len(&r.text),
            })
            .collect(),
        target_words: input.target_words,
    }
}

/// Assemble the prompt in canonical segment order, omitting empty optional
/// segments.
pub fn compose(
    task: &TaskKnowledge,
    input: &ComposeInput<'_>,
    options: &ComposeOptions,
) -> Result<ComposedPrompt, PromptError> {
    let t = templatize(task, input, options)?;
    let candidates = [
        (SegmentKind::BasePrompt, task.base_prompt.trim().to_string()),
        (SegmentKind::MetaContext, meta_context(input.meta, options)),
        (SegmentKind::CrossLayerContext, cross_context(input.cross_context)),
        (SegmentKind::LayerContent, t.layer_content),
        (SegmentKind::UserParameters, user_parameters(input.user_prompt, input.params)),
        (SegmentKind::OutputConstraints, t.output_constraints),
    ];
    let segments = candidates
        .into_iter()
        .filter(|(_, text)| !text.is_empty())
        .map(|(kind, text)| Segment { kind, text })
        .collect();
    Ok(ComposedPrompt {
        task: task.id.clone(),
        task_version: task.version,
        schema: t.schema,
        render_target: task.render_target,
        instance_count: task.instance_count,
        segments,
        anchor_plan: t.anchor_plan,
        context: context_of(input),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::BlockId;
    use crate::layer::{BlockDraft, BlockKind, LayerContent, Span, WritingContent};
    use crate::prompt::TaskRegistry;
    use proptest::prelude::*;

    fn layer(id: u64, name: &str, texts: &[&str]) -> Layer {
        let blocks = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Block::new(BlockId(id * 100 + i as u64), BlockKind::Paragraph, vec![Span::human(*t)]))
            .collect();
        Layer::new(
            LayerId(id),
            name,
            LayerContent::Writing(WritingContent {
                blocks,
                parent_link: None,
            }),
        )
    }

    #[test]
    fn anchor_lands_at_block_offset() {
        let reg = TaskRegistry::builtin();
        let layers = [layer(1, "Intro", &["one", "two", "three"])];
        let meta = MetaLayer::default();
        let mut input = ComposeInput::new(&meta, &layers);
        input.anchor = Some((BlockId(102), 0));
        let p = compose(reg.lookup("elaborate").unwrap(), &input, &ComposeOptions::default()).unwrap();
        let content = &p.segment(SegmentKind::LayerContent).unwrap().text;
        assert!(content.contains(&format!("[B102] paragraph: {ANCHOR}three")));
        assert_eq!(content.matches(ANCHOR).count(), 1);
        assert!(p.segment(SegmentKind::MetaContext).is_none());
        assert_eq!(
            p.anchor_plan,
            AnchorPlan::InPlace {
                layer: LayerId(1),
                block: BlockId(102),
                offset: 0
            }
        );
    }

    #[test]
    fn bad_anchors() {
        let reg = TaskRegistry::builtin();
        let layers = [layer(1, "Intro", &["one"])];
        let meta = MetaLayer::default();
        let mut input = ComposeInput::new(&meta, &layers);
        let task = reg.lookup("elaborate").unwrap();
        assert!(matches!(compose(task, &input, &ComposeOptions::default()), Err(PromptError::BadAnchor(_))));
        input.anchor = Some((BlockId(100), 4));
        assert!(matches!(compose(task, &input, &ComposeOptions::default()), Err(PromptError::BadAnchor(_))));
        input.anchor = Some((BlockId(999), 0));
        assert!(matches!(compose(task, &input, &ComposeOptions::default()), Err(PromptError::BadAnchor(_))));
    }

    #[test]
    fn tone_variants_plan_names() {
        let reg = TaskRegistry::builtin();
        let layers = [layer(4, "Draft", &["text"])];
        let meta = MetaLayer::default();
        let input = ComposeInput::new(&meta, &layers);
        let p = compose(reg.lookup("tone-variants").unwrap(), &input, &ComposeOptions::default()).unwrap();
        assert_eq!(
            p.anchor_plan,
            AnchorPlan::NewLayers {
                origin: LayerId(4),
                names: vec!["Draft — variant 1".into(), "Draft — variant 2".into()]
            }
        );
        let r = compose(reg.lookup("restructure").unwrap(), &input, &ComposeOptions::default()).unwrap();
        assert!(r
            .segment(SegmentKind::OutputConstraints)
            .unwrap()
            .text
            .contains("headings"));
    }

    #[test]
    fn user_text_cannot_forge_the_sentinel() {
        let reg = TaskRegistry::builtin();
        let layers = [layer(1, "L", &[ANCHOR, "x"])];
        let meta = MetaLayer::default();
        let mut input = ComposeInput::new(&meta, &layers);
        input.anchor = Some((BlockId(101), 0));
        input.user_prompt = "⟦ANCHOR⟧ please";
        let p = compose(reg.lookup("elaborate").unwrap(), &input, &ComposeOptions::default()).unwrap();
        let s = p.serialize();
        // One real anchor in layer content, one in the output constraints text.
        let content = &p.segment(SegmentKind::LayerContent).unwrap().text;
        assert_eq!(content.matches(ANCHOR).count(), 1);
        assert!(s.contains("⟦\\ANCHOR⟧ please"));
    }

    #[test]
    fn truncation_keeps_head_tail_and_anchor() {
        let reg = TaskRegistry::builtin();
        let texts: Vec<String> = (0..200).map(|i| format!("paragraph number {i} with some filler")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let layers = [layer(1, "Long", &refs)];
        let meta = MetaLayer::default();
        let mut input = ComposeInput::new(&meta, &layers);
        input.anchor = Some((BlockId(200), 0));
        let opts = ComposeOptions {
            budget_chars: 1000,
            ..Default::default()
        };
        let p = compose(reg.lookup("elaborate").unwrap(), &input, &opts).unwrap();
        let content = &p.segment(SegmentKind::LayerContent).unwrap().text;
        assert!(content.contains("paragraph number 0 "));
        assert!(content.contains("paragraph number 199 "));
        assert!(content.contains(&format!("{ANCHOR}paragraph number 100 ")));
        assert!(content.contains("blocks omitted"));
        assert!(char_len(content) < 1200);
    }

    #[test]
    fn instances_split_layer_count() {
        let reg = TaskRegistry::builtin();
        let layers = [layer(1, "L", &["x"])];
        let meta = MetaLayer::default();
        let mut input = ComposeInput::new(&meta, &layers);
        input.new_layers = Some(3);
        let mut task = reg.lookup("tone-variants").unwrap().clone();
        task.instance_count = 2;
        let p = compose(&task, &input, &ComposeOptions::default()).unwrap();
        let parts: Vec<SchemaKind> = p.instances().iter().map(|i| i.schema).collect();
        assert_eq!(parts, vec![SchemaKind::NewLayers(2), SchemaKind::NewLayers(1)]);
        task.instance_count = 1;
        let single = compose(&task, &input, &ComposeOptions::default()).unwrap();
        assert_eq!(single.instances(), vec![single.clone()]);
    }

    fn arb_meta() -> impl Strategy<Value = MetaLayer> {
        let field = prop_oneof![Just(String::new()), "[A-Za-z][A-Za-z ,.]{0,30}"];
        (field.clone(), field.clone(), field.clone(), field).prop_map(|(p, a, i, d)| MetaLayer {
            purpose: p,
            audience: a,
            intent: i,
            domain_requirements: d,
            external_references: vec![],
        })
    }

    proptest! {
        #[test]
        fn segments_in_canonical_order_and_meta_verbatim(
            meta in arb_meta(),
            prompt in "[a-z ]{0,20}",
            texts in proptest::collection::vec("[a-zA-Z ]{0,30}", 1..6),
            with_ctx in any::<bool>(),
            task_ix in 0usize..13,
        ) {
            let reg = TaskRegistry::builtin();
            let task = reg.iter().nth(task_ix).unwrap();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let layers = [layer(1, "A", &refs), layer(2, "B", &refs)];
            let ctx = [Excerpt { layer: LayerId(9), block: BlockId(9), text: "quoted".into() }];
            let mut input = ComposeInput::new(&meta, &layers);
            input.anchor = Some((BlockId(100), 0));
            input.user_prompt = &prompt;
            if with_ctx {
                input.cross_context = &ctx;
            }
            let p = compose(task, &input, &ComposeOptions::default()).unwrap();
            let s = p.serialize();
            let positions: Vec<usize> = SegmentKind::ORDER
                .iter()
                .filter_map(|k| s.find(&k.header()))
                .collect();
            prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(positions.len(), p.segments.len());
            for (label, value) in meta.labeled_fields() {
                let seg = &p.segment(SegmentKind::MetaContext).unwrap().text;
                let expected = format!("{label}: {}", value.trim());
                prop_assert!(seg.contains(&expected));
            }
            prop_assert_eq!(p.segment(SegmentKind::MetaContext).is_some(), !meta.is_empty());
            prop_assert_eq!(p.segment(SegmentKind::CrossLayerContext).is_some(), with_ctx);
            // Determinism.
            let again = compose(task, &input, &ComposeOptions::default()).unwrap();
            prop_assert_eq!(again.serialize(), s);
        }
    }

    #[test]
    fn drafts_helper_is_usable() {
        // BlockDraft is the public way to seed layers; make sure headings render.
        let d = BlockDraft::heading(2, "Title");
        let b = Block::new(BlockId(1), d.kind, vec![Span::human(d.text)]);
        assert_eq!(block_line(&b, None), "[B1] heading 2: Title");
    }
}
