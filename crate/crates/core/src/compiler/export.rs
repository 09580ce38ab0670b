//! Plain text, markup and provenance sidecar exports of a compiled document.

use serde::Serialize;

use crate::layer::{BlockKind, DocumentContent, HyperRef, SectionEntry, SpanAddress};
use crate::compiler::Directive;
use crate::ids::LayerId;

pub fn export_text(doc: &DocumentContent) -> String {
    doc.plain_text()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

/// Markdown-like markup. Compiler-edited spans are wrapped in `<mark>`.
pub fn export_markup(doc: &DocumentContent) -> String {
    let mut blocks = Vec::with_capacity(doc.blocks.len());
    for (bi, b) in doc.blocks.iter().enumerate() {
        let mut line = match b.kind {
            BlockKind::Heading { level } => format!("{} ", "#".repeat(level as usize)),
            _ => String::new(),
        };
        for (si, s) in b.spans.iter().enumerate() {
            let text = escape(&s.text);
            let marked = doc
                .hyper_refs
                .get(&SpanAddress::new(bi, si))
                .is_some_and(HyperRef::highlight);
            if marked && !text.is_empty() {
                line.push_str(&format!("<mark>{text}</mark>"));
            } else {
                line.push_str(&text);
            }
        }
        blocks.push(line);
    }
    let mut out = blocks.join("\n\n");
    out.push('\n');
    out
}

#[derive(Serialize)]
struct SpanRecord<'a> {
    address: String,
    text: &'a str,
    #[serde(flatten)]
    hyper_ref: &'a HyperRef,
    highlight: bool,
}

#[derive(Serialize)]
struct Provenance<'a> {
    spans: Vec<SpanRecord<'a>>,
    index: &'a [SectionEntry],
    created_from: &'a [LayerId],
    directives: &'a [Directive],
    notices: &'a [String],
}

/// JSON sidecar mapping every span to its source.
pub fn export_provenance(doc: &DocumentContent) -> serde_json::Value {
    let spans = doc
        .addresses()
        .filter_map(|a| {
            let r = doc.hyper_refs.get(&a)?;
            Some(SpanRecord {
                address: a.to_string(),
                text: &doc.blocks[a.block].spans[a.span].text,
                hyper_ref: r,
                highlight: r.highlight(),
            })
        })
        .collect();
    let p = Provenance {
        spans,
        index: &doc.index,
        created_from: &doc.created_from,
        directives: &doc.directives_used,
        notices: &doc.notices,
    };
    serde_json::to_value(p).expect("provenance serializes")
}
