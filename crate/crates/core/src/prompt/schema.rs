//! Output schemas: how a task's response must be shaped, and how to parse it.
//!
//! Multi-part responses use a delimiter grammar:
//!
//! ```text
//! <<<PART 1>>>
//! first part
//! <<<END>>>
//! <<<PART 2>>>
//! second part
//! <<<END>>>
//! ```
//!
//! Single-text schemas also accept bare text with no delimiters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{BlockId, DocId, LayerId};
use crate::layer::BlockKind;
use crate::text::CharRange;

pub const PART_OPEN: &str = "<<<PART ";
pub const PART_END: &str = "<<<END>>>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemaKind {
    FreeText,
    InlineParagraph,
    NewLayers(usize),
    AnnotationList,
    Ordering,
    StructuredSections,
    CitedAnswer,
    BlockReplacements,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("unknown schema kind {0:?}")]
    UnknownKind(String),
    #[error("malformed output: {0}")]
    Malformed(String),
    #[error("expected {expected} parts, got {actual}")]
    PartCount { expected: usize, actual: usize },
    #[error("part {part}: {message}")]
    BadPart { part: usize, message: String },
    #[error("empty output")]
    Empty,
}

impl fmt::Display for SchemaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaKind::FreeText => f.write_str("free-text"),
            SchemaKind::InlineParagraph => f.write_str("inline-paragraph"),
            SchemaKind::NewLayers(n) => write!(f, "n-new-layers({n})"),
            SchemaKind::AnnotationList => f.write_str("annotation-list"),
            SchemaKind::Ordering => f.write_str("ordering"),
            SchemaKind::StructuredSections => f.write_str("structured-sections"),
            SchemaKind::CitedAnswer => f.write_str("cited-answer"),
            SchemaKind::BlockReplacements => f.write_str("block-replacements"),
        }
    }
}

impl FromStr for SchemaKind {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(n) = s
            .strip_prefix("n-new-layers(")
            .and_then(|r| r.strip_suffix(')'))
        {
            return match n.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(SchemaKind::NewLayers(n)),
                _ => Err(SchemaError::UnknownKind(s.to_string())),
            };
        }
        Ok(match s {
            "free-text" => SchemaKind::FreeText,
            "inline-paragraph" => SchemaKind::InlineParagraph,
            "annotation-list" => SchemaKind::AnnotationList,
            "ordering" => SchemaKind::Ordering,
            "structured-sections" => SchemaKind::StructuredSections,
            "cited-answer" => SchemaKind::CitedAnswer,
            "block-replacements" => SchemaKind::BlockReplacements,
            other => return Err(SchemaError::UnknownKind(other.to_string())),
        })
    }
}

impl TryFrom<String> for SchemaKind {
    type Error = SchemaError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SchemaKind> for String {
    fn from(k: SchemaKind) -> String {
        k.to_string()
    }
}

/// One annotation-list entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationPart {
    pub layer: LayerId,
    pub block: BlockId,
    #[serde(default)]
    pub range: Option<CharRange>,
    #[serde(default)]
    pub kind: Option<String>,
    pub note: String,
}

/// A heading or paragraph from a structured-sections response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionPart {
    pub kind: BlockKind,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationPart {
    pub doc: DocId,
    pub range: CharRange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementPart {
    pub layer: LayerId,
    pub block: BlockId,
    pub text: String,
}

/// A response that passed its schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Parsed {
    Text(String),
    /// Each entry is the paragraphs of one new layer.
    Layers(Vec<Vec<String>>),
    Annotations(Vec<AnnotationPart>),
    Ordering(Vec<LayerId>),
    Sections(Vec<SectionPart>),
    Cited {
        answer: Vec<String>,
        citations: Vec<CitationPart>,
    },
    Replacements(Vec<ReplacementPart>),
}

/// Split delimited output into part bodies. Returns `None` when the text
/// carries no delimiters at all.
pub fn split_parts(raw: &str) -> Result<Option<Vec<String>>, SchemaError> {
    if !raw.contains(PART_OPEN) && !raw.contains(PART_END) {
        return Ok(None);
    }
    let mut parts = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in raw.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix(PART_OPEN) {
            if current.is_some() {
                return Err(SchemaError::Malformed("part opened before the previous one ended".into()));
            }
            let k = rest
                .strip_suffix(">>>")
                .and_then(|n| n.trim().parse::<usize>().ok())
                .ok_or_else(|| SchemaError::Malformed(format!("bad part header {t:?}")))?;
            if k != parts.len() + 1 {
                return Err(SchemaError::Malformed(format!("part {k} out of sequence")));
            }
            current = Some(Vec::new());
        } else if t == PART_END {
            let body = current
                .take()
                .ok_or_else(|| SchemaError::Malformed("end marker without a part".into()))?;
            parts.push(body.join("\n").trim().to_string());
        } else if let Some(body) = current.as_mut() {
            body.push(line);
        } else if !t.is_empty() {
            return Err(SchemaError::Malformed(format!("text outside parts: {t:?}")));
        }
    }
    if current.is_some() {
        return Err(SchemaError::Malformed("unterminated part".into()));
    }
    Ok(Some(parts))
}

fn paragraphs(text: &str) -> Vec<String> {
    text.split("\n\n")
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// `key: value` fields; a `note:` or `text:` field swallows the rest.
fn fields(body: &str, part: usize) -> Result<Vec<(String, String)>, SchemaError> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut lines = body.lines();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(':').ok_or_else(|| SchemaError::BadPart {
            part,
            message: format!("expected `key: value`, got {line:?}"),
        })?;
        let key = k.trim().to_ascii_lowercase();
        let mut value = v.trim().to_string();
        if key == "note" || key == "text" {
            let rest: Vec<&str> = lines.by_ref().collect();
            if !rest.is_empty() {
                value = format!("{value}\n{}", rest.join("\n")).trim().to_string();
            }
        }
        out.push((key, value));
    }
    Ok(out)
}

fn field<'a>(fs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    fs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn required<T: FromStr>(fs: &[(String, String)], key: &str, part: usize) -> Result<T, SchemaError> {
    field(fs, key)
        .ok_or_else(|| SchemaError::BadPart {
            part,
            message: format!("missing {key}"),
        })?
        .parse()
        .map_err(|_| SchemaError::BadPart {
            part,
            message: format!("unparseable {key}"),
        })
}

fn single_text(raw: &str) -> Result<String, SchemaError> {
    let text = match split_parts(raw)? {
        None => raw.trim().to_string(),
        Some(parts) if parts.len() == 1 => parts.into_iter().next().expect("one part"),
        Some(parts) => {
            return Err(SchemaError::PartCount {
                expected: 1,
                actual: parts.len(),
            })
        }
    };
    if text.is_empty() {
        return Err(SchemaError::Empty);
    }
    Ok(text)
}

/// Delimited parts; an empty reply is an empty list.
fn delimited(raw: &str) -> Result<Vec<String>, SchemaError> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    split_parts(raw)?.ok_or_else(|| SchemaError::Malformed("missing part delimiters".into()))
}

impl SchemaKind {
    /// Validate and parse `raw` against this schema.
    pub fn parse(&self, raw: &str) -> Result<Parsed, SchemaError> {
        match *self {
            SchemaKind::FreeText | SchemaKind::InlineParagraph => single_text(raw).map(Parsed::Text),
            SchemaKind::NewLayers(n) => {
                let parts = delimited(raw)?;
                if parts.len() != n {
                    return Err(SchemaError::PartCount {
                        expected: n,
                        actual: parts.len(),
                    });
                }
                let layers: Vec<Vec<String>> = parts.iter().map(|p| paragraphs(p)).collect();
                if let Some(k) = layers.iter().position(|l| l.is_empty()) {
                    return Err(SchemaError::BadPart {
                        part: k + 1,
                        message: "empty layer".into(),
                    });
                }
                Ok(Parsed::Layers(layers))
            }
            SchemaKind::AnnotationList => {
                let mut out = Vec::new();
                for (i, body) in delimited(raw)?.iter().enumerate() {
                    let part = i + 1;
                    let fs = fields(body, part)?;
                    let note: String = required(&fs, "note", part)?;
                    if note.is_empty() {
                        return Err(SchemaError::BadPart {
                            part,
                            message: "empty note".into(),
                        });
                    }
                    out.push(AnnotationPart {
                        layer: required(&fs, "layer", part)?,
                        block: required(&fs, "block", part)?,
                        range: field(&fs, "range")
                            .map(|r| {
                                r.parse().map_err(|_| SchemaError::BadPart {
                                    part,
                                    message: "unparseable range".into(),
                                })
                            })
                            .transpose()?,
                        kind: field(&fs, "kind").map(str::to_string),
                        note,
                    });
                }
                Ok(Parsed::Annotations(out))
            }
            SchemaKind::Ordering => {
                let body = single_text(raw)?;
                let ids = body
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.parse::<LayerId>().map_err(|_| SchemaError::BadPart {
                            part: 1,
                            message: format!("not a layer id: {t:?}"),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Parsed::Ordering(ids))
            }
            SchemaKind::StructuredSections => {
                let body = single_text(raw)?;
                let mut out = Vec::new();
                for para in paragraphs(&body) {
                    let hashes = para.chars().take_while(|c| *c == '#').count();
                    if hashes > 0 {
                        let level = u8::try_from(hashes).unwrap_or(u8::MAX);
                        let kind = BlockKind::heading(level).map_err(|_| SchemaError::BadPart {
                            part: 1,
                            message: format!("heading level {hashes} out of range"),
                        })?;
                        let (title, rest) = para.split_once('\n').unwrap_or((&para, ""));
                        out.push(SectionPart {
                            kind,
                            text: title[hashes..].trim().to_string(),
                        });
                        if !rest.trim().is_empty() {
                            out.push(SectionPart {
                                kind: BlockKind::Paragraph,
                                text: rest.trim().to_string(),
                            });
                        }
                    } else {
                        out.push(SectionPart {
                            kind: BlockKind::Paragraph,
                            text: para,
                        });
                    }
                }
                if !out.iter().any(|s| matches!(s.kind, BlockKind::Heading { .. })) {
                    return Err(SchemaError::Malformed("no headings".into()));
                }
                Ok(Parsed::Sections(out))
            }
            SchemaKind::CitedAnswer => {
                let body = single_text(raw)?;
                let mut answer = Vec::new();
                let mut citations = Vec::new();
                for line in body.lines() {
                    if let Some(c) = line.trim().strip_prefix("cite:") {
                        let mut it = c.split_whitespace();
                        let doc = it.next().and_then(|d| d.parse().ok());
                        let range = it.next().and_then(|r| r.parse().ok());
                        match (doc, range) {
                            (Some(doc), Some(range)) => citations.push(CitationPart { doc, range }),
                            _ => {
                                return Err(SchemaError::BadPart {
                                    part: 1,
                                    message: format!("bad citation {line:?}"),
                                })
                            }
                        }
                    } else {
                        answer.push(line);
                    }
                }
                let answer = paragraphs(&answer.join("\n"));
                if answer.is_empty() {
                    return Err(SchemaError::Empty);
                }
                Ok(Parsed::Cited { answer, citations })
            }
            SchemaKind::BlockReplacements => {
                let mut out = Vec::new();
                for (i, body) in delimited(raw)?.iter().enumerate() {
                    let part = i + 1;
                    let fs = fields(body, part)?;
                    let text: String = required(&fs, "text", part)?;
                    if text.is_empty() {
                        return Err(SchemaError::BadPart {
                            part,
                            message: "empty replacement".into(),
                        });
                    }
                    out.push(ReplacementPart {
                        layer: required(&fs, "layer", part)?,
                        block: required(&fs, "block", part)?,
                        text,
                    });
                }
                Ok(Parsed::Replacements(out))
            }
        }
    }

    /// The fenced output-format section appended to every prompt.
    pub fn constraints(&self) -> String {
        let wrap = "Wrap each part as:\n<<<PART k>>>\n(part body)\n<<<END>>>\nwith k counting from 1. Write nothing outside the parts.";
        let body = match *self {
            SchemaKind::FreeText => "Reply with plain text only.".to_string(),
            SchemaKind::InlineParagraph => {
                "Reply with a single paragraph of plain text that can be inserted at ⟦ANCHOR⟧. No headings, no lists, no preamble.".to_string()
            }
            SchemaKind::NewLayers(n) => format!(
                "Return exactly {n} part(s), one per new layer. Separate paragraphs inside a part with a blank line.\n{wrap}"
            ),
            SchemaKind::AnnotationList => format!(
                "Return one part per note. Each part holds the lines:\nlayer: <layer id>\nblock: <block id>\nrange: <start>-<end> (optional, character offsets)\nkind: <similarity|difference> (comparisons only)\nnote: <the note>\n{wrap}"
            ),
            SchemaKind::Ordering => {
                "Reply with every listed layer id exactly once, in the chosen order, separated by commas.".to_string()
            }
            SchemaKind::StructuredSections => {
                "Reply with the content organised under headings. Start heading paragraphs with # (level 1), ## or ###. Separate paragraphs with a blank line.".to_string()
            }
            SchemaKind::CitedAnswer => {
                "Reply with the answer as plain paragraphs. For each supporting excerpt add a line\ncite: <doc id> <start>-<end>\nusing character offsets into that reference.".to_string()
            }
            SchemaKind::BlockReplacements => format!(
                "Return one part per block you change. Each part holds the lines:\nlayer: <layer id>\nblock: <block id>\ntext: <replacement text for the whole block>\nLeave unchanged blocks out.\n{wrap}"
            ),
        };
        format!("```output-format\nschema: {self}\n{body}\n```")
    }
}
