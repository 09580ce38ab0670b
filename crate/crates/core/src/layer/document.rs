use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Block;
use crate::compiler::Directive;
use crate::error::WorkspaceError;
use crate::ids::{BlockId, LayerId};
use crate::text::CharRange;

/// Position of a span inside a compiled document: block index, span index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanAddress {
    pub block: usize,
    pub span: usize,
}

impl SpanAddress {
    pub fn new(block: usize, span: usize) -> Self {
        SpanAddress { block, span }
    }
}

impl fmt::Display for SpanAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.block, self.span)
    }
}

impl FromStr for SpanAddress {
    type Err = WorkspaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WorkspaceError::BadAddress(s.to_string());
        let (a, b) = s.split_once('.').ok_or_else(bad)?;
        Ok(SpanAddress {
            block: a.parse().map_err(|_| bad())?,
            span: b.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefKind {
    Verbatim,
    CompilerEdit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub layer: LayerId,
    pub block: BlockId,
    pub range: CharRange,
    pub kind: RefKind,
}

/// Where a document span came from: a source block (copied or rewritten),
/// or text the compiler inserted with no single source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "ref", rename_all = "kebab-case")]
pub enum HyperRef {
    Source(SourceRef),
    CompilerEdit,
}

impl HyperRef {
    pub fn highlight(&self) -> bool {
        match self {
            HyperRef::Source(r) => r.kind == RefKind::CompilerEdit,
            HyperRef::CompilerEdit => true,
        }
    }

    pub fn verbatim(&self) -> Option<&SourceRef> {
        match self {
            HyperRef::Source(r) if r.kind == RefKind::Verbatim => Some(r),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub title: String,
    pub level: u8,
    pub block: usize,
}

/// Result of tracing a document span back to its origin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traceback {
    pub address: SpanAddress,
    pub hyper_ref: HyperRef,
    pub highlight: bool,
    /// For edited spans, the nearest verbatim reference before the span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<SourceRef>,
}

/// Content of a compiled, non-editable document layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentContent {
    pub index: Vec<SectionEntry>,
    pub blocks: Vec<Block>,
    #[serde(with = "address_map")]
    pub hyper_refs: BTreeMap<SpanAddress, HyperRef>,
    pub created_from: Vec<LayerId>,
    pub directives_used: Vec<Directive>,
    /// Compile-time notices (ordering fallback, dropped replacements).
    #[serde(default)]
    pub notices: Vec<String>,
}

impl DocumentContent {
    pub fn span_count(&self) -> usize {
        self.blocks.iter().map(|b| b.spans.len()).sum()
    }

    pub fn addresses(&self) -> impl Iterator<Item = SpanAddress> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(bi, b)| (0..b.spans.len()).map(move |si| SpanAddress::new(bi, si)))
    }

    pub fn plain_text(&self) -> String {
        self.blocks
            .iter()
            .map(Block::text)
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn highlighted(&self) -> impl Iterator<Item = (&SpanAddress, &HyperRef)> {
        self.hyper_refs.iter().filter(|(_, r)| r.highlight())
    }

    pub fn traceback(&self, address: SpanAddress) -> Result<Traceback, WorkspaceError> {
        let hyper_ref = *self
            .hyper_refs
            .get(&address)
            .ok_or_else(|| WorkspaceError::BadAddress(address.to_string()))?;
        let context = if hyper_ref.highlight() {
            self.hyper_refs
                .range(..address)
                .rev()
                .find_map(|(_, r)| r.verbatim().copied())
        } else {
            None
        };
        Ok(Traceback {
            address,
            hyper_ref,
            highlight: hyper_ref.highlight(),
            context,
        })
    }
}

mod address_map {
    use super::*;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<SpanAddress, HyperRef>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry<'a> {
            at: &'a SpanAddress,
            #[serde(flatten)]
            to: &'a HyperRef,
        }
        s.collect_seq(map.iter().map(|(at, to)| Entry { at, to }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<SpanAddress, HyperRef>, D::Error> {
        #[derive(Deserialize)]
        struct Entry {
            at: SpanAddress,
            #[serde(flatten)]
            to: HyperRef,
        }
        let entries: Vec<Entry> = Vec::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.at, e.to)).collect())
    }
}
