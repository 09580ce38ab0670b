//! Shared fixtures for the benchmarks under `benches/`.

use strata_core::{BlockDraft, LayerId, Workspace};

const WORDS: &[&str] = &["layer", "draft", "the", "argument", "holds", "because", "evidence", "shows", "otherwise", "and"];

/// A paragraph of `n` words, varied by `seed`.
pub fn paragraph(seed: usize, n: usize) -> String {
    (0..n).map(|i| WORDS[(seed * 7 + i * 3) % WORDS.len()]).collect::<Vec<_>>().join(" ")
}

/// A workspace with `layers` writing layers of `blocks` paragraphs each.
pub fn workspace(layers: usize, blocks: usize) -> (Workspace, Vec<LayerId>) {
    let mut w = Workspace::default();
    let ids = (0..layers)
        .map(|l| {
            let drafts = (0..blocks).map(|b| BlockDraft::paragraph(paragraph(l * blocks + b, 40))).collect();
            w.new_writing_layer(&format!("Layer {l}"), Some(drafts)).unwrap()
        })
        .collect();
    (w, ids)
}
