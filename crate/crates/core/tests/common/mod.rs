#![allow(dead_code)]

pub mod prompts;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use strata_core::layer::BlockDraft;
use strata_core::workspace::{MemberRef, MetaUpdate, Target};
use strata_core::{CharRange, LayerId, Placement, Workspace};

pub const WORDS: &[&str] = &[
    "layer", "canvas", "copyright", "model", "creators", "draft", "argument", "evidence", "the",
    "of", "and", "a", "to", "fair", "use", "law", "naïve", "café", "über", "essay", "—", "ünïcödé",
];

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn sentence<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words.max(1));
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Between 1 and `max` blocks, mostly paragraphs.
pub fn drafts<R: Rng>(rng: &mut R, max: usize) -> Vec<BlockDraft> {
    let n = rng.random_range(1..=max);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                BlockDraft::heading(rng.random_range(1..=3), sentence(rng, 4))
            } else {
                BlockDraft::paragraph(sentence(rng, 12))
            }
        })
        .collect()
}

fn pick<R: Rng>(rng: &mut R, w: &Workspace) -> Option<LayerId> {
    let ids: Vec<LayerId> = w
        .visible_layers()
        .filter(|l| l.writing().is_some() && !l.folded)
        .map(|l| l.id)
        .collect();
    (!ids.is_empty()).then(|| ids[rng.random_range(0..ids.len())])
}

/// A workspace built by a random sequence of operations. Failed operations
/// are ignored, as a user's rejected gesture would be.
pub fn workspace(seed: u64) -> Workspace {
    let mut rng = rng(seed);
    let mut w = Workspace::default();
    if rng.random_bool(0.7) {
        w.update_meta(MetaUpdate {
            purpose: Some(sentence(&mut rng, 8)),
            audience: Some("technology creators and potentially legal professionals".into()),
            intent: rng.random_bool(0.5).then(|| sentence(&mut rng, 6)),
            domain_requirements: None,
        });
    }
    if rng.random_bool(0.3) {
        let text = sentence(&mut rng, 40);
        w.attach_reference("source", text).unwrap();
    }
    let steps = rng.random_range(1..25);
    for _ in 0..steps {
        match rng.random_range(0..12) {
            0..=3 => {
                let d = drafts(&mut rng, 8);
                w.new_writing_layer(&sentence(&mut rng, 2), Some(d)).unwrap();
            }
            4 => {
                let _ = w.new_scratchpad("notes");
            }
            5 => {
                if let Some(l) = pick(&mut rng, &w) {
                    let n = w.layer(l).unwrap().writing().unwrap().blocks.len();
                    if n > 1 {
                        let _ = w.tear(l, &[rng.random_range(1..n)]);
                    }
                }
            }
            6 => {
                if let (Some(a), Some(b)) = (pick(&mut rng, &w), pick(&mut rng, &w)) {
                    let _ = w.combine(a, b);
                }
            }
            7 => {
                if let (Some(a), Some(b)) = (pick(&mut rng, &w), pick(&mut rng, &w)) {
                    let members = [MemberRef::Layer(a), MemberRef::Layer(b)];
                    let _ = if rng.random_bool(0.5) { w.stack(&members) } else { w.cluster(&members) };
                }
            }
            8 => {
                if let Some(l) = pick(&mut rng, &w) {
                    let _ = w.tag(Target::Layer(l), ["todo", "evidence", "claim"][rng.random_range(0..3)]);
                }
            }
            9 => {
                if let Some(l) = pick(&mut rng, &w) {
                    let _ = w.fold(l, sentence(&mut rng, 6));
                }
            }
            10 => {
                if let Some(l) = pick(&mut rng, &w) {
                    let b = &w.layer(l).unwrap().writing().unwrap().blocks[0];
                    let (id, len) = (b.id, b.char_len());
                    if len > 1 {
                        let _ = w.create_sublayer(l, id, CharRange::new(0, len / 2), "detail");
                    }
                }
            }
            _ => {
                if let Some(l) = pick(&mut rng, &w) {
                    if rng.random_bool(0.3) {
                        let _ = w.bin_layer(l);
                    } else {
                        let z = rng.random_range(1000..1_000_000);
                        let p = Placement::new(
                            rng.random_range(-500.0..500.0),
                            rng.random_range(-500.0..500.0),
                            rng.random_range(50.0..400.0),
                            rng.random_range(50.0..400.0),
                            z,
                        );
                        let _ = w.move_layer(l, p);
                    }
                }
            }
        }
    }
    w.take_events();
    w
}
