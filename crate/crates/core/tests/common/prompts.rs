use std::path::{Path, PathBuf};

use serde::Deserialize;

use strata_core::layer::BlockDraft;
use strata_core::prompt::{compose, ComposeInput, ComposedPrompt, ComposeOptions, TaskRegistry};
use strata_core::workspace::{Excerpt, MetaUpdate};
use strata_core::{Layer, Workspace};

pub const AUDIENCE: &str = "technology creators and potentially legal professionals";

#[derive(Deserialize)]
struct Fixture {
    meta: MetaUpdate,
    #[serde(default)]
    reference: Vec<Reference>,
    layer: Vec<FixtureLayer>,
    case: Vec<Case>,
}

#[derive(Deserialize)]
struct Reference {
    title: String,
    text: String,
}

#[derive(Deserialize)]
struct FixtureLayer {
    name: String,
    #[serde(default)]
    blocks: Vec<String>,
    #[serde(default)]
    scratchpad: bool,
}

#[derive(Deserialize)]
pub struct Case {
    pub task: String,
    layers: Vec<String>,
    #[serde(default)]
    anchor: Option<usize>,
    prompt: String,
    #[serde(default)]
    params: Vec<(String, String)>,
    #[serde(default)]
    target_words: Option<usize>,
    #[serde(default)]
    cross: Vec<(String, usize)>,
}

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/fixtures/prompts.toml")
}

pub fn goldens_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/goldens")
}

fn load() -> Fixture {
    let text = std::fs::read_to_string(fixture_path()).expect("fixture corpus");
    toml::from_str(&text).expect("fixture corpus parses")
}

fn build(f: &Fixture) -> Workspace {
    let mut w = Workspace::default();
    w.update_meta(f.meta.clone());
    for r in &f.reference {
        w.attach_reference(&r.title, r.text.clone()).unwrap();
    }
    for l in &f.layer {
        if l.scratchpad {
            w.new_scratchpad(&l.name).unwrap();
            continue;
        }
        let drafts = l
            .blocks
            .iter()
            .map(|b| match b.strip_prefix("# ") {
                Some(h) => BlockDraft::heading(1, h),
                None => BlockDraft::paragraph(b.as_str()),
            })
            .collect();
        w.new_writing_layer(&l.name, Some(drafts)).unwrap();
    }
    w
}

fn by_name<'w>(w: &'w Workspace, name: &str) -> &'w Layer {
    w.layers.values().find(|l| l.name == name).unwrap_or_else(|| panic!("no layer {name}"))
}

/// Every fixture case composed with a meta layer as given, or with the meta
/// cleared when `with_meta` is false.
pub fn compose_all(with_meta: bool) -> Vec<(String, ComposedPrompt)> {
    let mut f = load();
    if !with_meta {
        f.meta = MetaUpdate {
            purpose: Some(String::new()),
            audience: Some(String::new()),
            intent: Some(String::new()),
            domain_requirements: Some(String::new()),
        };
        f.reference.clear();
    }
    let w = build(&f);
    let reg = TaskRegistry::builtin();
    f.case
        .iter()
        .map(|c| {
            let layers: Vec<Layer> = c.layers.iter().map(|n| by_name(&w, n).clone()).collect();
            let cross: Vec<Excerpt> = c
                .cross
                .iter()
                .map(|(name, ix)| {
                    let b = &by_name(&w, name).writing().unwrap().blocks[*ix];
                    Excerpt {
                        layer: by_name(&w, name).id,
                        block: b.id,
                        text: b.text(),
                    }
                })
                .collect();
            let mut input = ComposeInput::new(&w.meta, &layers);
            input.anchor = c.anchor.map(|ix| {
                let b = &layers[0].writing().unwrap().blocks[ix];
                (b.id, b.char_len())
            });
            input.user_prompt = &c.prompt;
            input.params = &c.params;
            input.cross_context = &cross;
            input.target_words = c.target_words;
            let task = reg.lookup(&c.task).unwrap();
            (c.task.clone(), compose(task, &input, &ComposeOptions::default()).unwrap())
        })
        .collect()
}

pub fn render_all(with_meta: bool) -> Vec<(String, String)> {
    compose_all(with_meta).into_iter().map(|(t, p)| (t, p.serialize())).collect()
}

/// Compare rendered prompts with the checked-in goldens. With
/// `UPDATE_GOLDENS=1` the goldens are rewritten instead.
pub fn check_goldens() -> Result<usize, String> {
    let update = std::env::var("UPDATE_GOLDENS").is_ok_and(|v| v == "1");
    let dir = goldens_dir();
    let rendered = render_all(true);
    let mut mismatched = Vec::new();
    for (task, text) in &rendered {
        let path = dir.join(format!("{task}.txt"));
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, text).unwrap();
            continue;
        }
        match std::fs::read_to_string(&path) {
            Ok(golden) if golden == *text => {}
            Ok(_) => mismatched.push(format!("{task}: differs")),
            Err(e) => mismatched.push(format!("{task}: {e}")),
        }
    }
    if mismatched.is_empty() {
        Ok(rendered.len())
    } else {
        Err(mismatched.join("; "))
    }
}
