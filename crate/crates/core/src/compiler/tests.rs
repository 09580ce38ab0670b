use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::engine::Engine;
use crate::gateway::{Gateway, MockBackend, MockConfig, MockFault};
use crate::ids::LayerId;
use crate::layer::BlockDraft;

fn workspace(layers: &[(&str, &[&str])]) -> (Workspace, Vec<LayerId>) {
    let mut w = Workspace::default();
    let ids = layers
        .iter()
        .map(|(name, paras)| {
            let drafts = paras.iter().map(|p| BlockDraft::paragraph(*p)).collect();
            w.new_writing_layer(name, Some(drafts)).unwrap()
        })
        .collect();
    (w, ids)
}

fn broadcaster(w: Workspace, fault: MockFault) -> Broadcaster {
    let backend = MockBackend::with_fault(MockConfig::default(), fault);
    Broadcaster::new(Engine::new(w), Gateway::new(Arc::new(backend)))
}

async fn run(b: &Broadcaster, spec: &CompileSpec) -> Result<DocumentContent, CompileError> {
    let tasks = TaskRegistry::builtin();
    let cx = CompileContext {
        broadcaster: b,
        tasks: &tasks,
        options: ComposeOptions::default(),
        now_ms: 0,
    };
    let id = compile(&cx, spec).await?;
    let snap = b.engine().snapshot();
    Ok(snap.layer(id).unwrap().document().unwrap().clone())
}

fn source_text(w: &Workspace, ids: &[LayerId]) -> String {
    ids.iter()
        .flat_map(|id| w.layer(*id).unwrap().view_blocks())
        .map(|b| b.text())
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[tokio::test]
async fn manual_compile_copies_every_span() {
    let (w, ids) = workspace(&[("B", &["one", "two"]), ("A", &["three"])]);
    let expected = source_text(&w, &ids);
    let b = broadcaster(w, MockFault::None);
    let doc = run(&b, &CompileSpec::manual(ids.clone())).await.unwrap();
    assert_eq!(doc.plain_text(), expected);
    assert_eq!(doc.created_from, ids);
    assert!(doc.highlighted().next().is_none());
    let t = doc.traceback(SpanAddress::new(2, 0)).unwrap();
    let src = t.hyper_ref.verbatim().unwrap();
    assert_eq!(src.layer, ids[1]);
    assert_eq!(src.range, CharRange::new(0, 5));
}

#[tokio::test]
async fn llm_order_sorts_through_the_mock() {
    let (w, ids) = workspace(&[("Zeta", &["z"]), ("Alpha", &["a"]), ("Mid", &["m"])]);
    let b = broadcaster(w, MockFault::None);
    let mut spec = CompileSpec::manual(ids.clone());
    spec.mode = CompileMode::LlmOrder;
    let doc = run(&b, &spec).await.unwrap();
    assert_eq!(doc.created_from, vec![ids[1], ids[2], ids[0]]);
    assert_eq!(doc.plain_text(), "a\n\nm\n\nz");
    assert!(doc.notices.is_empty());
}

#[tokio::test]
async fn invalid_ordering_falls_back_to_given_order() {
    let (w, ids) = workspace(&[("Zeta", &["z"]), ("Alpha", &["a"])]);
    let b = broadcaster(w, MockFault::InvalidOrdering);
    let mut rx = b.engine().subscribe();
    let mut spec = CompileSpec::manual(ids.clone());
    spec.mode = CompileMode::LlmOrder;
    let doc = run(&b, &spec).await.unwrap();
    assert_eq!(doc.created_from, ids);
    assert!(doc.notices[0].starts_with("ordering-invalid"));
    let mut saw = false;
    while let Ok(e) = rx.try_recv() {
        if let crate::engine::EngineEvent::Notice { event, .. } = e {
            saw |= matches!(event, WorkspaceEvent::OrderingInvalid { .. });
        }
    }
    assert!(saw);
}

#[tokio::test]
async fn consistency_edit_highlights_only_rewritten_block() {
    let (w, ids) = workspace(&[("A", &["first", "second"]), ("B", &["third"])]);
    let b = broadcaster(w, MockFault::None);
    let mut spec = CompileSpec::manual(ids.clone());
    spec.directives = vec![Directive::ConsistencyEdit];
    let doc = run(&b, &spec).await.unwrap();
    let hl: Vec<_> = doc.highlighted().map(|(a, _)| *a).collect();
    assert_eq!(hl, vec![SpanAddress::new(2, 0)]);
    assert!(doc.blocks[2].text().contains("edited"));
    let t = doc.traceback(SpanAddress::new(2, 0)).unwrap();
    assert!(t.highlight);
    // The nearest verbatim span before the edit is "second".
    assert_eq!(t.context.unwrap().block, doc.blocks[1].source.unwrap().block);
    assert_eq!(doc.directives_used, vec![Directive::ConsistencyEdit]);
}

#[tokio::test]
async fn target_length_lands_within_tolerance() {
    let para = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
    let (p1, p2, p3) = (para(120), para(80), para(100));
    let (w, ids) = workspace(&[("A", &[&p1, &p2]), ("B", &[&p3])]);
    let b = broadcaster(w, MockFault::None);
    let mut spec = CompileSpec::manual(ids);
    spec.directives = vec![Directive::TargetLength { words: 150 }];
    let doc = run(&b, &spec).await.unwrap();
    let words = word_count(&doc.plain_text());
    assert!((135..=165).contains(&words), "{words}");
    assert!(doc.notices.is_empty(), "{:?}", doc.notices);
}

#[tokio::test]
async fn transition_is_inserted_between_adjacent_members() {
    let (w, ids) = workspace(&[("A", &["alpha"]), ("B", &["beta"])]);
    let b = broadcaster(w, MockFault::None);
    let mut spec = CompileSpec::manual(ids.clone());
    spec.transitions = vec![TransitionSpec {
        after: ids[0],
        before: ids[1],
        prompt: None,
    }];
    let doc = run(&b, &spec).await.unwrap();
    assert_eq!(doc.blocks.len(), 3);
    assert_eq!(doc.hyper_refs[&SpanAddress::new(1, 0)], HyperRef::CompilerEdit);
    assert_eq!(doc.blocks[1].spans[0].attribution.origin(), &Origin::Transition);
}

#[test]
fn member_checks() {
    let (mut w, ids) = workspace(&[("A", &["a"]), ("B", &["b"])]);
    let spec = CompileSpec::manual(vec![]);
    assert_eq!(eligible_members(&w, &spec).unwrap_err().code(), "empty-compile");
    w.bin_layer(ids[0]).unwrap();
    let (m, notes) = eligible_members(&w, &CompileSpec::manual(ids.clone())).unwrap();
    assert_eq!(m, vec![ids[1]]);
    assert_eq!(notes.len(), 1);
    w.bin_layer(ids[1]).unwrap();
    assert_eq!(
        eligible_members(&w, &CompileSpec::manual(ids)).unwrap_err().code(),
        "empty-compile"
    );
}

#[test]
fn document_members_and_bad_addresses_are_refused() {
    let (mut w, ids) = workspace(&[("A", &["a"])]);
    let asm = Assembly {
        order: ids.clone(),
        layers: ids.iter().map(|i| (*i, w.layers[i].clone())).collect(),
        ..Assembly::default()
    };
    let doc = w.insert_document("Doc", &asm).unwrap();
    let e = eligible_members(&w, &CompileSpec::manual(vec![doc])).unwrap_err();
    assert_eq!(e.code(), "document-layer-member");
    assert_eq!(w.traceback(doc, SpanAddress::new(9, 0)).unwrap_err().code(), "bad-address");
    assert!(matches!(
        w.traceback(ids[0], SpanAddress::new(0, 0)),
        Err(WorkspaceError::TypeMismatch { .. })
    ));
    assert!(w.check_invariants().is_empty());
}

#[test]
fn permutation_check() {
    let ids = [LayerId(1), LayerId(2), LayerId(3)];
    assert!(check_permutation(&ids, &[LayerId(3), LayerId(1), LayerId(2)]).is_ok());
    assert!(check_permutation(&ids, &[LayerId(3), LayerId(1), LayerId(1)]).is_err());
    assert!(check_permutation(&ids, &[LayerId(3), LayerId(1)]).is_err());
    assert!(check_permutation(&ids, &[LayerId(3), LayerId(1), LayerId(9)]).is_err());
}

#[test]
fn markup_marks_edits_and_escapes() {
    let (w, ids) = workspace(&[("A", &["a < b", "tail"])]);
    let l = w.layers[&ids[0]].clone();
    let last = l.view_blocks()[1].id;
    let asm = Assembly {
        order: ids.clone(),
        layers: [(ids[0], l)].into(),
        replacements: [((ids[0], last), "new & short".to_string())].into(),
        ..Assembly::default()
    };
    let mut n = 1000;
    let doc = asm.build(|| {
        n += 1;
        BlockId(n)
    });
    assert_eq!(export_markup(&doc), "a &lt; b\n\n<mark>new &amp; short</mark>\n");
    let p = export_provenance(&doc);
    assert_eq!(p["spans"].as_array().unwrap().len(), 2);
    assert_eq!(p["spans"][1]["highlight"], true);
    assert_eq!(export_text(&doc), "a < b\n\nnew & short");
}

fn para_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec("[a-z ]{0,12}", 1..4), 1..5)
}

proptest! {
    #[test]
    fn manual_build_is_lossless(layers in para_strategy()) {
        let mut w = Workspace::default();
        let ids: Vec<LayerId> = layers
            .iter()
            .enumerate()
            .map(|(i, ps)| {
                let drafts = ps.iter().map(|p| BlockDraft::paragraph(p.clone())).collect();
                w.new_writing_layer(&format!("L{i}"), Some(drafts)).unwrap()
            })
            .collect();
        let expected = source_text(&w, &ids);
        let asm = Assembly {
            order: ids.clone(),
            layers: ids.iter().map(|i| (*i, w.layers[i].clone())).collect(),
            ..Assembly::default()
        };
        let id = w.insert_document("Doc", &asm).unwrap();
        let doc = w.layers[&id].document().unwrap();
        prop_assert_eq!(doc.plain_text(), expected);
        prop_assert_eq!(doc.hyper_refs.len(), doc.span_count());
        for a in doc.addresses() {
            let r = doc.hyper_refs[&a].verbatim().copied().unwrap();
            let src = w.layers[&r.layer].block(r.block).unwrap().text();
            let got = &doc.blocks[a.block].spans[a.span].text;
            prop_assert_eq!(crate::text::slice_chars(&src, r.range), got.as_str());
        }
        prop_assert!(w.check_invariants().is_empty());
    }
}
