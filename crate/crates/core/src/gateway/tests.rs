use std::time::Duration;

use sha2::{Digest, Sha256};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::sync::mpsc::unbounded_channel;

use super::*;
use crate::engine::Engine;
use crate::ids::PlaceholderId;
use crate::layer::{BlockDraft, MetaLayer, Origin, PlaceholderState};
use crate::prompt::{compose, ComposeInput, ComposeOptions, SchemaKind, TaskRegistry};
use crate::workspace::{Workspace, WorkspaceEvent};

fn sha16(s: &str) -> String {
    let h = Sha256::digest(s.as_bytes());
    h[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn sample_layer(paragraphs: &[&str]) -> (Workspace, crate::ids::LayerId) {
    let mut w = Workspace::default();
    let drafts = paragraphs.iter().map(|p| BlockDraft::paragraph(*p)).collect();
    let id = w.new_writing_layer("Draft", Some(drafts)).unwrap();
    (w, id)
}

fn prompt_for(task: &str, w: &Workspace, layer: crate::ids::LayerId, anchor: bool) -> ComposedPrompt {
    let reg = TaskRegistry::builtin();
    let layers = vec![w.layer(layer).unwrap().clone()];
    let meta = MetaLayer::default();
    let mut input = ComposeInput::new(&meta, &layers);
    if anchor {
        let b = layers[0].writing().unwrap().blocks[0].id;
        input.anchor = Some((b, 0));
    }
    input.user_prompt = "Write a concise description of LLMs";
    compose(reg.lookup(task).unwrap(), &input, &ComposeOptions::default()).unwrap()
}

fn request(prompt: ComposedPrompt) -> GenerationRequest {
    GenerationRequest {
        id: RequestId(900),
        origin: (LayerId(1), prompt.task.clone()),
        prompt,
        issued_at_ms: 0,
    }
}

async fn run(gw: &Gateway, req: &GenerationRequest) -> (GenerationResult, Vec<StreamItem>) {
    let (tx, mut rx) = unbounded_channel();
    let r = gw.generate(req, &tx, &CancelToken::new()).await;
    drop(tx);
    let mut items = Vec::new();
    while let Some(i) = rx.recv().await {
        items.push(i);
    }
    (r, items)
}

#[tokio::test]
async fn mock_elaborate_matches_digest_oracle() {
    let (w, l) = sample_layer(&["LLMs are everywhere."]);
    let p = prompt_for("elaborate", &w, l, true);
    let expected = format!("[(elaborate)·{}·generated text]", sha16(&p.serialize()));
    let (r, items) = run(&Gateway::mock(), &request(p)).await;
    assert_eq!(r.status, ResultStatus::Ok);
    assert_eq!(r.parts, Some(Parsed::Text(expected.clone())));
    let streamed: String = items
        .iter()
        .map(|i| match i {
            StreamItem::Chunk(c) => c.as_str(),
            StreamItem::Restart => panic!("no restart expected"),
        })
        .collect();
    assert_eq!(streamed, expected);
}

#[tokio::test]
async fn tone_variants_yield_two_nonempty_parts() {
    let (w, l) = sample_layer(&["one", "two", "three"]);
    let p = prompt_for("tone-variants", &w, l, false);
    let (r, _) = run(&Gateway::mock(), &request(p)).await;
    let Some(Parsed::Layers(layers)) = r.parts else { panic!("{r:?}") };
    assert_eq!(layers.len(), 2);
    assert!(layers.iter().all(|l| l.len() == 3 && l.iter().all(|p| !p.is_empty())));
}

#[tokio::test]
async fn fan_out_merges_instances_in_order() {
    let (w, l) = sample_layer(&["one"]);
    let mut p = prompt_for("tone-variants", &w, l, false);
    p.schema = SchemaKind::NewLayers(3);
    p.instance_count = 2;
    let (r, _) = run(&Gateway::mock(), &request(p)).await;
    let Some(Parsed::Layers(layers)) = r.parts else { panic!("{r:?}") };
    assert_eq!(layers.len(), 3);
    // Instance 1 produced two variants, instance 2 one.
    assert!(layers[1][0].contains("variant 2"));
    assert!(layers[2][0].contains("variant 1"));
}

#[tokio::test]
async fn one_repair_then_fail() {
    let (w, l) = sample_layer(&["x"]);
    let p = prompt_for("feedback", &w, l, false);

    let once = Gateway::new(Arc::new(MockBackend::with_fault(MockConfig::default(), MockFault::MalformedOnce)));
    let (r, items) = run(&once, &request(p.clone())).await;
    assert_eq!(r.status, ResultStatus::Ok);
    assert!(items.contains(&StreamItem::Restart));

    let always = Gateway::new(Arc::new(MockBackend::with_fault(MockConfig::default(), MockFault::Malformed)));
    let (r, items) = run(&always, &request(p)).await;
    assert_eq!(r.status, ResultStatus::SchemaInvalid);
    assert!(r.parts.is_none());
    assert_eq!(items.iter().filter(|i| **i == StreamItem::Restart).count(), 1);
}

#[tokio::test]
async fn backend_failure_and_timeout() {
    let (w, l) = sample_layer(&["x"]);
    let p = prompt_for("elaborate", &w, l, true);
    let failing = Gateway::new(Arc::new(MockBackend::with_fault(
        MockConfig::default(),
        MockFault::Fail("connection refused".into()),
    )));
    assert_eq!(run(&failing, &request(p.clone())).await.0.status, ResultStatus::BackendError);

    let slow = Gateway::new(Arc::new(MockBackend::new(MockConfig {
        latency: Duration::from_millis(200),
        chunk_chars: 4,
    })))
    .with_timeout(Duration::from_millis(20));
    assert_eq!(run(&slow, &request(p)).await.0.status, ResultStatus::Timeout);
}

#[tokio::test]
async fn cancellation_stops_generation() {
    let (w, l) = sample_layer(&["x"]);
    let p = prompt_for("elaborate", &w, l, true);
    let gw = Gateway::new(Arc::new(MockBackend::new(MockConfig {
        latency: Duration::from_millis(50),
        chunk_chars: 2,
    })));
    let token = CancelToken::new();
    let (tx, _rx) = unbounded_channel();
    let t2 = token.clone();
    tokio::spawn(async move {
        tokio::time::sleep(Duration::from_millis(10)).await;
        t2.cancel();
    });
    let r = gw.generate(&request(p), &tx, &token).await;
    assert_eq!(r.status, ResultStatus::Cancelled);
}

#[test]
fn descriptor_config_and_key_fallback() {
    let d = BackendDescriptor::from_toml(
        "backend = \"live\"\nmodel = \"m\"\nendpoint = \"http://127.0.0.1:1/v1\"\ntimeout_secs = 5\n",
    )
    .unwrap();
    assert_eq!(d.max_retries, 2);
    let (b, warn) = build_backend(&d, |_| None);
    assert_eq!(b.descriptor().backend, BackendKind::Mock);
    assert!(warn.unwrap().contains("STRATA_API_KEY"));
    let (b, warn) = build_backend(&d, |_| Some("k".into()));
    assert_eq!(b.descriptor().backend, BackendKind::Live);
    assert!(warn.is_none());
    assert!(BackendDescriptor::from_toml("backend = \"live\"\nmodel = \"m\"\n").is_err());
}

/// Serve one canned HTTP response per connection.
async fn canned_server(response: &'static str) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        while let Ok((mut sock, _)) = listener.accept().await {
            let mut buf = vec![0u8; 65536];
            let _ = sock.read(&mut buf).await;
            let _ = sock.write_all(response.as_bytes()).await;
            let _ = sock.shutdown().await;
        }
    });
    format!("http://{addr}/v1")
}

fn live(endpoint: String) -> Gateway {
    let mut d = BackendDescriptor::mock();
    d.backend = BackendKind::Live;
    d.endpoint = Some(endpoint);
    Gateway::new(Arc::new(LiveBackend::new(d, "bad-key".into())))
}

#[tokio::test(flavor = "multi_thread")]
async fn live_bad_credentials_is_backend_error() {
    let url = canned_server("HTTP/1.1 401 Unauthorized\r\nContent-Length: 11\r\nConnection: close\r\n\r\nbad api key").await;
    let (w, l) = sample_layer(&["x"]);
    let p = prompt_for("elaborate", &w, l, true);
    let (r, _) = run(&live(url), &request(p)).await;
    assert_eq!(r.status, ResultStatus::BackendError);
    assert!(r.error.unwrap().contains("authentication"));
}

#[tokio::test(flavor = "multi_thread")]
async fn live_streams_server_sent_events() {
    let url = canned_server(concat!(
        "HTTP/1.1 200 OK\r\nContent-Type: text/event-stream\r\nConnection: close\r\n\r\n",
        "data: {\"choices\":[{\"delta\":{\"content\":\"Hello \"}}]}\n\n",
        "data: {\"choices\":[{\"delta\":{\"content\":\"world\"}}]}\n\n",
        "data: [DONE]\n\n"
    ))
    .await;
    let (w, l) = sample_layer(&["x"]);
    let p = prompt_for("elaborate", &w, l, true);
    let (r, items) = run(&live(url), &request(p)).await;
    assert_eq!(r.parts, Some(Parsed::Text("Hello world".into())));
    assert_eq!(items.len(), 2);
}

// ---- broadcaster ----------------------------------------------------------

fn inline_setup(gw: Gateway) -> (Broadcaster, LayerId, PlaceholderId, GenerationRequest) {
    let (w, l) = sample_layer(&["LLMs are everywhere."]);
    let p = prompt_for("elaborate", &w, l, true);
    let engine = Engine::new(w);
    let b = Broadcaster::new(engine.clone(), gw);
    let id = b.next_request_id();
    let ph = engine
        .mutate(move |w| {
            let block = w.layer(l)?.writing().unwrap().blocks[0].id;
            let ph = w.open_placeholder(l, block, 0, true, "elaborate".into(), Origin::Friend("danny".into()))?;
            w.placeholders.get_mut(&ph).unwrap().request = Some(id);
            Ok(ph)
        })
        .unwrap();
    let mut req = request(p);
    req.id = id;
    (b, l, ph, req)
}

#[tokio::test]
async fn dispatch_streams_then_fills() {
    let (b, l, ph, req) = inline_setup(Gateway::mock());
    let mut rx = b.engine().subscribe();
    let d = b.dispatch(req.clone(), RequestTarget::Placeholder { layer: l, placeholder: ph }).await;
    assert!(matches!(d, Delivery::Applied { .. }), "{d:?}");
    let snap = b.engine().snapshot();
    let p = snap.placeholder(ph).unwrap();
    assert_eq!(p.state, PlaceholderState::Filled);
    assert!(snap.applied_requests.contains(&req.id));
    let mut saw_chunk = false;
    let mut filled_after_chunk = false;
    while let Ok(ev) = rx.try_recv() {
        if let crate::engine::EngineEvent::Notice { event, .. } = ev {
            match event {
                WorkspaceEvent::StreamChunk { .. } => saw_chunk = true,
                WorkspaceEvent::PlaceholderChanged {
                    state: PlaceholderState::Filled,
                    ..
                } => filled_after_chunk = saw_chunk,
                _ => {}
            }
        }
    }
    assert!(filled_after_chunk);
    // Publishing the same request again is a no-op.
    let again = GenerationResult {
        request: req.id,
        parts: Some(Parsed::Text("x".into())),
        raw_text: "x".into(),
        status: ResultStatus::Ok,
        error: None,
    };
    let rev = b.engine().revision();
    assert!(matches!(b.publish(again).await, Delivery::Duplicate { .. }));
    assert_eq!(b.engine().revision(), rev);
}

#[tokio::test]
async fn schema_gate_blocks_malformed_output() {
    let gw = Gateway::new(Arc::new(MockBackend::with_fault(MockConfig::default(), MockFault::Malformed)));
    let (b, l, ph, req) = inline_setup(gw);
    let before = b.engine().snapshot();
    let d = b.dispatch(req, RequestTarget::Placeholder { layer: l, placeholder: ph }).await;
    assert!(matches!(d, Delivery::Failed { status: ResultStatus::SchemaInvalid, .. }));
    assert_eq!(b.stats().published, 0);
    let after = b.engine().snapshot();
    assert_eq!(after.placeholder(ph).unwrap().state, PlaceholderState::Rejected);
    assert!(after.applied_requests.is_empty());
    // The slot block the placeholder created is gone again.
    assert_eq!(before.layer(l).unwrap().writing().unwrap().blocks.len(), 2);
    assert_eq!(after.layer(l).unwrap().writing().unwrap().blocks.len(), 1);
}

#[tokio::test]
async fn result_for_retired_layer_is_archived() {
    let (w, l) = sample_layer(&["a", "b"]);
    let p = prompt_for("tone-variants", &w, l, false);
    let engine = Engine::new(w);
    let b = Broadcaster::new(engine.clone(), Gateway::mock());
    let id = b.next_request_id();
    b.register(
        id,
        RequestTarget::NewLayers {
            origin: l,
            names: vec!["v1".into(), "v2".into()],
            friend: "tara".into(),
            tag: None,
        },
    );
    engine.mutate(move |w| w.tear(l, &[1])).unwrap();
    let rev = engine.revision();
    let mut rx = engine.subscribe();
    let (tx, _rx) = unbounded_channel();
    let mut req = request(p);
    req.id = id;
    let r = b.gateway().generate(&req, &tx, &CancelToken::new()).await;
    let d = b.publish(r).await;
    assert!(matches!(d, Delivery::Archived { .. }), "{d:?}");
    assert_eq!(engine.revision(), rev);
    let ev = rx.recv().await.unwrap();
    assert!(matches!(
        ev,
        crate::engine::EngineEvent::Notice {
            event: WorkspaceEvent::ResultArchived { .. },
            ..
        }
    ));
}

#[tokio::test]
async fn request_ids_continue_after_reload() {
    let (b, _, _, req) = inline_setup(Gateway::mock());
    assert_eq!(req.id, RequestId(1));
    let snap = (*b.engine().snapshot()).clone();
    let b2 = Broadcaster::new(Engine::new(snap), Gateway::mock());
    assert_eq!(b2.next_request_id(), RequestId(2));
}
