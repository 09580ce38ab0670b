use std::collections::BTreeSet;
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};

use strata_cli::server::{self, ServeConfig, ServeError};
use strata_cli::session::lock_path;
use strata_core::gateway::BackendDescriptor;
use strata_core::{Command, Workspace, WorkspaceDelta};

struct Server {
    base: String,
    dir: tempfile::TempDir,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

async fn start(latency_ms: u64) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let mut backend = BackendDescriptor::mock();
    backend.mock_latency_ms = latency_ms;
    let config = ServeConfig {
        port: 0,
        workspace_dir: dir.path().to_path_buf(),
        backend,
    };
    let listener = server::bind(0).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel();
    let state = server::state(&config);
    tokio::spawn(server::serve(listener, state, async {
        let _ = rx.await;
    }));
    Server {
        base: format!("http://{addr}"),
        dir,
        stop: Some(tx),
    }
}

async fn post(base: &str, path: &str, body: Value) -> (u16, Value) {
    let r = reqwest::Client::new()
        .post(format!("{base}{path}"))
        .json(&body)
        .send()
        .await
        .unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

async fn get(base: &str, path: &str) -> Value {
    reqwest::get(format!("{base}{path}")).await.unwrap().json().await.unwrap()
}

async fn open(base: &str, name: &str) -> String {
    let (status, v) = post(base, "/api/sessions", json!({"workspace": name})).await;
    assert_eq!(status, 200, "{v}");
    v["session"].as_str().unwrap().to_string()
}

async fn op(base: &str, session: &str, op: &str, body: Value) -> Value {
    let (status, v) = post(base, &format!("/api/sessions/{session}/ops/{op}"), body).await;
    assert_eq!(status, 200, "{op}: {v}");
    v
}

#[tokio::test]
async fn health_and_catalog() {
    let s = start(0).await;
    assert_eq!(get(&s.base, "/health").await["status"], "ok");
    assert_eq!(get(&s.base, "/api/friends").await["friends"].as_array().unwrap().len(), 7);
    assert_eq!(get(&s.base, "/api/tasks").await["tasks"].as_array().unwrap().len(), 13);
}

#[tokio::test]
async fn second_session_on_a_workspace_is_refused() {
    let s = start(0).await;
    let first = open(&s.base, "essay").await;
    let (status, v) = post(&s.base, "/api/sessions", json!({"workspace": "essay"})).await;
    assert_eq!(status, 409);
    assert_eq!(v["error"], "lock-conflict");

    // A lock left by another process counts too.
    std::fs::write(lock_path(&s.dir.path().join("other.json")), "1\n").unwrap();
    let (_, v) = post(&s.base, "/api/sessions", json!({"workspace": "other"})).await;
    assert_eq!(v["error"], "lock-conflict");

    // Closing releases the lock and keeps the workspace on disk.
    let r = reqwest::Client::new()
        .delete(format!("{}/api/sessions/{first}", s.base))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert!(s.dir.path().join("essay.json").exists());
    open(&s.base, "essay").await;

    let (status, v) = post(&s.base, "/api/sessions", json!({"workspace": "../x"})).await;
    assert_eq!((status, v["error"].as_str()), (422, Some("bad-name")));
}

#[tokio::test]
async fn tear_shows_up_in_the_since_revision_delta() {
    let s = start(0).await;
    let id = open(&s.base, "tear").await;
    let blocks: Vec<Value> = ["a", "b", "c", "d"]
        .iter()
        .map(|t| json!({"kind": {"type": "paragraph"}, "text": t}))
        .collect();
    let v = op(&s.base, &id, "new_writing_layer", json!({"name": "Draft", "blocks": blocks})).await;
    let layer = v["outcome"]["layer"].as_u64().unwrap();
    let full = get(&s.base, &format!("/api/sessions/{id}/snapshot")).await;
    assert_eq!(full["kind"], "full");
    let before = full["revision"].as_u64().unwrap();
    let mut old: Workspace = serde_json::from_value(full["workspace"].clone()).unwrap();

    let v = op(&s.base, &id, "tear", json!({"layer": layer, "cuts": [1, 3]})).await;
    let parts: BTreeSet<u64> = v["outcome"]["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_u64().unwrap())
        .collect();
    assert_eq!(parts.len(), 3);

    let d = get(&s.base, &format!("/api/sessions/{id}/snapshot?since={before}")).await;
    assert_eq!(d["kind"], "delta");
    let delta: WorkspaceDelta = serde_json::from_value(d["delta"].clone()).unwrap();
    let new_layers: BTreeSet<u64> = delta.layers.upserts.iter().map(|(k, _)| k.0).collect();
    assert_eq!(new_layers, parts);
    let binned: Vec<u64> = delta.bin.upserts.iter().map(|(k, _)| k.0).collect();
    assert_eq!(binned, [layer]);

    // Applying the delta to the old snapshot gives the current one.
    delta.apply(&mut old).unwrap();
    let now = get(&s.base, &format!("/api/sessions/{id}/snapshot")).await;
    let current: Workspace = serde_json::from_value(now["workspace"].clone()).unwrap();
    assert_eq!(old, current);
}

#[derive(Debug)]
struct SseEvent {
    name: String,
    data: Value,
}

fn parse_events(buf: &mut String) -> Vec<SseEvent> {
    let mut out = Vec::new();
    while let Some(end) = buf.find("\n\n") {
        let frame: String = buf.drain(..end + 2).collect();
        let mut name = String::new();
        let mut data = String::new();
        for line in frame.lines() {
            if let Some(v) = line.strip_prefix("event:") {
                name = v.trim().to_string();
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.trim_start());
            }
        }
        if !data.is_empty() {
            out.push(SseEvent {
                name,
                data: serde_json::from_str(&data).unwrap(),
            });
        }
    }
    out
}

#[tokio::test]
async fn danny_streams_chunks_then_fills_the_placeholder() {
    let s = start(2).await;
    let id = open(&s.base, "stream").await;
    let v = op(
        &s.base,
        &id,
        "new_writing_layer",
        json!({"name": "Intro", "blocks": [{"kind": {"type": "paragraph"}, "text": "LLMs are"}]}),
    )
    .await;
    let layer = v["outcome"]["layer"].as_u64().unwrap();
    let snap = get(&s.base, &format!("/api/sessions/{id}/snapshot")).await;
    let block = snap["workspace"]["layers"][layer.to_string()]["content"]["blocks"][0]["id"]
        .as_u64()
        .unwrap();

    let resp = reqwest::get(format!("{}/api/sessions/{id}/events", s.base)).await.unwrap();
    let mut stream = resp.bytes_stream();
    let base = s.base.clone();
    let sid = id.clone();
    let invoke = tokio::spawn(async move {
        op(
            &base,
            &sid,
            "invoke_inline",
            json!({"layer": layer, "block": block, "offset": 8, "friend": "danny", "prompt": "describe them"}),
        )
        .await
    });

    let mut buf = String::new();
    let mut seen = Vec::new();
    let filled = tokio::time::timeout(Duration::from_secs(10), async {
        while let Some(chunk) = stream.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk.unwrap()));
            for e in parse_events(&mut buf) {
                let is_filled = e.data["event"] == "placeholder-changed" && e.data["state"] == "filled";
                seen.push(e);
                if is_filled {
                    return true;
                }
            }
        }
        false
    })
    .await
    .unwrap();
    assert!(filled);
    assert_eq!(seen[0].name, "hello");
    let chunks: Vec<&str> = seen
        .iter()
        .filter(|e| e.data["event"] == "stream-chunk")
        .map(|e| e.data["chunk"].as_str().unwrap())
        .collect();
    assert!(chunks.len() > 1, "{seen:?}");
    assert!(chunks.concat().starts_with("[(elaborate)·"));
    let v = invoke.await.unwrap();
    assert_eq!(v["outcome"]["type"], "placeholder");
}

#[tokio::test]
async fn every_operation_has_exactly_one_route() {
    let s = start(0).await;
    let inventory = get(&s.base, "/api/ops").await;
    let listed: Vec<&str> = inventory["ops"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(listed, Command::OPS);

    let endpoints = server::endpoints();
    let unique: BTreeSet<&String> = endpoints.iter().collect();
    assert_eq!(unique.len(), endpoints.len());
    for op in Command::OPS {
        let path = format!("POST {}", server::op_path(op));
        assert_eq!(endpoints.iter().filter(|e| **e == path).count(), 1, "{op}");
    }

    // Each route is live: a body the op cannot decode comes back as the
    // service's own bad-request error, not the router's 404.
    let id = open(&s.base, "inventory").await;
    for op in Command::OPS {
        let (status, v) = post(&s.base, &format!("/api/sessions/{id}/ops/{op}"), json!({"bogus": true})).await;
        assert_eq!((status, v["error"].as_str()), (400, Some("bad-request")), "{op}");
    }
    let (status, _) = post(&s.base, &format!("/api/sessions/{id}/ops/no_such_op"), json!({})).await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn busy_port_is_reported() {
    let a = server::bind(0).await.unwrap();
    let port = a.local_addr().unwrap().port();
    let e = server::bind(port).await.unwrap_err();
    assert!(matches!(e, ServeError::PortInUse(p) if p == port));
    assert_eq!(e.code(), "port-in-use");
}

#[tokio::test]
async fn compile_and_export_through_the_service() {
    let s = start(0).await;
    let id = open(&s.base, "doc").await;
    let mut layers = Vec::new();
    for (name, text) in [("One", "first & best"), ("Two", "second")] {
        let v = op(
            &s.base,
            &id,
            "new_writing_layer",
            json!({"name": name, "blocks": [{"kind": {"type": "paragraph"}, "text": text}]}),
        )
        .await;
        layers.push(v["outcome"]["layer"].as_u64().unwrap());
    }
    let v = op(&s.base, &id, "compile", json!({"spec": {"members": layers}})).await;
    let doc = v["outcome"]["layer"].as_u64().unwrap();
    let text = reqwest::get(format!("{}/api/sessions/{id}/documents/{doc}?format=markup", s.base))
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(text, "first &amp; best\n\nsecond\n");
    let v = op(&s.base, &id, "traceback", json!({"document": doc, "address": {"block": 1, "span": 0}})).await;
    assert_eq!(v["outcome"]["traceback"]["hyper_ref"]["layer"], layers[1]);
}

#[tokio::test]
async fn friends_are_listed_in_menu_order() {
    let s = start(0).await;
    let v = get(&s.base, "/api/friends").await;
    let ids: Vec<&str> = v["friends"].as_array().unwrap().iter().map(|f| f["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["ivy", "danny", "sam", "tara", "felix", "ali", "ramesh"]);
    let inline: Vec<&str> = v["friends"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|f| f["surface"] == "inline-slash")
        .map(|f| f["id"].as_str().unwrap())
        .collect();
    assert_eq!(inline, ["ivy", "danny"]);
}
