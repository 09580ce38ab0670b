use std::io::Cursor;

use serde_json::Value;

use strata_cli::tools::{self, ExportFormat, ToolError};
use strata_core::{Gateway, LayerId, MockBackend};

const SCRIPT: &str = r#"
# two layers
{"op":"new_writing_layer","name":"One","blocks":[{"kind":{"type":"paragraph"},"text":"first <draft>"}]}
{"op":"new_writing_layer","name":"Two","blocks":[{"kind":{"type":"paragraph"},"text":"second"}]}
"#;

fn gateway() -> Gateway {
    Gateway::new(std::sync::Arc::new(MockBackend::default()))
}

#[tokio::test]
async fn scripted_run_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("doc.json");
    let lines = tools::run_script(&ws, Cursor::new(SCRIPT), gateway()).await.unwrap();
    assert_eq!(lines.len(), 2);
    let ids: Vec<u64> = lines
        .iter()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["layer"].as_u64().unwrap())
        .collect();

    // A second run picks up the saved file.
    let compile = format!("{{\"op\":\"compile\",\"spec\":{{\"members\":[{},{}]}}}}\n", ids[0], ids[1]);
    let lines = tools::run_script(&ws, Cursor::new(compile), gateway()).await.unwrap();
    let doc = LayerId(serde_json::from_str::<Value>(&lines[0]).unwrap()["layer"].as_u64().unwrap());

    assert_eq!(tools::export(&ws, doc, ExportFormat::Text).unwrap(), "first <draft>\n\nsecond\n");
    assert_eq!(
        tools::export(&ws, doc, ExportFormat::Markup).unwrap(),
        "first &lt;draft&gt;\n\nsecond\n"
    );
    let prov: Value = serde_json::from_str(&tools::export(&ws, doc, ExportFormat::Provenance).unwrap()).unwrap();
    assert!(prov.is_array() || prov.is_object());

    // Source layers are not documents.
    assert!(matches!(tools::export(&ws, LayerId(ids[0]), ExportFormat::Text), Err(ToolError::Usage(_))));
    // The lock is released once the run ends.
    assert!(!strata_cli::session::lock_path(&ws).exists());
}

#[tokio::test]
async fn failing_line_is_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("bad.json");
    let script = "{\"op\":\"tear\",\"layer\":9,\"cuts\":[1]}\n";
    match tools::run_script(&ws, Cursor::new(script), gateway()).await {
        Err(ToolError::Step { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
    let err = tools::run_script(&ws, Cursor::new("not json\n"), gateway()).await.unwrap_err();
    assert!(err.to_string().starts_with("line 1:"), "{err}");
}
