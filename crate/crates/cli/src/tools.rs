//! Offline subcommands: log replay, document export, scripted runs.

use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use strata_core::compiler::{export_markup, export_provenance, export_text};
use strata_core::persist::{self, PersistError};
use strata_core::studio::StrataError;
use strata_core::telemetry::{read_log, replay, TelemetryError};
use strata_core::{Command, Gateway, LayerId, Studio, Workspace};

use crate::session::{SessionError, WorkspaceLock};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{0}")]
    Usage(String),
    #[error("line {line}: {source}")]
    Step {
        line: usize,
        #[source]
        source: StrataError,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Usage trees of every session in a log, rendered as text.
pub fn replay_log(path: &Path) -> Result<String, ToolError> {
    let records = read_log(path)?;
    Ok(replay(&records).values().map(|t| t.render()).collect::<Vec<_>>().join("\n"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Text,
    Markup,
    Provenance,
}

pub fn export(workspace: &Path, document: LayerId, format: ExportFormat) -> Result<String, ToolError> {
    let w = persist::load(workspace)?;
    let layer = w
        .layer(document)
        .map_err(|e| ToolError::Usage(e.to_string()))?;
    let doc = layer
        .document()
        .ok_or_else(|| ToolError::Usage(format!("{document} is not a document layer")))?;
    Ok(match format {
        ExportFormat::Text => {
            let mut s = export_text(doc);
            if !s.ends_with('\n') {
                s.push('\n');
            }
            s
        }
        ExportFormat::Markup => export_markup(doc),
        ExportFormat::Provenance => {
            let mut s = serde_json::to_string_pretty(&export_provenance(doc)).expect("json");
            s.push('\n');
            s
        }
    })
}

/// Apply one command per line (JSON, blank lines and `#` comments skipped)
/// to a workspace file, creating it if missing. Returns one outcome line per
/// command. The file is saved after the last command.
pub async fn run_script(
    workspace: &Path,
    script: impl BufRead,
    gateway: Gateway,
) -> Result<Vec<String>, ToolError> {
    let _lock = WorkspaceLock::acquire(workspace)?;
    let w = if workspace.exists() {
        persist::load(workspace)?
    } else {
        Workspace::default()
    };
    let studio = Studio::new(w, gateway);
    let mut out = Vec::new();
    for (i, line) in script.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cmd: Command = serde_json::from_str(trimmed)
            .map_err(|e| ToolError::Usage(format!("line {}: {e}", i + 1)))?;
        let outcome = studio
            .execute(cmd)
            .await
            .map_err(|source| ToolError::Step { line: i + 1, source })?;
        out.push(serde_json::to_string(&outcome).expect("json"));
    }
    persist::save(&studio.snapshot(), workspace)?;
    Ok(out)
}
