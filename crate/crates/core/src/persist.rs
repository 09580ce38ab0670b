//! Versioned workspace files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workspace::Workspace;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceFile {
    pub format_version: u32,
    pub revision: u64,
    pub workspace: Workspace,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("workspace file version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u64, supported: u32 },
    #[error("corrupt workspace file: {0}")]
    Corrupt(String),
}

impl PersistError {
    pub fn code(&self) -> &'static str {
        match self {
            PersistError::Io { .. } => "io-error",
            PersistError::VersionMismatch { .. } => "version-mismatch",
            PersistError::Corrupt(_) => "corrupt-file",
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Canonical bytes: identical snapshots give identical output.
pub fn to_bytes(w: &Workspace) -> Vec<u8> {
    let file = WorkspaceFile {
        format_version: FORMAT_VERSION,
        revision: w.revision,
        workspace: w.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("workspace serializes");
    out.push(b'\n');
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Workspace, PersistError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| PersistError::Corrupt(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| PersistError::Corrupt("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(PersistError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let file: WorkspaceFile =
        serde_json::from_value(value).map_err(|e| PersistError::Corrupt(e.to_string()))?;
    if file.revision != file.workspace.revision {
        return Err(PersistError::Corrupt(format!(
            "revision {} does not match workspace revision {}",
            file.revision, file.workspace.revision
        )));
    }
    let broken = file.workspace.check_invariants();
    if !broken.is_empty() {
        return Err(PersistError::Corrupt(broken.join("; ")));
    }
    Ok(file.workspace)
}

/// Where workspaces are kept.
pub trait WorkspaceStore: Send + Sync {
    fn save(&self, w: &Workspace) -> Result<(), PersistError>;
    fn load(&self) -> Result<Workspace, PersistError>;
    fn exists(&self) -> bool;
}

/// A workspace in one local file.
#[derive(Clone, Debug)]
pub struct FileStore {
    path: PathBuf,
}

impl FileStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl WorkspaceStore for FileStore {
    fn save(&self, w: &Workspace) -> Result<(), PersistError> {
        save(w, &self.path)
    }

    fn load(&self) -> Result<Workspace, PersistError> {
        load(&self.path)
    }

    fn exists(&self) -> bool {
        self.path.exists()
    }
}

/// Write to a temporary file beside the target, then rename over it.
pub fn save(w: &Workspace, path: &Path) -> Result<(), PersistError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(path))?;
    tmp.write_all(&to_bytes(w)).map_err(io(path))?;
    tmp.as_file().sync_all().map_err(io(path))?;
    tmp.persist(path).map_err(|e| PersistError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Workspace, PersistError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    from_bytes(&bytes)
}
