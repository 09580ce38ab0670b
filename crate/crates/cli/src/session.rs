//! Open workspaces, one writer each.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use strata_core::gateway::{build_backend, BackendDescriptor};
use strata_core::persist::{self, PersistError};
use strata_core::telemetry::SystemClock;
use strata_core::{Engine, Gateway, Studio, Telemetry, Workspace};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("workspace {0} is open in another session")]
    LockConflict(String),
    #[error("workspace names use letters, digits, '-' and '_' only: {0:?}")]
    BadName(String),
    #[error("no session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::LockConflict(_) => "lock-conflict",
            SessionError::BadName(_) => "bad-name",
            SessionError::UnknownSession(_) => "unknown-session",
            SessionError::Persist(e) => e.code(),
            SessionError::Io { .. } => "io-error",
        }
    }
}

/// Advisory lock file beside the workspace, removed on drop.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(workspace: &Path) -> Result<Self, SessionError> {
        let path = lock_path(workspace);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(SessionError::LockConflict(workspace.display().to_string()))
            }
            Err(source) => Err(SessionError::Io { path, source }),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn lock_path(workspace: &Path) -> PathBuf {
    let mut name = workspace.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    workspace.with_file_name(name)
}

pub struct Session {
    pub id: String,
    pub name: String,
    pub path: PathBuf,
    pub backend: BackendDescriptor,
    pub studio: Studio,
    _lock: WorkspaceLock,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionInfo {
    pub session: String,
    pub workspace: String,
    pub path: PathBuf,
    pub revision: u64,
    pub backend: BackendDescriptor,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl Session {
    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            session: self.id.clone(),
            workspace: self.name.clone(),
            path: self.path.clone(),
            revision: self.studio.engine().revision(),
            backend: self.backend.clone(),
            warning: None,
        }
    }

    /// Write the workspace, exclusive with mutations.
    pub async fn save(&self) -> Result<u64, SessionError> {
        let path = self.path.clone();
        let saved = self
            .studio
            .engine()
            .exclusive(move |w| persist::save(w, &path).map(|()| w.revision))
            .await
            .map_err(|e| SessionError::Io {
                path: self.path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        Ok(saved?)
    }
}

/// Sessions of one service, keyed by session id.
pub struct Sessions {
    dir: PathBuf,
    backend: BackendDescriptor,
    open: Mutex<BTreeMap<String, Arc<Session>>>,
    next: Mutex<u64>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Sessions {
    pub fn new(dir: impl Into<PathBuf>, backend: BackendDescriptor) -> Self {
        Sessions {
            dir: dir.into(),
            backend,
            open: Mutex::new(BTreeMap::new()),
            next: Mutex::new(0),
        }
    }

    pub fn workspace_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.json"))
    }

    /// Lock and load (or create) the named workspace.
    pub fn open(&self, name: &str) -> Result<SessionInfo, SessionError> {
        if !valid_name(name) {
            return Err(SessionError::BadName(name.to_string()));
        }
        std::fs::create_dir_all(&self.dir).map_err(|source| SessionError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let path = self.workspace_path(name);
        let lock = WorkspaceLock::acquire(&path)?;
        let workspace = if path.exists() {
            persist::load(&path)?
        } else {
            Workspace::default()
        };
        let id = {
            let mut n = self.next.lock().expect("session counter");
            *n += 1;
            format!("S{n}")
        };
        let (backend, warning) = build_backend(&self.backend, |k| std::env::var(k).ok());
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        let gateway = Gateway::new(backend).with_timeout(self.backend.timeout());
        let telemetry = Telemetry::to_file(
            self.dir.join(format!("{name}.events.jsonl")),
            id.clone(),
            Arc::new(SystemClock),
        );
        let studio = Studio::with_engine(Engine::new(workspace), gateway).with_telemetry(telemetry);
        let session = Arc::new(Session {
            id: id.clone(),
            name: name.to_string(),
            path,
            backend: self.backend.clone(),
            studio,
            _lock: lock,
        });
        let mut info = session.info();
        info.warning = warning;
        self.open.lock().expect("sessions").insert(id, session);
        Ok(info)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.open
            .lock()
            .expect("sessions")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    /// Save, then release the lock.
    pub async fn close(&self, id: &str) -> Result<u64, SessionError> {
        let session = self.get(id)?;
        let revision = session.save().await?;
        if let Some(t) = session.studio.telemetry() {
            t.flush();
        }
        self.open.lock().expect("sessions").remove(id);
        Ok(revision)
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        self.open.lock().expect("sessions").values().map(|s| s.info()).collect()
    }
}
