//! Single-writer mutation queue.
//!
//! Every change to a [`Workspace`] runs as a job on one writer thread. A job
//! works on a copy; if it fails the copy is dropped, if it succeeds and the
//! copy differs from the current state the revision is bumped and the new
//! snapshot published. Readers clone an `Arc` and never block the writer.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use futures::channel::oneshot;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::WorkspaceError;
use crate::workspace::{Workspace, WorkspaceDelta, WorkspaceEvent};

/// What subscribers of [`Engine::subscribe`] receive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EngineEvent {
    /// A workspace event produced by the mutation that created `revision`.
    Notice {
        revision: u64,
        #[serde(flatten)]
        event: WorkspaceEvent,
    },
    /// `revision` is now the current snapshot.
    Committed { revision: u64 },
}

#[derive(Clone, Debug)]
pub struct EngineOptions {
    /// Snapshots kept for since-revision deltas.
    pub history: usize,
    /// Refuse mutations that would break a structural invariant.
    pub check_invariants: bool,
    pub event_capacity: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            history: 512,
            check_invariants: true,
            event_capacity: 4096,
        }
    }
}

pub type Observer = Arc<dyn Fn(u64, &WorkspaceEvent) + Send + Sync>;

type Job = Box<dyn FnOnce(&mut Writer) + Send>;

struct Shared {
    current: RwLock<Arc<Workspace>>,
    history: Mutex<VecDeque<Arc<Workspace>>>,
    events: broadcast::Sender<EngineEvent>,
    observers: Mutex<Vec<Observer>>,
}

struct Writer {
    state: Workspace,
    shared: Arc<Shared>,
    options: EngineOptions,
}

impl Writer {
    fn run<T>(
        &mut self,
        f: impl FnOnce(&mut Workspace) -> Result<T, WorkspaceError>,
    ) -> Result<T, WorkspaceError> {
        let mut next = self.state.clone();
        let out = f(&mut next)?;
        let events = next.take_events();
        if next == self.state && events.is_empty() {
            return Ok(out);
        }
        if self.options.check_invariants {
            let broken = next.check_invariants();
            if !broken.is_empty() {
                log::error!("mutation refused, invariants broken: {broken:?}");
                return Err(WorkspaceError::Precondition(format!(
                    "mutation would break invariants: {}",
                    broken.join("; ")
                )));
            }
        }
        let changed = next != self.state;
        if changed {
            next.revision = self.state.revision + 1;
            self.state = next;
            let snap = Arc::new(self.state.clone());
            *self.shared.current.write().expect("snapshot lock") = snap.clone();
            let mut history = self.shared.history.lock().expect("history lock");
            history.push_back(snap);
            while history.len() > self.options.history {
                history.pop_front();
            }
        }
        let revision = self.state.revision;
        self.publish(revision, events, changed);
        Ok(out)
    }

    fn publish(&self, revision: u64, events: Vec<WorkspaceEvent>, committed: bool) {
        let observers = self.shared.observers.lock().expect("observer lock").clone();
        for event in events {
            for o in &observers {
                o(revision, &event);
            }
            // No receivers is fine.
            let _ = self.shared.events.send(EngineEvent::Notice { revision, event });
        }
        if committed {
            let _ = self.shared.events.send(EngineEvent::Committed { revision });
        }
    }
}

/// Handle to the writer thread. Cheap to clone.
#[derive(Clone)]
pub struct Engine {
    tx: mpsc::Sender<Job>,
    shared: Arc<Shared>,
}

impl Engine {
    pub fn new(workspace: Workspace) -> Self {
        Self::with_options(workspace, EngineOptions::default())
    }

    pub fn with_options(mut workspace: Workspace, options: EngineOptions) -> Self {
        workspace.take_events();
        let snap = Arc::new(workspace.clone());
        let (events, _) = broadcast::channel(options.event_capacity.max(16));
        let shared = Arc::new(Shared {
            current: RwLock::new(snap.clone()),
            history: Mutex::new(VecDeque::from([snap])),
            events,
            observers: Mutex::new(Vec::new()),
        });
        let (tx, rx) = mpsc::channel::<Job>();
        let mut writer = Writer {
            state: workspace,
            shared: shared.clone(),
            options,
        };
        thread::Builder::new()
            .name("strata-writer".into())
            .spawn(move || {
                for job in rx {
                    job(&mut writer);
                }
            })
            .expect("spawn writer thread");
        Engine { tx, shared }
    }

    pub fn snapshot(&self) -> Arc<Workspace> {
        self.shared.current.read().expect("snapshot lock").clone()
    }

    pub fn revision(&self) -> u64 {
        self.snapshot().revision
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EngineEvent> {
        self.shared.events.subscribe()
    }

    /// Called on the writer thread for every event, before broadcast.
    pub fn add_observer(&self, observer: Observer) {
        self.shared.observers.lock().expect("observer lock").push(observer);
    }

    fn enqueue<T, F>(&self, f: F) -> oneshot::Receiver<Result<T, WorkspaceError>>
    where
        T: Send + 'static,
        F: FnOnce(&mut Workspace) -> Result<T, WorkspaceError> + Send + 'static,
    {
        let (reply, rx) = oneshot::channel();
        let job: Job = Box::new(move |w: &mut Writer| {
            let _ = reply.send(w.run(f));
        });
        if self.tx.send(job).is_err() {
            log::error!("writer thread is gone");
        }
        rx
    }

    /// Run `f` as one atomic mutation and wait for it.
    pub fn mutate<T, F>(&self, f: F) -> Result<T, WorkspaceError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Workspace) -> Result<T, WorkspaceError> + Send + 'static,
    {
        futures::executor::block_on(self.enqueue(f)).unwrap_or_else(|_| Err(gone()))
    }

    pub async fn mutate_async<T, F>(&self, f: F) -> Result<T, WorkspaceError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Workspace) -> Result<T, WorkspaceError> + Send + 'static,
    {
        self.enqueue(f).await.unwrap_or_else(|_| Err(gone()))
    }

    /// Read the current state on the writer thread, exclusive with mutations.
    pub async fn exclusive<T, F>(&self, f: F) -> Result<T, WorkspaceError>
    where
        T: Send + 'static,
        F: FnOnce(&Workspace) -> T + Send + 'static,
    {
        self.mutate_async(move |w| Ok(f(w))).await
    }

    /// Broadcast an event that comes with no state change.
    pub async fn notify(&self, event: WorkspaceEvent) {
        let _ = self
            .mutate_async(move |w| {
                w.emit(event);
                Ok(())
            })
            .await;
    }

    /// Changes since `revision`, or `None` when that revision is no longer
    /// kept (the caller should fetch a full snapshot).
    pub fn delta_since(&self, revision: u64) -> Option<WorkspaceDelta> {
        let current = self.snapshot();
        if revision == current.revision {
            return Some(WorkspaceDelta::between(&current, &current));
        }
        let history = self.shared.history.lock().expect("history lock");
        let old = history.iter().find(|w| w.revision == revision)?.clone();
        drop(history);
        Some(WorkspaceDelta::between(&old, &current))
    }
}

fn gone() -> WorkspaceError {
    WorkspaceError::Precondition("workspace engine stopped".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::BlockDraft;

    #[test]
    fn failed_mutation_leaves_no_trace() {
        let engine = Engine::new(Workspace::default());
        let before = engine.snapshot();
        let r: Result<(), _> = engine.mutate(|w| {
            w.new_writing_layer("half", None)?;
            Err(WorkspaceError::EmptyName)
        });
        assert!(r.is_err());
        assert_eq!(*engine.snapshot(), *before);
        assert_eq!(engine.revision(), 0);
    }

    #[test]
    fn revisions_bump_only_on_change() {
        let engine = Engine::new(Workspace::default());
        let id = engine.mutate(|w| w.new_writing_layer("A", None)).unwrap();
        assert_eq!(engine.revision(), 1);
        engine.mutate(move |w| w.layer(id).map(|_| ())).unwrap();
        assert_eq!(engine.revision(), 1);
        engine
            .mutate(move |w| w.tag(crate::workspace::Target::Layer(id), "x"))
            .unwrap();
        assert_eq!(engine.revision(), 2);
    }

    #[test]
    fn delta_since_replays_to_current() {
        let engine = Engine::new(Workspace::default());
        let id = engine
            .mutate(|w| {
                w.new_writing_layer(
                    "L",
                    Some(vec![BlockDraft::paragraph("a"), BlockDraft::paragraph("b")]),
                )
            })
            .unwrap();
        let old = engine.snapshot();
        engine.mutate(move |w| w.tear(id, &[1])).unwrap();
        let d = engine.delta_since(old.revision).unwrap();
        let mut replay = (*old).clone();
        d.apply(&mut replay).unwrap();
        assert_eq!(replay, *engine.snapshot());
        assert!(engine.delta_since(999).is_none());
    }

    #[tokio::test]
    async fn events_are_broadcast_in_commit_order() {
        let engine = Engine::new(Workspace::default());
        let mut rx = engine.subscribe();
        engine
            .mutate_async(|w| w.new_writing_layer("A", None))
            .await
            .unwrap();
        let first = rx.recv().await.unwrap();
        assert!(matches!(
            first,
            EngineEvent::Notice {
                revision: 1,
                event: WorkspaceEvent::LayerCreated { .. }
            }
        ));
        assert_eq!(rx.recv().await.unwrap(), EngineEvent::Committed { revision: 1 });
    }
}
