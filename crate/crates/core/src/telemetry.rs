//! Interaction log: append-only JSON lines, words-per-minute sampling and
//! replay into a usage summary.

use std::collections::{BTreeMap, VecDeque};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Observer;
use crate::workspace::WorkspaceEvent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    FeatureInvocation,
    UserPrompt,
    Edit,
    Compile,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    /// UTC milliseconds.
    pub ts: u64,
    pub session: String,
    pub kind: EventKind,
    pub feature: String,
    #[serde(default)]
    pub payload: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wpm: Option<f64>,
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl TelemetryError {
    pub fn code(&self) -> &'static str {
        match self {
            TelemetryError::Io { .. } => "io-error",
            TelemetryError::Parse { .. } => "corrupt-file",
        }
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// Clock that only moves when told to.
#[derive(Clone, Debug, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn at(ms: u64) -> Self {
        ManualClock(Arc::new(AtomicU64::new(ms)))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Human words typed per minute over a sliding window.
#[derive(Clone, Debug, Default)]
pub struct WpmMeter {
    samples: VecDeque<(u64, usize)>,
}

impl WpmMeter {
    /// Oldest entries are dropped once they are this far behind the newest.
    const RETAIN_MS: u64 = 10 * 60 * 1000;

    pub fn record(&mut self, ts: u64, words: usize) {
        if words == 0 {
            return;
        }
        self.samples.push_back((ts, words));
        while self
            .samples
            .front()
            .is_some_and(|(t, _)| ts.saturating_sub(*t) > Self::RETAIN_MS)
        {
            self.samples.pop_front();
        }
    }

    /// Words in `(now - window, now]` divided by the window in minutes.
    pub fn wpm(&self, now: u64, window_secs: u64) -> f64 {
        if window_secs == 0 {
            return 0.0;
        }
        let start = now.saturating_sub(window_secs * 1000);
        let words: usize = self
            .samples
            .iter()
            .filter(|(t, _)| *t > start && *t <= now)
            .map(|(_, w)| w)
            .sum();
        words as f64 / (window_secs as f64 / 60.0)
    }
}

#[derive(Clone, Debug)]
pub struct TelemetryConfig {
    pub window_secs: u64,
    pub sample_every_ms: u64,
    /// Records buffered for the appender before callers start dropping.
    pub queue: usize,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        TelemetryConfig {
            window_secs: 60,
            sample_every_ms: 10_000,
            queue: 1024,
        }
    }
}

struct State {
    seq: u64,
    last_ts: u64,
    last_sample: Option<u64>,
    meter: WpmMeter,
}

struct Inner {
    session: String,
    clock: Arc<dyn Clock>,
    config: TelemetryConfig,
    state: Mutex<State>,
    tx: Mutex<Option<SyncSender<EventRecord>>>,
    appender: Mutex<Option<JoinHandle<()>>>,
    warnings: Arc<AtomicU64>,
    memory: Mutex<Vec<EventRecord>>,
}

/// Session logger. Records are appended to the log file by one background
/// thread. Cheap to clone.
#[derive(Clone)]
pub struct Telemetry {
    inner: Arc<Inner>,
}

const WRITE_ATTEMPTS: usize = 3;

fn append_line(path: &Path, line: &str) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.write_all(b"\n")
}

impl Telemetry {
    /// Log to `path`, appending to whatever is there.
    pub fn to_file(path: impl Into<PathBuf>, session: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self::with_config(Some(path.into()), session, clock, TelemetryConfig::default())
    }

    /// Keep records in memory only.
    pub fn in_memory(session: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self::with_config(None, session, clock, TelemetryConfig::default())
    }

    pub fn with_config(
        path: Option<PathBuf>,
        session: impl Into<String>,
        clock: Arc<dyn Clock>,
        config: TelemetryConfig,
    ) -> Self {
        let warnings = Arc::new(AtomicU64::new(0));
        let (tx, appender) = match path {
            Some(path) => {
                let (tx, rx) = sync_channel::<EventRecord>(config.queue.max(1));
                let warn = warnings.clone();
                let handle = std::thread::Builder::new()
                    .name("strata-telemetry".into())
                    .spawn(move || {
                        for r in rx {
                            let line = serde_json::to_string(&r).expect("record serializes");
                            let ok = (0..WRITE_ATTEMPTS).any(|_| append_line(&path, &line).is_ok());
                            if !ok {
                                warn.fetch_add(1, Ordering::SeqCst);
                                log::warn!("could not append telemetry record {} to {}", r.seq, path.display());
                            }
                        }
                    })
                    .expect("spawn telemetry thread");
                (Some(tx), Some(handle))
            }
            None => (None, None),
        };
        Telemetry {
            inner: Arc::new(Inner {
                session: session.into(),
                clock,
                config,
                state: Mutex::new(State {
                    seq: 0,
                    last_ts: 0,
                    last_sample: None,
                    meter: WpmMeter::default(),
                }),
                tx: Mutex::new(tx),
                appender: Mutex::new(appender),
                warnings,
                memory: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn session(&self) -> &str {
        &self.inner.session
    }

    /// Append a record. Returns it as logged.
    pub fn log(&self, kind: EventKind, feature: &str, payload: serde_json::Value) -> EventRecord {
        self.log_with_words(kind, feature, payload, 0)
    }

    fn log_with_words(&self, kind: EventKind, feature: &str, payload: serde_json::Value, words: usize) -> EventRecord {
        let inner = &self.inner;
        let record = {
            let mut s = inner.state.lock().expect("telemetry lock");
            let ts = inner.clock.now_ms().max(s.last_ts);
            s.last_ts = ts;
            s.seq += 1;
            s.meter.record(ts, words);
            let due = s
                .last_sample
                .is_none_or(|t| ts.saturating_sub(t) >= inner.config.sample_every_ms);
            let wpm = due.then(|| {
                s.last_sample = Some(ts);
                s.meter.wpm(ts, inner.config.window_secs)
            });
            EventRecord {
                seq: s.seq,
                ts,
                session: inner.session.clone(),
                kind,
                feature: feature.to_string(),
                payload,
                wpm,
            }
        };
        inner.memory.lock().expect("telemetry lock").push(record.clone());
        if let Some(tx) = inner.tx.lock().expect("telemetry lock").as_ref() {
            match tx.try_send(record.clone()) {
                Ok(()) => {}
                Err(TrySendError::Full(r)) => {
                    inner.warnings.fetch_add(1, Ordering::SeqCst);
                    log::warn!("telemetry queue full; waiting to append record {}", r.seq);
                    let _ = tx.send(r);
                }
                Err(TrySendError::Disconnected(_)) => {
                    inner.warnings.fetch_add(1, Ordering::SeqCst);
                }
            }
        }
        record
    }

    /// A human edit inserting `words` words.
    pub fn log_edit(&self, layer: &str, words: usize) -> EventRecord {
        self.log_with_words(
            EventKind::Edit,
            "edit",
            serde_json::json!({ "layer": layer, "words": words }),
            words,
        )
    }

    pub fn wpm(&self, window_secs: u64) -> f64 {
        let s = self.inner.state.lock().expect("telemetry lock");
        let now = self.inner.clock.now_ms().max(s.last_ts);
        s.meter.wpm(now, window_secs)
    }

    /// Records logged through this handle, in order.
    pub fn records(&self) -> Vec<EventRecord> {
        self.inner.memory.lock().expect("telemetry lock").clone()
    }

    /// Failed or delayed appends so far.
    pub fn warnings(&self) -> u64 {
        self.inner.warnings.load(Ordering::SeqCst)
    }

    /// Wait until every queued record is on disk. Later records are kept in
    /// memory only.
    pub fn flush(&self) {
        self.inner.tx.lock().expect("telemetry lock").take();
        if let Some(h) = self.inner.appender.lock().expect("telemetry lock").take() {
            let _ = h.join();
        }
    }

    /// Engine observer that turns human edits into edit records.
    pub fn observer(&self) -> Observer {
        let t = self.clone();
        Arc::new(move |_revision, event| {
            if let WorkspaceEvent::Edited {
                layer, words_inserted, ..
            } = event
            {
                t.log_edit(&layer.to_string(), *words_inserted);
            }
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<EventRecord>, TelemetryError> {
    let f = std::fs::File::open(path).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| TelemetryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| TelemetryError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

/// Usage-tree category of a logged feature.
pub fn category(kind: EventKind, feature: &str) -> Option<&'static str> {
    Some(match (kind, feature) {
        (EventKind::Compile, _) => "compile",
        (EventKind::Edit, _) => "edit",
        (EventKind::UserPrompt, _) => "prompt",
        (EventKind::Error, _) => "error",
        (_, "new_writing_layer" | "new_scratchpad" | "create_sublayer") => "create",
        (_, "tear") => "tear",
        (_, "combine") => "combine",
        (_, "stack" | "cluster" | "reorder_stack" | "set_fanned") => "stack",
        (_, "fold" | "unfold" | "summarize") => "fold",
        (_, "tag" | "untag") => "tag",
        (_, "compare") => "compare",
        (_, "restructure") => "restructure",
        (_, "tone_variants") => "tone",
        (_, "invoke_inline") => "inline",
        (_, "annotate") => "feedback",
        (_, "research") => "research",
        (_, "peek") => "peek",
        (_, "apply_template") => "template",
        (_, "tunnel" | "import_selection") => "tunnel",
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UsageStep {
    pub seq: u64,
    pub ts: u64,
    pub category: String,
    pub feature: String,
}

/// Feature timeline of one session, for usage-tree views.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UsageTree {
    pub session: String,
    pub steps: Vec<UsageStep>,
    pub counts: BTreeMap<String, usize>,
    /// Latest sampled words per minute.
    pub wpm: Option<f64>,
}

impl UsageTree {
    pub fn count(&self, category: &str) -> usize {
        self.counts.get(category).copied().unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let mut out = format!("session {}\n", self.session);
        for s in &self.steps {
            out.push_str(&format!("  {:>4} {:>13} {:<12} {}\n", s.seq, s.ts, s.category, s.feature));
        }
        let counts: Vec<String> = self.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&format!("  totals: {}\n", counts.join(" ")));
        if let Some(w) = self.wpm {
            out.push_str(&format!("  wpm: {w:.1}\n"));
        }
        out
    }
}

/// Rebuild per-session usage trees from log records. Edits and prompts are
/// counted but left out of the timeline.
pub fn replay(records: &[EventRecord]) -> BTreeMap<String, UsageTree> {
    let mut out: BTreeMap<String, UsageTree> = BTreeMap::new();
    let mut sorted: Vec<&EventRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.session.clone(), r.seq));
    for r in sorted {
        let tree = out.entry(r.session.clone()).or_insert_with(|| UsageTree {
            session: r.session.clone(),
            ..UsageTree::default()
        });
        if r.wpm.is_some() {
            tree.wpm = r.wpm;
        }
        let Some(cat) = category(r.kind, &r.feature) else {
            continue;
        };
        *tree.counts.entry(cat.to_string()).or_default() += 1;
        if !matches!(r.kind, EventKind::Edit | EventKind::UserPrompt) {
            tree.steps.push(UsageStep {
                seq: r.seq,
                ts: r.ts,
                category: cat.to_string(),
                feature: r.feature.clone(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logger() -> (Telemetry, ManualClock) {
        let clock = ManualClock::at(1_000_000);
        (Telemetry::in_memory("s1", Arc::new(clock.clone())), clock)
    }

    #[test]
    fn human_words_over_a_minute() {
        let (t, clock) = logger();
        for _ in 0..12 {
            clock.advance(5_000);
            t.log_edit("L1", 10);
        }
        assert_eq!(t.wpm(60), 120.0);
        clock.advance(61_000);
        assert_eq!(t.wpm(60), 0.0);
    }

    #[test]
    fn accepted_ai_text_does_not_count() {
        // Only Edited events reach the meter; accepting a placeholder or a
        // preview emits other events.
        let (t, _) = logger();
        let obs = t.observer();
        obs(1, &WorkspaceEvent::PlaceholderChanged {
            placeholder: crate::ids::PlaceholderId(1),
            layer: crate::ids::LayerId(1),
            state: crate::layer::PlaceholderState::Accepted,
        });
        obs(2, &WorkspaceEvent::PreviewResolved {
            preview: crate::ids::PreviewId(3),
            layer: crate::ids::LayerId(1),
            accepted: true,
        });
        assert_eq!(t.wpm(60), 0.0);
        obs(3, &WorkspaceEvent::Edited {
            layer: crate::ids::LayerId(1),
            block: None,
            words_inserted: 3,
            chars_removed: 0,
        });
        assert_eq!(t.wpm(60), 3.0);
    }

    #[test]
    fn same_millisecond_keeps_sequence_order() {
        let (t, clock) = logger();
        let a = t.log(EventKind::FeatureInvocation, "tear", serde_json::Value::Null);
        let b = t.log(EventKind::FeatureInvocation, "combine", serde_json::Value::Null);
        assert_eq!(a.ts, b.ts);
        assert!(a.seq < b.seq);
        // A clock that steps back does not make timestamps decrease.
        clock.set(10);
        let c = t.log(EventKind::Edit, "edit", serde_json::Value::Null);
        assert_eq!(c.ts, b.ts);
    }

    #[test]
    fn wpm_is_sampled_every_ten_seconds() {
        let (t, clock) = logger();
        let first = t.log_edit("L1", 5);
        assert_eq!(first.wpm, Some(5.0));
        clock.advance(4_000);
        assert_eq!(t.log_edit("L1", 5).wpm, None);
        clock.advance(6_000);
        assert_eq!(t.log_edit("L1", 5).wpm, Some(15.0));
    }

    #[test]
    fn file_log_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let clock = ManualClock::at(0);
        let t = Telemetry::to_file(&path, "p2", Arc::new(clock.clone()));
        for f in ["new_writing_layer", "new_writing_layer", "tear", "restructure"] {
            clock.advance(100);
            t.log(EventKind::FeatureInvocation, f, serde_json::Value::Null);
        }
        t.log(EventKind::Compile, "compile", serde_json::Value::Null);
        t.flush();
        let records = read_log(&path).unwrap();
        assert_eq!(records, t.records());
        let trees = replay(&records);
        let tree = &trees["p2"];
        assert_eq!(tree.count("create"), 2);
        assert_eq!(tree.count("restructure"), 1);
        assert_eq!(tree.count("compile"), 1);
        assert_eq!(tree.steps.len(), 5);
        assert!(tree.render().contains("totals: compile=1 create=2 restructure=1 tear=1"));
    }

    #[test]
    fn unwritable_log_is_a_warning() {
        let t = Telemetry::to_file("/nonexistent/dir/events.jsonl", "s", Arc::new(ManualClock::at(0)));
        t.log(EventKind::Error, "x", serde_json::Value::Null);
        t.flush();
        assert_eq!(t.warnings(), 1);
        assert_eq!(t.records().len(), 1);
    }

    #[test]
    fn bad_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"seq\":1}\n").unwrap();
        assert_eq!(read_log(&path).unwrap_err().code(), "corrupt-file");
    }
}
