//! Per-session event log. Append-only, replayable from any sequence number,
//! with a broadcast channel for live followers.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use futures::stream::{self, Stream, StreamExt};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StageChanged,
    ToolStarted,
    ToolFinished,
    GateOpened,
    GateResolved,
    ArtifactReady,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
}

struct Inner {
    events: Vec<SessionEvent>,
    sender: Option<broadcast::Sender<SessionEvent>>,
    file: Option<PathBuf>,
}

pub struct EventLog {
    inner: Mutex<Inner>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        let (sender, _) = broadcast::channel(1024);
        Self { inner: Mutex::new(Inner { events: Vec::new(), sender: Some(sender), file: None }) }
    }

    /// A log mirrored to `path` (one event per line). Events already in the
    /// file are loaded so sequence numbers continue across restarts.
    pub fn persistent(path: &Path) -> std::io::Result<Self> {
        let log = Self::new();
        if let Ok(raw) = std::fs::read_to_string(path) {
            let mut inner = log.inner.lock();
            inner.events = raw.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
        }
        log.inner.lock().file = Some(path.to_path_buf());
        Ok(log)
    }

    pub fn emit(&self, kind: EventKind, payload: Value) -> SessionEvent {
        let mut inner = self.inner.lock();
        let seq = inner.events.last().map_or(0, |e| e.seq + 1);
        let event = SessionEvent { seq, kind, payload };
        if let Some(path) = &inner.file {
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
                let _ = writeln!(f, "{}", serde_json::to_string(&event).expect("event serializes"));
            }
        }
        inner.events.push(event.clone());
        if let Some(tx) = &inner.sender {
            let _ = tx.send(event.clone());
        }
        event
    }

    pub fn snapshot(&self) -> Vec<SessionEvent> {
        self.inner.lock().events.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ends live following; streams finish after draining.
    pub fn close(&self) {
        self.inner.lock().sender = None;
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().sender.is_none()
    }

    /// Events with `seq >= from`, then live events until the log closes.
    /// The backlog and the subscription are taken under one lock, so nothing
    /// is lost or repeated at the seam.
    pub fn subscribe_from(&self, from: u64) -> impl Stream<Item = SessionEvent> + Send + 'static {
        let inner = self.inner.lock();
        let backlog: Vec<SessionEvent> = inner.events.iter().filter(|e| e.seq >= from).cloned().collect();
        let next = inner.events.last().map_or(0, |e| e.seq + 1).max(from);
        let live = inner.sender.as_ref().map(|tx| tx.subscribe());
        drop(inner);
        let live = stream::unfold((live, next), |(rx, next)| async move {
            let mut rx = rx?;
            loop {
                match rx.recv().await {
                    Ok(e) if e.seq < next => continue,
                    Ok(e) => {
                        let n = e.seq + 1;
                        return Some((e, (Some(rx), n)));
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        });
        stream::iter(backlog).chain(live)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[tokio::test]
    async fn replay_then_follow() {
        let log = std::sync::Arc::new(EventLog::new());
        log.emit(EventKind::StageChanged, json!({"stage": "analysis"}));
        log.emit(EventKind::ToolStarted, json!({}));
        let stream = log.subscribe_from(1);
        let writer = log.clone();
        tokio::spawn(async move {
            writer.emit(EventKind::ToolFinished, json!({}));
            writer.close();
        });
        let got: Vec<u64> = stream.map(|e| e.seq).collect().await;
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn persisted_log_continues_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::persistent(&path).unwrap();
        log.emit(EventKind::Error, json!({"message": "x"}));
        drop(log);
        let log = EventLog::persistent(&path).unwrap();
        assert_eq!(log.emit(EventKind::Error, json!({})).seq, 1);
    }
}
