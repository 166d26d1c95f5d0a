//! Human decision points. A gate parks the session until a responder
//! resolves it.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::oneshot;

use crate::state::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Consensus,
    AnalysisQa,
    Outline,
}

impl GateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GateKind::Consensus => "consensus",
            GateKind::AnalysisQa => "analysis_qa",
            GateKind::Outline => "outline",
        }
    }

    pub fn tool_name(self) -> String {
        format!("gate.{}", self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "resolution", rename_all = "snake_case")]
pub enum Resolution {
    Approve,
    Revise { text: String },
    Regenerate,
    Abort,
}

impl Resolution {
    pub fn revise(text: impl Into<String>) -> Self {
        Resolution::Revise { text: text.into() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Resolution::Approve => "approve",
            Resolution::Revise { .. } => "revise",
            Resolution::Regenerate => "regenerate",
            Resolution::Abort => "abort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRequest {
    pub gate_id: String,
    pub kind: GateKind,
    pub stage: Stage,
    pub payload: Value,
    pub options: Vec<String>,
}

#[async_trait]
pub trait GateResponder: Send + Sync {
    async fn respond(&self, request: &GateRequest) -> Resolution;
}

/// Headless mode: every gate is approved.
pub struct AutoApprove;

#[async_trait]
impl GateResponder for AutoApprove {
    async fn respond(&self, _: &GateRequest) -> Resolution {
        Resolution::Approve
    }
}

/// Answers from per-kind queues; approves once a queue runs dry.
#[derive(Default)]
pub struct ScriptedGates {
    queues: Mutex<HashMap<GateKind, VecDeque<Resolution>>>,
    seen: Mutex<Vec<GateRequest>>,
}

impl ScriptedGates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn then(self, kind: GateKind, resolution: Resolution) -> Self {
        self.queues.lock().entry(kind).or_default().push_back(resolution);
        self
    }

    /// Every request answered so far.
    pub fn requests(&self) -> Vec<GateRequest> {
        self.seen.lock().clone()
    }
}

#[async_trait]
impl GateResponder for ScriptedGates {
    async fn respond(&self, request: &GateRequest) -> Resolution {
        self.seen.lock().push(request.clone());
        self.queues.lock().get_mut(&request.kind).and_then(VecDeque::pop_front).unwrap_or(Resolution::Approve)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateError {
    #[error("no pending gate `{0}`")]
    NoSuchGate(String),
    #[error("gate `{0}` is already resolved")]
    AlreadyResolved(String),
}

#[derive(Default)]
struct BoardInner {
    pending: Option<(GateRequest, oneshot::Sender<Resolution>)>,
    resolved: BTreeSet<String>,
}

/// Shared between a parked session and whoever resolves its gates. At most
/// one gate is pending; resolution happens under one lock, so a gate is
/// resolved exactly once.
#[derive(Default)]
pub struct GateBoard {
    inner: Mutex<BoardInner>,
}

impl GateBoard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> Option<GateRequest> {
        self.inner.lock().pending.as_ref().map(|(r, _)| r.clone())
    }

    pub fn submit(&self, gate_id: &str, resolution: Resolution) -> Result<(), GateError> {
        let mut inner = self.inner.lock();
        if inner.resolved.contains(gate_id) {
            return Err(GateError::AlreadyResolved(gate_id.to_string()));
        }
        match inner.pending.take() {
            Some((req, tx)) if req.gate_id == gate_id => {
                inner.resolved.insert(gate_id.to_string());
                // A dropped receiver means the session is gone; the gate
                // still counts as resolved.
                let _ = tx.send(resolution);
                Ok(())
            }
            other => {
                inner.pending = other;
                Err(GateError::NoSuchGate(gate_id.to_string()))
            }
        }
    }

    fn open(&self, request: GateRequest) -> oneshot::Receiver<Resolution> {
        let (tx, rx) = oneshot::channel();
        self.inner.lock().pending = Some((request, tx));
        rx
    }
}

/// Parks on a [`GateBoard`] until someone submits a resolution.
pub struct ChannelGates {
    board: Arc<GateBoard>,
}

impl ChannelGates {
    pub fn new(board: Arc<GateBoard>) -> Self {
        Self { board }
    }
}

#[async_trait]
impl GateResponder for ChannelGates {
    async fn respond(&self, request: &GateRequest) -> Resolution {
        let rx = self.board.open(request.clone());
        rx.await.unwrap_or(Resolution::Abort)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn request(id: &str) -> GateRequest {
        GateRequest {
            gate_id: id.into(),
            kind: GateKind::Outline,
            stage: Stage::Skeletonizing,
            payload: json!({}),
            options: vec![],
        }
    }

    #[tokio::test]
    async fn board_resolves_once() {
        let board = Arc::new(GateBoard::new());
        let gates = ChannelGates::new(board.clone());
        let waiter = tokio::spawn(async move { gates.respond(&request("outline-7")).await });
        while board.pending().is_none() {
            tokio::task::yield_now().await;
        }
        assert_eq!(board.submit("outline-8", Resolution::Approve), Err(GateError::NoSuchGate("outline-8".into())));
        board.submit("outline-7", Resolution::revise("merge")).unwrap();
        assert_eq!(board.submit("outline-7", Resolution::Approve), Err(GateError::AlreadyResolved("outline-7".into())));
        assert_eq!(waiter.await.unwrap(), Resolution::revise("merge"));
    }

    #[test]
    fn resolution_wire_shape() {
        let v = serde_json::to_value(Resolution::revise("x")).unwrap();
        assert_eq!(v, json!({"resolution": "revise", "text": "x"}));
        let r: Resolution = serde_json::from_value(json!({"resolution": "approve"})).unwrap();
        assert_eq!(r, Resolution::Approve);
    }
}
