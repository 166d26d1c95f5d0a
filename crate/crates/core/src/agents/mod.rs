//! The three agents, the access table that limits which servers each may
//! call, and the session loop that drives them through the stages.

mod analysis;
pub mod gate;
pub mod registry;
pub mod replay;
mod session;
mod skeleton;
pub mod store;
mod writing;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::config::{ConfigError, AGENTS};
use crate::model::ModelError;
use crate::orchestra::{PlanningFailed, TransitionError};
use crate::protocol::CallError;
use crate::state::Stage;

pub use gate::{AutoApprove, ChannelGates, GateBoard, GateError, GateKind, GateRequest, GateResponder, Resolution, ScriptedGates};
pub use registry::Registry;
pub use replay::{replay, ReplayReport};
pub use session::{RunOutcome, Runtime, Session};
pub use store::{SessionStore, TranscriptLine};
pub use writing::{assemble_survey, bibliography, cited_ids, mermaid_outline, repair_citations};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentId {
    Analysis,
    Skeleton,
    Writing,
}

impl AgentId {
    pub const ALL: [AgentId; 3] = [AgentId::Analysis, AgentId::Skeleton, AgentId::Writing];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::Analysis => "analysis",
            AgentId::Skeleton => "skeleton",
            AgentId::Writing => "writing",
        }
    }

    pub fn parse(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == id)
    }
}

/// The agent-to-server table. A tool is reachable by an agent iff the
/// server owning it (the part of the name before the first `.`) is bound
/// to that agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bindings {
    table: BTreeMap<String, BTreeSet<String>>,
}

impl Bindings {
    pub fn new(table: &BTreeMap<String, Vec<String>>) -> Self {
        Self {
            table: table
                .iter()
                .filter(|(agent, _)| AGENTS.contains(&agent.as_str()))
                .map(|(a, s)| (a.clone(), s.iter().cloned().collect()))
                .collect(),
        }
    }

    pub fn servers(&self, agent: &str) -> Vec<String> {
        self.table.get(agent).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn authorize(&self, agent: &str, tool: &str) -> bool {
        let Some((server, rest)) = tool.split_once('.') else {
            return false;
        };
        !rest.is_empty() && self.table.get(agent).is_some_and(|s| s.contains(server))
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent `{agent}` may not call `{tool}`")]
    AccessDenied { agent: String, tool: String },
    #[error("`{tool}` failed: {source}")]
    Call { tool: String, source: CallError },
    #[error("section `{node_id}` failed: {message}")]
    SectionFailed { node_id: String, message: String },
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    PlanningFailed(#[from] PlanningFailed),
    #[error("planner step budget of {budget} exhausted")]
    StepBudgetExhausted { budget: usize },
    #[error("consensus abandoned by the user")]
    ConsensusAbandoned,
    #[error("gate `{gate}` aborted by the user")]
    GateAborted { gate: String },
    #[error("gate `{gate}` regenerated more than {limit} times")]
    GateRejectedLimit { gate: String, limit: u32 },
    #[error("retriever unavailable: {0}")]
    RetrieverUnavailable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("session store: {0}")]
    Store(String),
    #[error("transcript mismatch at seq {seq}: {detail}")]
    TranscriptMismatch { seq: u64, detail: String },
}

impl From<std::io::Error> for AgentError {
    fn from(e: std::io::Error) -> Self {
        AgentError::Store(e.to_string())
    }
}

impl AgentError {
    /// True for failures of the planning loop itself.
    pub fn is_planning(&self) -> bool {
        matches!(self, AgentError::PlanningFailed(_) | AgentError::StepBudgetExhausted { .. })
    }
}

/// The agent responsible for a stage.
pub fn agent_for(stage: Stage) -> AgentId {
    match stage {
        Stage::Consensus | Stage::Analysis => AgentId::Analysis,
        Stage::Skeletonizing => AgentId::Skeleton,
        Stage::Writing | Stage::Done => AgentId::Writing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_bindings;

    #[test]
    fn default_table() {
        let b = Bindings::new(&default_bindings());
        assert!(b.authorize("analysis", "search.retrieve"));
        assert!(!b.authorize("writing", "group.cluster_references"));
        assert!(!b.authorize("nobody", "figure.render_mermaid"));
        assert!(!b.authorize("writing", "figure"));
        assert!(!b.authorize("writing", "figure."));
    }
}
