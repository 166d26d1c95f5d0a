//! Analysis agent: scoping dialogue, then retrieval and grouping.

use serde_json::{json, Value};

use super::gate::{GateKind, Resolution};
use super::session::Session;
use super::{AgentError, AgentId};
use crate::model::prompts::ids;
use crate::model::{extract_json, PromptRequest};
use crate::protocol::{CallError, ToolResult};
use crate::state::{ReferenceDocument, ResearchBrief};

const AGENT: AgentId = AgentId::Analysis;

/// Asks clarifying questions until the user approves or the turn cap is
/// reached, then summarizes the dialogue into the research brief.
pub(super) async fn consensus(s: &mut Session) -> Result<(), AgentError> {
    let cap = s.rt.config.limits.consensus_turns;
    loop {
        let asked = s.state.dialogue.iter().filter(|t| t.role == "assistant").count();
        if s.state.consensus_reached || asked >= cap {
            break;
        }
        let req = PromptRequest::new(ids::CONSENSUS_QUESTION)
            .var("topic", s.state.brief.topic.clone())
            .var("goals", s.state.brief.goals.clone())
            .json_var("dialogue", &s.state.dialogue);
        let question = s.rt.model.complete(&req).await?.text.trim().to_string();
        s.record(AGENT, "analysis.ask", json!({"turn": asked + 1}), ToolResult::json(json!({"question": question})))?;
        match s.gate(GateKind::Consensus, json!({"question": question})).await? {
            Resolution::Abort => return Err(AgentError::ConsensusAbandoned),
            Resolution::Approve | Resolution::Revise { .. } | Resolution::Regenerate => {}
        }
    }
    let req = PromptRequest::new(ids::CONSENSUS_SUMMARIZE)
        .var("topic", s.state.brief.topic.clone())
        .var("goals", s.state.brief.goals.clone())
        .json_var("dialogue", &s.state.dialogue);
    let reply = s.rt.model.complete(&req).await?.text;
    let brief = brief_from(&s.state.brief, extract_json(&reply).unwrap_or(Value::Null));
    s.record(AGENT, "analysis.summarize", json!({}), ToolResult::json(json!({"brief": brief})))
}

/// Reads the summarize completion leniently: the topic never changes and
/// at least one perspective always survives.
fn brief_from(current: &ResearchBrief, reply: Value) -> ResearchBrief {
    let text = |k: &str| reply.get(k).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string);
    let mut perspectives: Vec<String> = Vec::new();
    for p in reply.get("perspectives").and_then(Value::as_array).into_iter().flatten() {
        if let Some(p) = p.as_str().map(str::trim).filter(|p| !p.is_empty()) {
            if !perspectives.iter().any(|x| x == p) {
                perspectives.push(p.to_string());
            }
        }
    }
    if perspectives.is_empty() {
        perspectives.push(current.topic.clone());
    }
    ResearchBrief {
        topic: current.topic.clone(),
        goals: text("goals").unwrap_or_else(|| current.goals.clone()),
        perspectives,
        search_strategy: text("search_strategy").unwrap_or_default(),
    }
}

fn retriever_down(err: &AgentError) -> Option<String> {
    match err {
        AgentError::Call { source: CallError::ToolFailed { message, .. }, .. } if message.contains("unavailable") => {
            Some(message.clone())
        }
        _ => None,
    }
}

/// Queries, retrieval, crawling, filtering and grouping, closed by the
/// analysis review gate.
pub(super) async fn gather(s: &mut Session) -> Result<(), AgentError> {
    let limits = s.rt.config.limits.clone();
    s.invoke(AGENT, "search.generate_queries", json!({})).await?;
    for query in s.state.queries.clone() {
        if let Err(e) = s.invoke(AGENT, "search.retrieve", json!({"query": query, "limit": limits.retrieve_limit})).await {
            return Err(retriever_down(&e).map(AgentError::RetrieverUnavailable).unwrap_or(e));
        }
    }
    let mut fetched: Vec<ReferenceDocument> = Vec::new();
    let pending: Vec<String> = s.state.search_results.iter().filter(|r| !r.fetched).map(|r| r.url.clone()).collect();
    for url in pending {
        match s.invoke(AGENT, "search.crawl", json!({"url": url})).await {
            Ok(r) => {
                if let Some(doc) = r.json_body().and_then(|b| serde_json::from_value(b["document"].clone()).ok()) {
                    fetched.push(doc);
                }
            }
            // A page that cannot be fetched is skipped; the failure is in
            // the history.
            Err(AgentError::Call { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if !fetched.is_empty() {
        let args = json!({"docs": fetched, "threshold": limits.filter_threshold});
        s.invoke(AGENT, "search.similarity_filter", args).await?;
    }
    let mut regenerated = 0;
    loop {
        s.invoke(AGENT, "group.cluster_references", json!({})).await?;
        let groups: Vec<Value> = s
            .state
            .tree
            .iter()
            .flat_map(|t| t.groups.iter())
            .map(|g| json!({"group_id": g.group_id, "label": g.label, "size": g.member_ids.len()}))
            .collect();
        let payload = json!({"corpus_size": s.state.corpus.len(), "groups": groups});
        match s.gate(GateKind::AnalysisQa, payload).await? {
            Resolution::Approve | Resolution::Revise { .. } => return Ok(()),
            Resolution::Regenerate => {
                regenerated += 1;
                if regenerated > limits.gate_rejections {
                    return Err(AgentError::GateRejectedLimit {
                        gate: GateKind::AnalysisQa.as_str().into(),
                        limit: limits.gate_rejections,
                    });
                }
            }
            Resolution::Abort => return Err(AgentError::GateAborted { gate: GateKind::AnalysisQa.as_str().into() }),
        }
    }
}
