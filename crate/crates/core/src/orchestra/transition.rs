use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::protocol::ToolResult;
use crate::state::{
    build_reference_tree, DialogueTurn, Digest, Feedback, PipelineState, ReferenceDocument, ReferenceGroup,
    RefinementReport, ResearchBrief, RevisionPlan, SearchResult, Skeleton, Stage, StateError,
};

use super::PlanOutcome;

/// One executed step: who ran which tool with which arguments, and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedStep {
    pub agent_id: String,
    pub tool_name: String,
    pub args: Value,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransitionError {
    #[error("`{tool}` cannot run during the {stage:?} stage")]
    IllegalTransition { tool: String, stage: Stage },
    #[error("`{tool}` returned an unusable result: {detail}")]
    MalformedResult { tool: String, detail: String },
    #[error(transparent)]
    State(#[from] StateError),
}

/// The stage a native tool or agent-internal step belongs to. Tools from
/// user-customized servers have none and may run at any stage.
pub fn stage_of(tool: &str) -> Option<Stage> {
    let (prefix, _) = tool.split_once('.')?;
    match (prefix, tool) {
        (_, "analysis.ask" | "analysis.summarize" | "gate.consensus") => Some(Stage::Consensus),
        (_, "gate.analysis_qa") => Some(Stage::Analysis),
        (_, "gate.outline") => Some(Stage::Skeletonizing),
        ("search" | "group", _) => Some(Stage::Analysis),
        ("skeleton" | "digest" | "refine" | "orchestra", _) => Some(Stage::Skeletonizing),
        ("writing" | "figure", _) => Some(Stage::Writing),
        _ => None,
    }
}

fn field<T: serde::de::DeserializeOwned>(tool: &str, body: &Value, key: &str) -> Result<T, TransitionError> {
    serde_json::from_value(body.get(key).cloned().unwrap_or(Value::Null))
        .map_err(|e| TransitionError::MalformedResult { tool: tool.to_string(), detail: format!("`{key}`: {e}") })
}

fn summary_of(tool: &str, result: &ToolResult) -> String {
    if tool == "orchestra.plan_next" && !result.is_error {
        if let Some(plan) = result.json_body().and_then(|b| b.get("plan")) {
            let names: Vec<&str> = plan["steps"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|s| s["tool_name"].as_str())
                .collect();
            let why = plan["steps"][0]["rationale"].as_str().unwrap_or_default();
            return if names.is_empty() {
                "plan: stop".to_string()
            } else {
                format!("plan: {} ({why})", names.join(", "))
            };
        }
    }
    result.headline()
}

fn push_doc(corpus: &mut Vec<ReferenceDocument>, doc: ReferenceDocument) {
    if !corpus.iter().any(|d| d.doc_id == doc.doc_id) {
        corpus.push(doc);
    }
}

/// Successor state after `step` produced `result`. Pure: equal inputs give
/// equal outputs. Failed results only add a history entry.
pub fn transition(
    state: &PipelineState,
    step: &ExecutedStep,
    result: &ToolResult,
) -> Result<PipelineState, TransitionError> {
    let tool = step.tool_name.as_str();
    if let Some(stage) = stage_of(tool) {
        if stage != state.stage {
            return Err(TransitionError::IllegalTransition { tool: tool.to_string(), stage: state.stage });
        }
    }
    let mut next = state.clone();
    let (agent, args, ts) = (step.agent_id.as_str(), &step.args, step.timestamp);
    if result.is_error {
        next.history.append(agent, tool, args, &result.headline(), false, ts);
        return Ok(next);
    }
    let body = result.json_body().cloned().unwrap_or(Value::Null);
    let resolution = body["resolution"].as_str().unwrap_or_default().to_string();
    let reply_text = body["text"].as_str().unwrap_or_default().to_string();

    match tool {
        "analysis.ask" => {
            let question: String = field(tool, &body, "question")?;
            next.dialogue.push(DialogueTurn { role: "assistant".into(), text: question });
        }
        "gate.consensus" => match resolution.as_str() {
            "approve" => next.consensus_reached = true,
            "revise" => next.dialogue.push(DialogueTurn { role: "user".into(), text: reply_text }),
            _ => {}
        },
        "analysis.summarize" => {
            next.brief = field::<ResearchBrief>(tool, &body, "brief")?;
            next.consensus_reached = true;
            for doc in state.uploads.iter().cloned() {
                push_doc(&mut next.corpus, doc);
            }
            next.advance(Stage::Analysis)?;
        }
        "search.generate_queries" => next.queries = field(tool, &body, "queries")?,
        "search.retrieve" => {
            for r in field::<Vec<SearchResult>>(tool, &body, "results")? {
                if !next.search_results.iter().any(|x| x.url == r.url) {
                    next.search_results.push(r);
                }
            }
        }
        "search.crawl" => {
            field::<ReferenceDocument>(tool, &body, "document")?;
            if let Some(url) = args["url"].as_str() {
                if let Some(r) = next.search_results.iter_mut().find(|r| r.url == url) {
                    r.fetched = true;
                }
            }
        }
        "search.similarity_filter" => {
            for doc in field::<Vec<ReferenceDocument>>(tool, &body, "documents")? {
                push_doc(&mut next.corpus, doc);
            }
        }
        "group.cluster_references" => {
            let groups: Vec<ReferenceGroup> = field(tool, &body, "groups")?;
            next.tree = Some(build_reference_tree(&next.brief.topic, &groups, &next.corpus)?);
        }
        "gate.analysis_qa" => match resolution.as_str() {
            "regenerate" => next.tree = None,
            "approve" | "revise" => {
                if resolution == "revise" && !reply_text.is_empty() {
                    next.feedback.push(Feedback { stage: Stage::Skeletonizing, text: reply_text, consumed: false });
                }
                next.advance(Stage::Skeletonizing)?;
            }
            _ => {}
        },
        "orchestra.plan_next" => {
            let outcome: PlanOutcome = serde_json::from_value(body.clone())
                .map_err(|e| TransitionError::MalformedResult { tool: tool.to_string(), detail: e.to_string() })?;
            for attempt in outcome.rejected() {
                let summary = format!("rejected plan: {}", attempt.violations.join("; "));
                next.history.append(agent, tool, args, &summary, false, ts);
            }
        }
        "skeleton.init" => {
            next.skeleton = Some(field::<Skeleton>(tool, &body, "skeleton")?);
            next.digests.clear();
            next.plan = None;
        }
        "skeleton.revise" => {
            next.plan = Some(field::<RevisionPlan>(tool, &body, "plan")?);
            for f in next.feedback.iter_mut() {
                f.consumed = true;
            }
        }
        "digest.make" => {
            let digests: Vec<Digest> = field(tool, &body, "digests")?;
            if let Some(skeleton) = next.skeleton.as_mut() {
                let mut attached = false;
                for d in &digests {
                    for s in &d.suggestions {
                        let Some(node) = s.target_node_id.as_deref().and_then(|id| skeleton.node_mut(id)) else {
                            continue;
                        };
                        if !node.attached_digests.contains(&d.digest_id) {
                            node.attached_digests.push(d.digest_id.clone());
                            attached = true;
                        }
                    }
                }
                if attached {
                    skeleton.version += 1;
                }
            }
            next.digests = digests;
        }
        "digest.consolidate" => next.plan = Some(field(tool, &body, "plan")?),
        "refine.step" => {
            next.skeleton = Some(field(tool, &body, "skeleton")?);
            next.reports.push(field::<RefinementReport>(tool, &body, "report")?);
            next.plan = None;
        }
        "gate.outline" => match resolution.as_str() {
            "approve" => next.advance(Stage::Writing)?,
            "revise" => {
                next.feedback.push(Feedback { stage: Stage::Skeletonizing, text: reply_text, consumed: false });
                next.outline_rounds += 1;
            }
            "regenerate" => {
                next.skeleton = None;
                next.digests.clear();
                next.plan = None;
                next.reports.clear();
                next.outline_rounds += 1;
            }
            _ => {}
        },
        "writing.compose_section" | "writing.citation_repair" => {
            let node_id: String = field(tool, args, "node_id")?;
            let text: String = field(tool, &body, "text")?;
            next.sections.insert(node_id, text);
        }
        "figure.render_mermaid" => next.figure = Some(result.text_body()),
        "writing.assemble" => {
            next.survey = Some(field(tool, &body, "survey")?);
            next.advance(Stage::Done)?;
        }
        _ => {}
    }
    next.history.append(agent, tool, args, &summary_of(tool, result), true, ts);
    Ok(next)
}
