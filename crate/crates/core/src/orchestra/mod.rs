//! The planner: turns execution history and context into validated action
//! plans, and the pure state-transition function every executed step goes
//! through.

mod transition;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::prompts::ids;
use crate::model::{extract_json, LanguageModel, PromptRequest};
use crate::protocol::schema;
use crate::protocol::ToolDescriptor;
use crate::state::{skeleton_coverage, HistoryEntry, PipelineState};

pub use transition::{stage_of, transition, ExecutedStep, TransitionError};

/// Re-prompts after the first invalid answer.
pub const MAX_REPROMPTS: usize = 2;
pub const DEFAULT_STEP_BUDGET: usize = 50;
pub const DEFAULT_MAX_LAYERS: u32 = 3;
pub const DEFAULT_MIN_GAIN: f64 = 0.02;
/// History entries shown to the planner.
pub const HISTORY_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub tool_name: String,
    #[serde(default = "empty_object")]
    pub args: Value,
    #[serde(default)]
    pub rationale: String,
}

fn empty_object() -> Value {
    json!({})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    #[serde(default)]
    pub steps: Vec<PlanStep>,
    #[serde(default)]
    pub stop: bool,
}

impl ActionPlan {
    pub fn stop() -> Self {
        Self { steps: Vec::new(), stop: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PlanViolation {
    Malformed { detail: String },
    EmptyPlan,
    UnknownTool { step: usize, tool: String },
    SchemaViolation { step: usize, tool: String, details: Vec<String> },
}

impl std::fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanViolation::Malformed { detail } => write!(f, "malformed plan: {detail}"),
            PlanViolation::EmptyPlan => write!(f, "plan has no steps but stop is false"),
            PlanViolation::UnknownTool { step, tool } => write!(f, "step {step}: unknown tool `{tool}`"),
            PlanViolation::SchemaViolation { step, tool, details } => {
                write!(f, "step {step}: arguments for `{tool}` invalid: {}", details.join("; "))
            }
        }
    }
}

/// Checks a plan against the tools available at planning time. Steps are
/// numbered from 1. Arguments bound to session state may be omitted.
pub fn validate_plan(plan: &ActionPlan, available: &[ToolDescriptor]) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    if plan.steps.is_empty() && !plan.stop {
        out.push(PlanViolation::EmptyPlan);
    }
    for (i, step) in plan.steps.iter().enumerate() {
        let n = i + 1;
        let Some(tool) = available.iter().find(|t| t.name == step.tool_name) else {
            out.push(PlanViolation::UnknownTool { step: n, tool: step.tool_name.clone() });
            continue;
        };
        let details = schema::validate_unbound(&tool.input_schema, &step.args);
        if !details.is_empty() {
            out.push(PlanViolation::SchemaViolation { step: n, tool: step.tool_name.clone(), details });
        }
    }
    out
}

/// Extracts the plan object from a completion that may carry prose.
pub fn parse_plan(raw: &str) -> Result<ActionPlan, PlanViolation> {
    let value = extract_json(raw).ok_or_else(|| PlanViolation::Malformed { detail: "no JSON object found".into() })?;
    if !value.is_object() {
        return Err(PlanViolation::Malformed { detail: "expected a JSON object".into() });
    }
    serde_json::from_value(value).map_err(|e| PlanViolation::Malformed { detail: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanAttempt {
    pub raw: String,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: ActionPlan,
    pub attempts: Vec<PlanAttempt>,
}

impl PlanOutcome {
    pub fn rejected(&self) -> impl Iterator<Item = &PlanAttempt> {
        self.attempts.iter().filter(|a| !a.violations.is_empty())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("planning failed after {} attempts: {}", attempts.len(), last_error(attempts))]
pub struct PlanningFailed {
    pub attempts: Vec<PlanAttempt>,
}

fn last_error(attempts: &[PlanAttempt]) -> String {
    attempts.last().map(|a| a.violations.join("; ")).unwrap_or_default()
}

/// Tool descriptions exactly as the servers advertise them.
pub fn describe_tools(available: &[ToolDescriptor]) -> String {
    available
        .iter()
        .map(|t| format!("- {}: {}\n  input schema: {}", t.name, t.description, t.input_schema))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerLimits {
    pub max_layers: u32,
    pub min_gain: f64,
}

impl Default for PlannerLimits {
    fn default() -> Self {
        Self { max_layers: DEFAULT_MAX_LAYERS, min_gain: DEFAULT_MIN_GAIN }
    }
}

/// The context object the planner sees.
pub fn planning_context(state: &PipelineState, available: &[ToolDescriptor], limits: PlannerLimits) -> Value {
    let coverage = match (&state.skeleton, &state.tree) {
        (Some(s), Some(t)) => skeleton_coverage(s, t),
        _ => 0.0,
    };
    let pending: Vec<&str> = state.pending_feedback().iter().map(|f| f.text.as_str()).collect();
    let names: Vec<&str> = available.iter().map(|t| t.name.as_str()).collect();
    json!({
        "stage": state.stage,
        "topic": state.brief.topic,
        "corpus_size": state.corpus.len(),
        "groups": state.tree.as_ref().map_or(0, |t| t.groups.len()),
        "has_skeleton": state.skeleton.is_some(),
        "skeleton_version": state.skeleton.as_ref().map_or(0, |s| s.version),
        "sections": state.skeleton.as_ref().map_or(0, |s| s.sections.len()),
        "digests": state.digests.len(),
        "has_plan": state.plan.is_some(),
        "layers_done": state.reports.len(),
        "last_gain": state.reports.last().map(|r| r.gain()),
        "coverage": coverage,
        "max_layers": limits.max_layers,
        "min_gain": limits.min_gain,
        "pending_feedback": pending,
        "available": names,
    })
}

/// Asks the backend for the next plan, re-prompting with the validation
/// error up to [`MAX_REPROMPTS`] times.
pub async fn plan_next(
    model: &dyn LanguageModel,
    history: &[HistoryEntry],
    context: &Value,
    available: &[ToolDescriptor],
) -> Result<PlanOutcome, PlanningFailed> {
    let tools = describe_tools(available);
    let pending: Vec<&str> =
        context["pending_feedback"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
    let feedback = if pending.is_empty() { "none".to_string() } else { pending.join("; ") };
    let mut attempts = Vec::new();
    let mut validation_error = "none".to_string();
    for _ in 0..=MAX_REPROMPTS {
        let req = PromptRequest::new(ids::ORCHESTRA_PLAN)
            .var("tools", tools.clone())
            .json_var("history", &history)
            .json_var("context", context)
            .var("feedback", feedback.clone())
            .var("validation_error", validation_error.clone());
        let raw = match model.complete(&req).await {
            Ok(c) => c.text,
            Err(e) => {
                validation_error = e.to_string();
                attempts.push(PlanAttempt { raw: String::new(), violations: vec![validation_error.clone()] });
                continue;
            }
        };
        let violations: Vec<String> = match parse_plan(&raw) {
            Ok(mut plan) => {
                let v = validate_plan(&plan, available);
                if v.is_empty() {
                    if plan.steps.is_empty() {
                        plan.stop = true;
                    }
                    attempts.push(PlanAttempt { raw, violations: Vec::new() });
                    return Ok(PlanOutcome { plan, attempts });
                }
                v.iter().map(ToString::to_string).collect()
            }
            Err(v) => vec![v.to_string()],
        };
        validation_error = violations.join("; ");
        attempts.push(PlanAttempt { raw, violations });
    }
    Err(PlanningFailed { attempts })
}
