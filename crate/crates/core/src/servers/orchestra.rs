//! The planner exposed as a tool server. Stateless between calls: history,
//! context and the available tools all arrive as arguments.

use serde_json::{json, Value};

use super::{fail, finish, take, ServerDeps, VERSION};
use crate::orchestra::{plan_next, validate_plan, ActionPlan};
use crate::protocol::{ContentPart, McpServer, ServeError, ToolDescriptor, ToolResult};
use crate::state::HistoryEntry;

pub fn server(deps: &ServerDeps) -> Result<McpServer, ServeError> {
    let d = deps.clone();
    let plan = move |args: Value| {
        let d = d.clone();
        async move { plan_tool(&d, &args).await }
    };
    let validate = |args: Value| async move { finish(validate_tool(&args)) };
    McpServer::builder("orchestra", VERSION)
        .tool(
            ToolDescriptor::new(
                "plan_next",
                "Choose the next tool sequence from the execution history, the current context and the available \
                 tool descriptions. Invalid answers are re-prompted with the validation error.",
                json!({
                    "type": "object",
                    "properties": {
                        "history": {"type": "array", "items": {"type": "object"}, "x-state": "history"},
                        "context": {"type": "object", "x-state": "context"},
                        "available": {"type": "array", "items": {"type": "object"}, "minItems": 1, "x-state": "available"}
                    },
                    "required": ["history", "context", "available"]
                }),
            ),
            plan,
        )
        .tool(
            ToolDescriptor::new(
                "validate_plan",
                "List the violations of an action plan against the available tools; empty means valid.",
                json!({
                    "type": "object",
                    "properties": {
                        "plan": {"type": "object"},
                        "available": {"type": "array", "items": {"type": "object"}, "x-state": "available"}
                    },
                    "required": ["plan", "available"]
                }),
            ),
            validate,
        )
        .build()
}

async fn plan_tool(d: &ServerDeps, args: &Value) -> ToolResult {
    let parsed = (|| -> Result<_, ToolResult> {
        let history: Vec<HistoryEntry> = take(args, "history")?;
        let context: Value = take(args, "context")?;
        let available = take(args, "available")?;
        Ok((history, context, available))
    })();
    let (history, context, available): (Vec<HistoryEntry>, Value, Vec<ToolDescriptor>) = match parsed {
        Ok(p) => p,
        Err(e) => return e,
    };
    if available.is_empty() {
        return fail("no tools available to plan with");
    }
    match plan_next(d.model.as_ref(), &history, &context, &available).await {
        Ok(outcome) => ToolResult::json(serde_json::to_value(outcome).expect("plan serializes")),
        Err(e) => ToolResult {
            content: vec![
                ContentPart::Text { text: e.to_string() },
                ContentPart::Json { json: json!({"attempts": e.attempts}) },
            ],
            is_error: true,
        },
    }
}

fn validate_tool(args: &Value) -> Result<Value, ToolResult> {
    let plan: ActionPlan = take(args, "plan")?;
    let available: Vec<ToolDescriptor> = take(args, "available")?;
    Ok(json!({"violations": validate_plan(&plan, &available)}))
}
