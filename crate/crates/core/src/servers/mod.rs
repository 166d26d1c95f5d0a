//! The native tool servers. Each one is an ordinary [`McpServer`] and can be
//! hosted in-process, over stdio or over HTTP.

pub mod digest;
pub mod figure;
pub mod group;
pub mod orchestra;
pub mod refine;
pub mod retriever;
pub mod search;
pub mod skeleton;

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::model::{extract_json, LanguageModel, PromptRequest};
use crate::protocol::{McpServer, ServeError, ToolResult};

pub use retriever::{FixtureIndex, IndexEntry, Retriever, RetrieverError};

pub const NATIVE_SERVERS: &[&str] = &["search", "group", "skeleton", "digest", "refine", "figure", "orchestra"];

/// What the native servers need from their environment.
#[derive(Clone)]
pub struct ServerDeps {
    pub model: Arc<dyn LanguageModel>,
    pub retriever: Arc<dyn Retriever>,
}

impl ServerDeps {
    pub fn new(model: Arc<dyn LanguageModel>, retriever: Arc<dyn Retriever>) -> Self {
        Self { model, retriever }
    }
}

/// Builds the native server registered under `id`.
pub fn build(id: &str, deps: &ServerDeps) -> Option<Result<McpServer, ServeError>> {
    let server = match id {
        "search" => search::server(deps),
        "group" => group::server(deps),
        "skeleton" => skeleton::server(deps),
        "digest" => digest::server(deps),
        "refine" => refine::server(),
        "figure" => figure::server(),
        "orchestra" => orchestra::server(deps),
        _ => return None,
    };
    Some(server)
}

pub(crate) const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parses one argument, turning a decode failure into an error result.
pub(crate) fn take<T: DeserializeOwned>(args: &Value, key: &str) -> Result<T, ToolResult> {
    crate::protocol::arg(args, key)
}

/// Sends a prompt and pulls the first JSON value out of the completion.
pub(crate) async fn ask_json(model: &dyn LanguageModel, req: PromptRequest) -> Result<Value, String> {
    let template = req.template_id.clone();
    let completion = model.complete(&req).await.map_err(|e| e.to_string())?;
    extract_json(&completion.text).ok_or_else(|| format!("`{template}` completion contains no JSON"))
}

pub(crate) async fn ask_text(model: &dyn LanguageModel, req: PromptRequest) -> Result<String, String> {
    model.complete(&req).await.map(|c| c.text).map_err(|e| e.to_string())
}

/// Flattens handler control flow: `Err` carries the finished error result.
pub(crate) fn finish(outcome: Result<Value, ToolResult>) -> ToolResult {
    outcome.map(ToolResult::json).unwrap_or_else(|e| e)
}

pub(crate) fn fail(message: impl Into<String>) -> ToolResult {
    ToolResult::error(message)
}

/// Schema for a property filled from session state when omitted.
pub(crate) fn bound(ty: &str, slot: &str, description: &str) -> Value {
    json!({"type": ty, "x-state": slot, "description": description})
}
