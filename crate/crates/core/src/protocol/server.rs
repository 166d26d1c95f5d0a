//! Server-side dispatch: `initialize`, `tools/list`, `tools/call`.

use std::collections::HashMap;
use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};
use thiserror::Error;

use super::codec::{
    decode_message, encode_message, EnvelopeKind, RpcEnvelope, INVALID_PARAMS, METHOD_NOT_FOUND, TOOL_FAILURE,
};
use super::schema;
use super::types::{ServerInfo, ToolDescriptor, ToolResult};

pub const PROTOCOL_VERSION: &str = "2025-06-18";
pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_secs(120);

#[async_trait]
pub trait ToolHandler: Send + Sync {
    async fn call(&self, args: Value) -> ToolResult;
}

#[async_trait]
impl<F, Fut> ToolHandler for F
where
    F: Fn(Value) -> Fut + Send + Sync,
    Fut: Future<Output = ToolResult> + Send,
{
    async fn call(&self, args: Value) -> ToolResult {
        (self)(args).await
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("duplicate tool name `{0}`")]
    DuplicateTool(String),
    #[error("invalid tool descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("failed to bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

struct Registered {
    descriptor: ToolDescriptor,
    handler: Arc<dyn ToolHandler>,
}

/// A tool server: a named table of handlers answering the protocol methods.
pub struct McpServer {
    info: ServerInfo,
    tools: Vec<Registered>,
    index: HashMap<String, usize>,
    timeout: Duration,
}

pub struct McpServerBuilder {
    info: ServerInfo,
    tools: Vec<Registered>,
    timeout: Duration,
}

impl McpServerBuilder {
    pub fn tool(mut self, descriptor: ToolDescriptor, handler: impl ToolHandler + 'static) -> Self {
        self.tools.push(Registered { descriptor, handler: Arc::new(handler) });
        self
    }

    pub fn tool_arc(mut self, descriptor: ToolDescriptor, handler: Arc<dyn ToolHandler>) -> Self {
        self.tools.push(Registered { descriptor, handler });
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn build(self) -> Result<McpServer, ServeError> {
        let mut index = HashMap::new();
        for (i, t) in self.tools.iter().enumerate() {
            t.descriptor.check().map_err(ServeError::InvalidDescriptor)?;
            if index.insert(t.descriptor.name.clone(), i).is_some() {
                return Err(ServeError::DuplicateTool(t.descriptor.name.clone()));
            }
        }
        Ok(McpServer { info: self.info, tools: self.tools, index, timeout: self.timeout })
    }
}

impl McpServer {
    pub fn builder(name: impl Into<String>, version: impl Into<String>) -> McpServerBuilder {
        McpServerBuilder {
            info: ServerInfo { name: name.into(), version: version.into() },
            tools: Vec::new(),
            timeout: DEFAULT_CALL_TIMEOUT,
        }
    }

    pub fn info(&self) -> &ServerInfo {
        &self.info
    }

    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        self.tools.iter().map(|t| t.descriptor.clone()).collect()
    }

    /// Handles one decoded message. Notifications and stray responses yield `None`.
    pub async fn handle(&self, request: RpcEnvelope) -> Option<RpcEnvelope> {
        if request.kind() != EnvelopeKind::Request {
            return None;
        }
        let id = request.id().cloned().unwrap_or(Value::Null);
        let reply = match request.method().unwrap_or_default() {
            "initialize" => RpcEnvelope::response(
                id,
                json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "serverInfo": {"name": self.info.name, "version": self.info.version},
                    "capabilities": {"tools": {}}
                }),
            ),
            "ping" => RpcEnvelope::response(id, json!({})),
            "tools/list" => RpcEnvelope::response(id, json!({"tools": self.descriptors()})),
            "tools/call" => self.call(id, request.params()).await,
            other => RpcEnvelope::error_response(id, METHOD_NOT_FOUND, format!("method not found: {other}")),
        };
        Some(reply)
    }

    /// Handles one raw frame, producing the encoded reply if one is due.
    pub async fn handle_frame(&self, frame: &[u8]) -> Option<Vec<u8>> {
        match decode_message(frame) {
            Ok(env) => self.handle(env).await.map(|r| encode_message(&r)),
            Err(e) => Some(encode_message(&RpcEnvelope::error_response(Value::Null, e.rpc_code(), e.to_string()))),
        }
    }

    async fn call(&self, id: Value, params: &Value) -> RpcEnvelope {
        let Some(name) = params.get("name").and_then(Value::as_str) else {
            return RpcEnvelope::error_response(id, INVALID_PARAMS, "tools/call requires `name`");
        };
        let Some(&slot) = self.index.get(name) else {
            return RpcEnvelope::error_response(id, INVALID_PARAMS, format!("unknown tool: {name}"));
        };
        let registered = &self.tools[slot];
        let args = params.get("arguments").cloned().unwrap_or_else(|| json!({}));
        let violations = schema::validate(&registered.descriptor.input_schema, &args);
        if !violations.is_empty() {
            return RpcEnvelope::error_response(
                id,
                INVALID_PARAMS,
                format!("invalid arguments for {name}: {}", violations.join("; ")),
            );
        }
        let handler = registered.handler.clone();
        let task = tokio::spawn(async move { handler.call(args).await });
        match tokio::time::timeout(self.timeout, task).await {
            Ok(Ok(result)) => RpcEnvelope::response(id, serde_json::to_value(result).expect("tool result serializes")),
            Ok(Err(join)) => {
                let reason = if join.is_panic() { panic_message(join.into_panic()) } else { "cancelled".into() };
                let result = ToolResult::error(format!("tool `{name}` panicked: {reason}"));
                RpcEnvelope::response(id, serde_json::to_value(result).expect("tool result serializes"))
            }
            Err(_) => RpcEnvelope::error_response(
                id,
                TOOL_FAILURE,
                format!("tool `{name}` timed out after {}s", self.timeout.as_secs_f64()),
            ),
        }
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Convenience for handlers: parse a typed field out of the arguments object.
pub fn arg<T: serde::de::DeserializeOwned>(args: &Value, key: &str) -> Result<T, ToolResult> {
    let value = args.get(key).cloned().unwrap_or(Value::Null);
    serde_json::from_value(value).map_err(|e| ToolResult::error(format!("argument `{key}`: {e}")))
}

pub fn opt_arg<T: serde::de::DeserializeOwned>(args: &Value, key: &str) -> Result<Option<T>, ToolResult> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| ToolResult::error(format!("argument `{key}`: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo_server() -> McpServer {
        McpServer::builder("echo", "0.1.0")
            .tool(
                ToolDescriptor::new(
                    "echo",
                    "Echo the `text` argument",
                    json!({"type": "object", "properties": {"text": {"type": "string"}}, "required": ["text"]}),
                ),
                |args: Value| async move { ToolResult::text(args["text"].as_str().unwrap_or_default()) },
            )
            .tool(
                ToolDescriptor::new("boom", "Always panics", json!({"type": "object"})),
                |_args: Value| async move {
                    if true {
                        panic!("kaboom");
                    }
                    ToolResult::text("unreachable")
                },
            )
            .build()
            .unwrap()
    }

    #[tokio::test]
    async fn unknown_method_is_32601() {
        let s = echo_server();
        let reply = s.handle(RpcEnvelope::request(1, "resources/list", Value::Null)).await.unwrap();
        assert_eq!(reply.error().unwrap().code, METHOD_NOT_FOUND);
    }

    #[tokio::test]
    async fn schema_violation_is_32602() {
        let s = echo_server();
        let reply = s
            .handle(RpcEnvelope::request(2, "tools/call", json!({"name": "echo", "arguments": {"text": 5}})))
            .await
            .unwrap();
        assert_eq!(reply.error().unwrap().code, INVALID_PARAMS);
    }

    #[tokio::test]
    async fn panics_become_error_results() {
        let s = echo_server();
        let reply = s
            .handle(RpcEnvelope::request(3, "tools/call", json!({"name": "boom", "arguments": {}})))
            .await
            .unwrap();
        let result: ToolResult = serde_json::from_value(reply.result().unwrap().clone()).unwrap();
        assert!(result.is_error);
        assert!(result.text_body().contains("kaboom"));
    }

    #[tokio::test]
    async fn notifications_get_no_reply() {
        let s = echo_server();
        assert!(s.handle(RpcEnvelope::notification("notifications/initialized", Value::Null)).await.is_none());
    }

    #[tokio::test]
    async fn malformed_frame_gets_parse_error() {
        let s = echo_server();
        let reply = s.handle_frame(b"{oops").await.unwrap();
        let env = decode_message(&reply).unwrap();
        assert_eq!(env.error().unwrap().code, -32700);
    }

    #[test]
    fn duplicate_names_rejected() {
        let d = ToolDescriptor::new("a", "a tool", json!({"type": "object"}));
        let err = McpServer::builder("s", "1")
            .tool(d.clone(), |_: Value| async { ToolResult::text("") })
            .tool(d, |_: Value| async { ToolResult::text("") })
            .build();
        assert!(matches!(err, Err(ServeError::DuplicateTool(_))));
    }
}
