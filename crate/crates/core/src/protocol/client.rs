//! Client sessions and hierarchical composition.
//!
//! A [`ServerHandle`] is what agents hold: it caches the tool list, checks
//! arguments before dispatch, and routes calls either over a transport or,
//! for composed handles, to the owning child.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::RwLock;
use serde_json::{json, Value};
use thiserror::Error;

use super::codec::{CodecError, RpcEnvelope, INVALID_PARAMS, TOOL_FAILURE};
use super::schema;
use super::server::{McpServer, ToolHandler, DEFAULT_CALL_TIMEOUT, PROTOCOL_VERSION};
use super::types::{Origin, ToolDescriptor, ToolResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("transport down: {0}")]
    Down(String),
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error(transparent)]
    Codec(CodecError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CallError {
    #[error("unknown tool `{tool}` on server `{server}`")]
    UnknownTool { server: String, tool: String },
    #[error("arguments for `{tool}` rejected: {}", violations.join("; "))]
    SchemaViolation { tool: String, violations: Vec<String> },
    #[error("tool `{tool}` failed: {message}")]
    ToolFailed { tool: String, message: String, result: Option<ToolResult> },
    #[error("transport down: {0}")]
    TransportDown(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("name collision: two children share server id `{0}`")]
    NameCollision(String),
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
}

impl CallError {
    fn from_transport(tool: &str, err: TransportError) -> Self {
        match err {
            TransportError::Down(m) => CallError::TransportDown(m),
            TransportError::Codec(c) => CallError::ProtocolViolation(c.to_string()),
            TransportError::Rpc { code: INVALID_PARAMS, message } => {
                CallError::SchemaViolation { tool: tool.to_string(), violations: vec![message] }
            }
            TransportError::Rpc { code: TOOL_FAILURE, message } => {
                CallError::ToolFailed { tool: tool.to_string(), message, result: None }
            }
            TransportError::Rpc { code, message } => CallError::Rpc { code, message },
        }
    }
}

pub(crate) fn unwrap_reply(reply: RpcEnvelope) -> Result<Value, TransportError> {
    if let Some(err) = reply.error() {
        return Err(TransportError::Rpc { code: err.code, message: err.message });
    }
    reply
        .result()
        .cloned()
        .ok_or_else(|| TransportError::Codec(CodecError::ProtocolViolation("reply without result".into())))
}

/// A request/response channel to one server.
#[async_trait]
pub trait Connection: Send + Sync {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError>;
    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError>;
}

/// Direct dispatch to a server living in the same process.
pub struct InProcessConnection {
    server: Arc<McpServer>,
    next_id: AtomicU64,
}

impl InProcessConnection {
    pub fn new(server: Arc<McpServer>) -> Self {
        Self { server, next_id: AtomicU64::new(1) }
    }
}

#[async_trait]
impl Connection for InProcessConnection {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let reply = self
            .server
            .handle(RpcEnvelope::request(id, method, params))
            .await
            .ok_or_else(|| TransportError::Down("server produced no reply".into()))?;
        unwrap_reply(reply)
    }

    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError> {
        self.server.handle(RpcEnvelope::notification(method, params)).await;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportSpec {
    InProcess,
    Stdio(Vec<String>),
    Http(String),
    Composite,
}

enum Route {
    Direct(Arc<dyn Connection>),
    Composite(Vec<ServerHandle>),
}

struct HandleInner {
    server_id: String,
    transport: TransportSpec,
    origin: Origin,
    tools: RwLock<Vec<ToolDescriptor>>,
    protocol_version: RwLock<Option<String>>,
    timeout: Duration,
    route: Route,
}

/// Shareable client handle to a (possibly composed) server.
#[derive(Clone)]
pub struct ServerHandle {
    inner: Arc<HandleInner>,
}

impl std::fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerHandle")
            .field("server_id", &self.inner.server_id)
            .field("transport", &self.inner.transport)
            .field("origin", &self.inner.origin)
            .finish()
    }
}

impl ServerHandle {
    pub fn new(
        server_id: impl Into<String>,
        transport: TransportSpec,
        origin: Origin,
        connection: Arc<dyn Connection>,
        timeout: Duration,
    ) -> Self {
        Self {
            inner: Arc::new(HandleInner {
                server_id: server_id.into(),
                transport,
                origin,
                tools: RwLock::new(Vec::new()),
                protocol_version: RwLock::new(None),
                timeout,
                route: Route::Direct(connection),
            }),
        }
    }

    /// Opens a handle over the given transport and performs the handshake.
    pub async fn open(
        server_id: impl Into<String>,
        transport: TransportSpec,
        origin: Origin,
        timeout: Duration,
    ) -> Result<Self, CallError> {
        let connection: Arc<dyn Connection> = match &transport {
            TransportSpec::Stdio(cmd) => Arc::new(
                super::stdio::StdioConnection::spawn(cmd).map_err(|e| CallError::from_transport("", e))?,
            ),
            TransportSpec::Http(url) => Arc::new(super::http::HttpConnection::new(url.clone())),
            TransportSpec::InProcess | TransportSpec::Composite => {
                return Err(CallError::ProtocolViolation("open() needs a network transport".into()))
            }
        };
        let handle = Self::new(server_id, transport, origin, connection, timeout);
        handle.initialize().await?;
        Ok(handle)
    }

    /// In-process handle around a local server, already initialized.
    pub async fn in_process(server_id: impl Into<String>, server: Arc<McpServer>, origin: Origin) -> Result<Self, CallError> {
        let handle = Self::new(
            server_id,
            TransportSpec::InProcess,
            origin,
            Arc::new(InProcessConnection::new(server)),
            DEFAULT_CALL_TIMEOUT,
        );
        handle.initialize().await?;
        Ok(handle)
    }

    pub fn server_id(&self) -> &str {
        &self.inner.server_id
    }

    pub fn transport(&self) -> &TransportSpec {
        &self.inner.transport
    }

    pub fn origin(&self) -> Origin {
        self.inner.origin
    }

    pub fn protocol_version(&self) -> Option<String> {
        self.inner.protocol_version.read().clone()
    }

    /// Cached tool list from the last `list_tools`.
    pub fn tools(&self) -> Vec<ToolDescriptor> {
        self.inner.tools.read().clone()
    }

    pub fn descriptor(&self, name: &str) -> Option<ToolDescriptor> {
        self.inner.tools.read().iter().find(|t| t.name == name).cloned()
    }

    pub async fn initialize(&self) -> Result<(), CallError> {
        if let Route::Direct(conn) = &self.inner.route {
            let reply = conn
                .request(
                    "initialize",
                    json!({
                        "protocolVersion": PROTOCOL_VERSION,
                        "clientInfo": {"name": "surveyforge", "version": env!("CARGO_PKG_VERSION")},
                        "capabilities": {}
                    }),
                )
                .await
                .map_err(|e| CallError::from_transport("", e))?;
            // Servers advertising another revision are accepted as long as
            // they answer the three core methods.
            let version = reply.get("protocolVersion").and_then(Value::as_str).map(str::to_string);
            *self.inner.protocol_version.write() = version;
            conn.notify("notifications/initialized", Value::Null)
                .await
                .map_err(|e| CallError::from_transport("", e))?;
        }
        self.list_tools().await?;
        Ok(())
    }

    /// Fetches the server's tools and caches them on the handle.
    pub fn list_tools(&self) -> futures::future::BoxFuture<'_, Result<Vec<ToolDescriptor>, CallError>> {
        Box::pin(async move {
            let tools = match &self.inner.route {
                Route::Direct(conn) => {
                    let reply = conn
                        .request("tools/list", json!({}))
                        .await
                        .map_err(|e| CallError::from_transport("", e))?;
                    let Some(list) = reply.get("tools").filter(|t| t.is_array()) else {
                        return Err(CallError::ProtocolViolation("tools/list reply lacks a `tools` array".into()));
                    };
                    let tools: Vec<ToolDescriptor> = serde_json::from_value(list.clone())
                        .map_err(|e| CallError::ProtocolViolation(format!("bad tool descriptor: {e}")))?;
                    for t in &tools {
                        t.check().map_err(CallError::ProtocolViolation)?;
                    }
                    let mut seen = std::collections::HashSet::new();
                    if let Some(dup) = tools.iter().find(|t| !seen.insert(t.name.clone())) {
                        return Err(CallError::ProtocolViolation(format!("duplicate tool `{}`", dup.name)));
                    }
                    tools
                }
                Route::Composite(children) => {
                    let mut tools = Vec::new();
                    for child in children {
                        for t in child.list_tools().await? {
                            tools.push(ToolDescriptor {
                                name: format!("{}.{}", child.server_id(), t.name),
                                ..t
                            });
                        }
                    }
                    tools
                }
            };
            *self.inner.tools.write() = tools.clone();
            Ok(tools)
        })
    }

    /// Invokes one tool. Arguments are checked against the cached schema
    /// before anything is sent.
    pub fn call_tool<'a>(
        &'a self,
        name: &'a str,
        args: Value,
    ) -> futures::future::BoxFuture<'a, Result<ToolResult, CallError>> {
        Box::pin(async move {
            let Some(descriptor) = self.descriptor(name) else {
                return Err(CallError::UnknownTool { server: self.server_id().to_string(), tool: name.to_string() });
            };
            let violations = schema::validate(&descriptor.input_schema, &args);
            if !violations.is_empty() {
                return Err(CallError::SchemaViolation { tool: name.to_string(), violations });
            }
            let result = match &self.inner.route {
                Route::Direct(conn) => {
                    let call = conn.request("tools/call", json!({"name": name, "arguments": args}));
                    let raw = match tokio::time::timeout(self.inner.timeout, call).await {
                        Ok(r) => r.map_err(|e| CallError::from_transport(name, e))?,
                        Err(_) => {
                            return Err(CallError::ToolFailed {
                                tool: name.to_string(),
                                message: format!("timed out after {}s", self.inner.timeout.as_secs_f64()),
                                result: None,
                            })
                        }
                    };
                    serde_json::from_value::<ToolResult>(raw)
                        .map_err(|e| CallError::ProtocolViolation(format!("bad tool result: {e}")))?
                }
                Route::Composite(children) => {
                    let (child_id, rest) = name.split_once('.').expect("composed names carry a prefix");
                    let child = children
                        .iter()
                        .find(|c| c.server_id() == child_id)
                        .expect("descriptor implies owning child");
                    return child.call_tool(rest, args).await;
                }
            };
            if result.content.is_empty() {
                return Err(CallError::ProtocolViolation(format!("`{name}` returned empty content")));
            }
            if result.is_error {
                return Err(CallError::ToolFailed {
                    tool: name.to_string(),
                    message: result.text_body(),
                    result: Some(result),
                });
            }
            Ok(result)
        })
    }
}

/// Aggregates child servers into one higher-level server. Child tools appear
/// as `childId.toolName`; composition nests.
pub async fn compose(name: impl Into<String>, children: Vec<ServerHandle>) -> Result<ServerHandle, CallError> {
    let mut seen = std::collections::HashSet::new();
    for child in &children {
        if !seen.insert(child.server_id().to_string()) {
            return Err(CallError::NameCollision(child.server_id().to_string()));
        }
    }
    let handle = ServerHandle {
        inner: Arc::new(HandleInner {
            server_id: name.into(),
            transport: TransportSpec::Composite,
            origin: Origin::Native,
            tools: RwLock::new(Vec::new()),
            protocol_version: RwLock::new(Some(PROTOCOL_VERSION.to_string())),
            timeout: DEFAULT_CALL_TIMEOUT,
            route: Route::Composite(children),
        }),
    };
    handle.list_tools().await?;
    Ok(handle)
}

struct ForwardHandler {
    handle: ServerHandle,
    tool: String,
}

#[async_trait]
impl ToolHandler for ForwardHandler {
    async fn call(&self, args: Value) -> ToolResult {
        match self.handle.call_tool(&self.tool, args).await {
            Ok(r) => r,
            Err(CallError::ToolFailed { result: Some(r), .. }) => r,
            Err(e) => ToolResult::error(e.to_string()),
        }
    }
}

/// Hosts a handle (typically a composed one) as a standalone server.
pub fn as_server(handle: &ServerHandle, version: &str) -> Result<McpServer, super::server::ServeError> {
    let mut builder = McpServer::builder(handle.server_id(), version);
    for tool in handle.tools() {
        let forward = ForwardHandler { handle: handle.clone(), tool: tool.name.clone() };
        builder = builder.tool(tool, forward);
    }
    builder.build()
}
