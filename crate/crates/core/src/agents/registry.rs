//! Every configured server behind one composed handle.

use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use super::AgentError;
use crate::config::{Config, TransportKind};
use crate::protocol::{compose, CallError, InProcessConnection, ServerHandle, ToolDescriptor, ToolResult, TransportSpec};
use crate::servers::{self, ServerDeps};

pub const ROOT: &str = "surveyforge";

pub struct Registry {
    root: ServerHandle,
    children: Vec<ServerHandle>,
}

impl Registry {
    /// Starts or connects to every server in the config.
    pub async fn from_config(config: &Config, deps: &ServerDeps) -> Result<Self, AgentError> {
        let timeout = Duration::from_secs(config.limits.call_timeout_secs);
        let mut handles = Vec::new();
        for s in &config.servers {
            let handle = match s.transport {
                TransportKind::Inprocess => {
                    let server = servers::build(&s.id, deps)
                        .ok_or_else(|| AgentError::Store(format!("`{}` is not a native server", s.id)))?
                        .map_err(|e| AgentError::Store(e.to_string()))?;
                    let handle = ServerHandle::new(
                        s.id.clone(),
                        TransportSpec::InProcess,
                        s.origin,
                        Arc::new(InProcessConnection::new(Arc::new(server))),
                        timeout,
                    );
                    handle.initialize().await.map_err(|e| call_err(&s.id, e))?;
                    handle
                }
                TransportKind::Stdio => {
                    let cmd = s.command.clone().unwrap_or_default();
                    ServerHandle::open(s.id.clone(), TransportSpec::Stdio(cmd), s.origin, timeout)
                        .await
                        .map_err(|e| call_err(&s.id, e))?
                }
                TransportKind::Http => {
                    let url = s.url.clone().unwrap_or_default();
                    ServerHandle::open(s.id.clone(), TransportSpec::Http(url), s.origin, timeout)
                        .await
                        .map_err(|e| call_err(&s.id, e))?
                }
            };
            handles.push(handle);
        }
        Self::from_handles(handles).await
    }

    /// Composes already-initialized handles.
    pub async fn from_handles(children: Vec<ServerHandle>) -> Result<Self, AgentError> {
        let root = compose(ROOT, children.clone()).await.map_err(|e| call_err(ROOT, e))?;
        Ok(Self { root, children })
    }

    pub fn root(&self) -> &ServerHandle {
        &self.root
    }

    pub fn children(&self) -> &[ServerHandle] {
        &self.children
    }

    pub fn tools(&self) -> Vec<ToolDescriptor> {
        self.root.tools()
    }

    pub fn descriptor(&self, name: &str) -> Option<ToolDescriptor> {
        self.root.descriptor(name)
    }

    /// Tools owned by any of `servers`, in registration order.
    pub fn tools_of(&self, servers: &[String]) -> Vec<ToolDescriptor> {
        self.tools()
            .into_iter()
            .filter(|t| t.name.split_once('.').is_some_and(|(s, _)| servers.iter().any(|x| x == s)))
            .collect()
    }

    pub async fn call(&self, name: &str, args: Value) -> Result<ToolResult, CallError> {
        self.root.call_tool(name, args).await
    }
}

fn call_err(tool: &str, source: CallError) -> AgentError {
    AgentError::Call { tool: tool.to_string(), source }
}
