//! Model-context-protocol plumbing: codec, transports, hosting, client
//! sessions and composition of servers into higher-level servers.

pub mod client;
pub mod codec;
pub mod conformance;
pub mod http;
pub mod schema;
pub mod server;
pub mod stdio;
pub mod types;

pub use client::{as_server, compose, CallError, Connection, InProcessConnection, ServerHandle, TransportError, TransportSpec};
pub use codec::{decode_message, encode_message, CodecError, EnvelopeKind, RpcEnvelope, RpcError};
pub use http::{serve_http, HttpConnection, HttpServerHandle};
pub use server::{arg, opt_arg, McpServer, McpServerBuilder, ServeError, ToolHandler, DEFAULT_CALL_TIMEOUT, PROTOCOL_VERSION};
pub use stdio::{serve_stdio, StdioConnection};
pub use types::{ContentPart, Origin, ServerInfo, ToolDescriptor, ToolResult};
