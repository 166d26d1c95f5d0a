//! HTTP transport: one POST per message to `/mcp`, plus a server-sent-event
//! stream on `GET /mcp` for server-initiated messages.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use futures::Stream;
use serde_json::Value;
use tokio::sync::broadcast;

use super::client::{unwrap_reply, Connection, TransportError};
use super::codec::{decode_message, encode_message, RpcEnvelope};
use super::server::{McpServer, ServeError};

#[derive(Clone)]
struct HttpState {
    server: Arc<McpServer>,
    outbound: broadcast::Sender<String>,
}

pub fn router(server: Arc<McpServer>) -> Router {
    let (outbound, _) = broadcast::channel(64);
    Router::new()
        .route("/mcp", post(post_message).get(event_stream))
        .with_state(HttpState { server, outbound })
}

async fn post_message(State(state): State<HttpState>, body: Bytes) -> Response {
    match state.server.handle_frame(&body).await {
        Some(reply) => ([(header::CONTENT_TYPE, "application/json")], reply).into_response(),
        None => StatusCode::ACCEPTED.into_response(),
    }
}

async fn event_stream(State(state): State<HttpState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.outbound.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(msg) => return Some((Ok(Event::default().data(msg)), rx)),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

/// A bound HTTP tool server running in the background.
pub struct HttpServerHandle {
    pub local_addr: SocketAddr,
    task: tokio::task::JoinHandle<()>,
}

impl HttpServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}/mcp", self.local_addr)
    }

    pub fn shutdown(self) {
        self.task.abort();
    }
}

pub async fn serve_http(server: Arc<McpServer>, addr: SocketAddr) -> Result<HttpServerHandle, ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::BindFailure { addr: addr.to_string(), source })?;
    let local_addr = listener.local_addr()?;
    let app = router(server);
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("http tool server stopped: {e}");
        }
    });
    Ok(HttpServerHandle { local_addr, task })
}

pub struct HttpConnection {
    client: reqwest::Client,
    url: String,
    next_id: AtomicU64,
}

impl HttpConnection {
    pub fn new(url: impl Into<String>) -> Self {
        Self { client: reqwest::Client::new(), url: url.into(), next_id: AtomicU64::new(1) }
    }

    async fn post(&self, env: &RpcEnvelope) -> Result<Option<Vec<u8>>, TransportError> {
        let resp = self
            .client
            .post(&self.url)
            .header(header::CONTENT_TYPE.as_str(), "application/json")
            .body(encode_message(env))
            .send()
            .await
            .map_err(|e| TransportError::Down(e.to_string()))?;
        if resp.status() == reqwest::StatusCode::ACCEPTED {
            return Ok(None);
        }
        if !resp.status().is_success() {
            return Err(TransportError::Down(format!("http status {}", resp.status())));
        }
        let body = resp.bytes().await.map_err(|e| TransportError::Down(e.to_string()))?;
        Ok(Some(body.to_vec()))
    }
}

#[async_trait]
impl Connection for HttpConnection {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = self
            .post(&RpcEnvelope::request(id, method, params))
            .await?
            .ok_or_else(|| TransportError::Down("server sent no reply to a request".into()))?;
        let reply = decode_message(&body).map_err(TransportError::Codec)?;
        unwrap_reply(reply)
    }

    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError> {
        self.post(&RpcEnvelope::notification(method, params)).await.map(|_| ())
    }
}
