//! Newline-delimited JSON-RPC over byte streams (process stdio in production).

use std::collections::HashMap;
use std::process::Stdio;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::process::{Child, Command};
use tokio::sync::{mpsc, oneshot};

use super::client::{Connection, TransportError};
use super::codec::{decode_message, encode_message, EnvelopeKind, RpcEnvelope};
use super::server::McpServer;

/// Serves `server` over a line-framed stream pair until the reader hits EOF.
///
/// Each request runs on its own task, so slow tools never block other calls;
/// replies are written in completion order.
pub async fn serve_stdio<R, W>(server: Arc<McpServer>, reader: R, writer: W) -> std::io::Result<()>
where
    R: AsyncRead + Unpin + Send + 'static,
    W: AsyncWrite + Unpin + Send + 'static,
{
    let (tx, mut rx) = mpsc::unbounded_channel::<Vec<u8>>();
    let writer_task = tokio::spawn(async move {
        let mut writer = writer;
        while let Some(mut frame) = rx.recv().await {
            frame.push(b'\n');
            writer.write_all(&frame).await?;
            writer.flush().await?;
        }
        Ok::<_, std::io::Error>(())
    });

    let mut lines = BufReader::new(reader).lines();
    let mut inflight = Vec::new();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let server = server.clone();
        let tx = tx.clone();
        inflight.push(tokio::spawn(async move {
            if let Some(reply) = server.handle_frame(line.as_bytes()).await {
                let _ = tx.send(reply);
            }
        }));
    }
    for task in inflight {
        let _ = task.await;
    }
    drop(tx);
    writer_task.await.map_err(std::io::Error::other)?
}

type Pending = Arc<Mutex<HashMap<u64, oneshot::Sender<RpcEnvelope>>>>;

/// Client side of the stdio transport.
pub struct StdioConnection {
    writer: tokio::sync::Mutex<Box<dyn AsyncWrite + Unpin + Send>>,
    pending: Pending,
    next_id: AtomicU64,
    _child: Option<Child>,
}

impl StdioConnection {
    /// Spawns `command` and speaks the protocol over its stdin/stdout.
    pub fn spawn(command: &[String]) -> Result<Self, TransportError> {
        let (program, rest) = command
            .split_first()
            .ok_or_else(|| TransportError::Down("empty stdio command".into()))?;
        let mut child = Command::new(program)
            .args(rest)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| TransportError::Down(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut conn = Self::from_streams(stdout, stdin);
        conn._child = Some(child);
        Ok(conn)
    }

    /// Wraps an already-connected stream pair (reader = server output).
    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: AsyncRead + Unpin + Send + 'static,
        W: AsyncWrite + Unpin + Send + 'static,
    {
        let pending: Pending = Arc::new(Mutex::new(HashMap::new()));
        let routes = pending.clone();
        tokio::spawn(async move {
            let mut lines = BufReader::new(reader).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                let Ok(env) = decode_message(line.as_bytes()) else {
                    tracing::warn!("dropping undecodable frame from server");
                    continue;
                };
                if !matches!(env.kind(), EnvelopeKind::Response | EnvelopeKind::ErrorResponse) {
                    continue;
                }
                if let Some(id) = env.id().and_then(Value::as_u64) {
                    if let Some(tx) = routes.lock().remove(&id) {
                        let _ = tx.send(env);
                    }
                }
            }
            // Dropping the senders wakes every waiter with TransportDown.
            routes.lock().clear();
        });
        Self {
            writer: tokio::sync::Mutex::new(Box::new(writer)),
            pending,
            next_id: AtomicU64::new(1),
            _child: None,
        }
    }

    async fn write(&self, env: &RpcEnvelope) -> Result<(), TransportError> {
        let mut frame = encode_message(env);
        frame.push(b'\n');
        let mut w = self.writer.lock().await;
        w.write_all(&frame).await.map_err(|e| TransportError::Down(e.to_string()))?;
        w.flush().await.map_err(|e| TransportError::Down(e.to_string()))
    }
}

#[async_trait]
impl Connection for StdioConnection {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        self.pending.lock().insert(id, tx);
        if let Err(e) = self.write(&RpcEnvelope::request(id, method, params)).await {
            self.pending.lock().remove(&id);
            return Err(e);
        }
        let reply = rx.await.map_err(|_| TransportError::Down("server closed the stream".into()))?;
        super::client::unwrap_reply(reply)
    }

    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError> {
        self.write(&RpcEnvelope::notification(method, params)).await
    }
}
