//! Frame-level recording and replay, used to pin the wire format.
//!
//! A recorded transcript is one `{"server", "frame"}` object per line where
//! `frame` is the exact bytes exchanged. Replaying sends every client frame
//! again over some transport and checks the replies byte for byte.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader, Lines};

use super::client::{unwrap_reply, Connection, TransportError};
use super::codec::{decode_message, encode_message, EnvelopeKind, RpcEnvelope};
use super::server::McpServer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub server: String,
    pub frame: String,
}

pub type FrameLog = Arc<Mutex<Vec<Frame>>>;

/// In-process connection that encodes every message and logs both
/// directions before and after dispatch.
pub struct RecordingConnection {
    server_id: String,
    server: Arc<McpServer>,
    log: FrameLog,
    next_id: AtomicU64,
}

impl RecordingConnection {
    pub fn new(server_id: impl Into<String>, server: Arc<McpServer>, log: FrameLog) -> Self {
        Self { server_id: server_id.into(), server, log, next_id: AtomicU64::new(1) }
    }

    async fn send(&self, env: RpcEnvelope) -> Option<Vec<u8>> {
        let bytes = encode_message(&env);
        self.push(&bytes);
        let reply = self.server.handle_frame(&bytes).await;
        if let Some(r) = &reply {
            self.push(r);
        }
        reply
    }

    fn push(&self, bytes: &[u8]) {
        let frame = String::from_utf8(bytes.to_vec()).expect("frames are UTF-8 JSON");
        self.log.lock().push(Frame { server: self.server_id.clone(), frame });
    }
}

#[async_trait]
impl Connection for RecordingConnection {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let reply = self
            .send(RpcEnvelope::request(id, method, params))
            .await
            .ok_or_else(|| TransportError::Down("server produced no reply".into()))?;
        unwrap_reply(decode_message(&reply).map_err(TransportError::Codec)?)
    }

    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError> {
        self.send(RpcEnvelope::notification(method, params)).await;
        Ok(())
    }
}

pub fn read_frames(path: &Path) -> std::io::Result<Vec<Frame>> {
    let raw = std::fs::read_to_string(path)?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

pub fn write_frames(path: &Path, frames: &[Frame]) -> std::io::Result<()> {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Sends raw frames and returns raw replies.
pub enum RawClient {
    InProcess(Arc<McpServer>),
    Http { client: reqwest::Client, url: String },
    Stdio(tokio::sync::Mutex<StdioPipe>),
}

pub struct StdioPipe {
    writer: Box<dyn AsyncWrite + Unpin + Send>,
    lines: Lines<BufReader<Box<dyn AsyncRead + Unpin + Send>>>,
}

impl RawClient {
    pub fn http(url: impl Into<String>) -> Self {
        RawClient::Http { client: reqwest::Client::new(), url: url.into() }
    }

    /// `reader` carries the server's output.
    pub fn stdio<R, W>(reader: R, writer: W) -> Self
    where
        R: AsyncRead + Unpin + Send + 'static,
        W: AsyncWrite + Unpin + Send + 'static,
    {
        let reader: Box<dyn AsyncRead + Unpin + Send> = Box::new(reader);
        RawClient::Stdio(tokio::sync::Mutex::new(StdioPipe { writer: Box::new(writer), lines: BufReader::new(reader).lines() }))
    }

    /// One round trip. Requests wait for exactly one reply line; other
    /// frames expect none.
    pub async fn exchange(&self, frame: &[u8]) -> Result<Option<Vec<u8>>, TransportError> {
        let expects_reply = decode_message(frame).map(|e| e.kind() == EnvelopeKind::Request).unwrap_or(true);
        match self {
            RawClient::InProcess(server) => Ok(server.handle_frame(frame).await),
            RawClient::Http { client, url } => {
                let resp = client
                    .post(url)
                    .header("content-type", "application/json")
                    .body(frame.to_vec())
                    .send()
                    .await
                    .map_err(|e| TransportError::Down(e.to_string()))?;
                if resp.status() == reqwest::StatusCode::ACCEPTED {
                    return Ok(None);
                }
                let body = resp.bytes().await.map_err(|e| TransportError::Down(e.to_string()))?;
                Ok(Some(body.to_vec()))
            }
            RawClient::Stdio(pipe) => {
                let mut pipe = pipe.lock().await;
                let mut line = frame.to_vec();
                line.push(b'\n');
                pipe.writer.write_all(&line).await.map_err(|e| TransportError::Down(e.to_string()))?;
                pipe.writer.flush().await.map_err(|e| TransportError::Down(e.to_string()))?;
                if !expects_reply {
                    return Ok(None);
                }
                match pipe.lines.next_line().await {
                    Ok(Some(l)) => Ok(Some(l.into_bytes())),
                    Ok(None) => Err(TransportError::Down("stream closed".into())),
                    Err(e) => Err(TransportError::Down(e.to_string())),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub sent: usize,
    pub compared: usize,
}

/// Replays every client frame of `frames` through `clients` (keyed by server
/// id) and compares replies with the recorded ones, matched by request id.
pub async fn replay_frames(frames: &[Frame], clients: &HashMap<String, RawClient>) -> Result<ReplaySummary, String> {
    let mut recorded: BTreeMap<(String, String), &str> = BTreeMap::new();
    for f in frames {
        let env = decode_message(f.frame.as_bytes()).map_err(|e| format!("undecodable golden frame: {e}"))?;
        if matches!(env.kind(), EnvelopeKind::Response | EnvelopeKind::ErrorResponse) {
            let id = env.id().map(Value::to_string).unwrap_or_default();
            recorded.insert((f.server.clone(), id), &f.frame);
        }
    }
    let mut summary = ReplaySummary::default();
    for f in frames {
        let env = decode_message(f.frame.as_bytes()).map_err(|e| e.to_string())?;
        if matches!(env.kind(), EnvelopeKind::Response | EnvelopeKind::ErrorResponse) {
            continue;
        }
        let client = clients.get(&f.server).ok_or_else(|| format!("no client for server `{}`", f.server))?;
        let reply = client.exchange(f.frame.as_bytes()).await.map_err(|e| format!("{}: {e}", f.server))?;
        summary.sent += 1;
        if env.kind() != EnvelopeKind::Request {
            continue;
        }
        let id = env.id().map(Value::to_string).unwrap_or_default();
        let want = recorded.get(&(f.server.clone(), id.clone())).ok_or_else(|| format!("no recorded reply for {} id {id}", f.server))?;
        let got = reply.ok_or_else(|| format!("{} id {id}: no reply", f.server))?;
        if got != want.as_bytes() {
            return Err(format!(
                "{} id {id}: reply differs\n  recorded: {}\n  replayed: {}",
                f.server,
                abbreviate(want),
                abbreviate(&String::from_utf8_lossy(&got))
            ));
        }
        summary.compared += 1;
    }
    Ok(summary)
}

fn abbreviate(s: &str) -> String {
    match s.char_indices().nth(300) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}
