//! JSON-RPC 2.0 message codec.
//!
//! An [`RpcEnvelope`] keeps the decoded object with its original key order,
//! so unknown members survive a decode/encode cycle and fixture frames
//! re-encode byte-for-byte.

use serde_json::{json, Map, Value};
use thiserror::Error;

pub const JSONRPC_VERSION: &str = "2.0";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const TOOL_FAILURE: i64 = -32000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

impl CodecError {
    pub fn rpc_code(&self) -> i64 {
        match self {
            CodecError::MalformedFrame(_) => PARSE_ERROR,
            CodecError::ProtocolViolation(_) => INVALID_REQUEST,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    Request,
    Notification,
    Response,
    ErrorResponse,
}

/// Error member of a failed response.
#[derive(Debug, Clone, PartialEq)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    pub data: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcEnvelope {
    fields: Map<String, Value>,
    kind: EnvelopeKind,
}

impl RpcEnvelope {
    pub fn request(id: impl Into<Value>, method: &str, params: Value) -> Self {
        let mut fields = Map::new();
        fields.insert("jsonrpc".into(), JSONRPC_VERSION.into());
        fields.insert("id".into(), id.into());
        fields.insert("method".into(), method.into());
        if !params.is_null() {
            fields.insert("params".into(), params);
        }
        Self { fields, kind: EnvelopeKind::Request }
    }

    pub fn notification(method: &str, params: Value) -> Self {
        let mut fields = Map::new();
        fields.insert("jsonrpc".into(), JSONRPC_VERSION.into());
        fields.insert("method".into(), method.into());
        if !params.is_null() {
            fields.insert("params".into(), params);
        }
        Self { fields, kind: EnvelopeKind::Notification }
    }

    pub fn response(id: Value, result: Value) -> Self {
        let mut fields = Map::new();
        fields.insert("jsonrpc".into(), JSONRPC_VERSION.into());
        fields.insert("id".into(), id);
        fields.insert("result".into(), result);
        Self { fields, kind: EnvelopeKind::Response }
    }

    pub fn error_response(id: Value, code: i64, message: impl Into<String>) -> Self {
        let mut fields = Map::new();
        fields.insert("jsonrpc".into(), JSONRPC_VERSION.into());
        fields.insert("id".into(), id);
        fields.insert("error".into(), json!({"code": code, "message": message.into()}));
        Self { fields, kind: EnvelopeKind::ErrorResponse }
    }

    pub fn kind(&self) -> EnvelopeKind {
        self.kind
    }

    /// Correlation token; `None` for notifications.
    pub fn id(&self) -> Option<&Value> {
        match self.fields.get("id") {
            Some(Value::Null) | None => None,
            Some(id) => Some(id),
        }
    }

    pub fn method(&self) -> Option<&str> {
        self.fields.get("method").and_then(Value::as_str)
    }

    pub fn params(&self) -> &Value {
        self.fields.get("params").unwrap_or(&Value::Null)
    }

    pub fn result(&self) -> Option<&Value> {
        self.fields.get("result")
    }

    pub fn error(&self) -> Option<RpcError> {
        let err = self.fields.get("error")?;
        Some(RpcError {
            code: err.get("code").and_then(Value::as_i64).unwrap_or(TOOL_FAILURE),
            message: err.get("message").and_then(Value::as_str).unwrap_or_default().to_string(),
            data: err.get("data").cloned(),
        })
    }

    /// Members beyond the ones JSON-RPC defines.
    pub fn extra(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.fields
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "jsonrpc" | "id" | "method" | "params" | "result" | "error"))
    }

    pub fn to_value(&self) -> Value {
        Value::Object(self.fields.clone())
    }
}

/// Decodes one complete frame (no trailing newline required).
pub fn decode_message(bytes: &[u8]) -> Result<RpcEnvelope, CodecError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| CodecError::MalformedFrame(e.to_string()))?;
    decode_value(value)
}

pub fn decode_value(value: Value) -> Result<RpcEnvelope, CodecError> {
    let Value::Object(fields) = value else {
        return Err(CodecError::ProtocolViolation("frame is not a JSON object".into()));
    };
    if fields.get("jsonrpc").and_then(Value::as_str) != Some(JSONRPC_VERSION) {
        return Err(CodecError::ProtocolViolation("missing or wrong `jsonrpc` version".into()));
    }
    let has_result = fields.contains_key("result");
    let has_error = fields.contains_key("error");
    let has_id = matches!(fields.get("id"), Some(v) if !v.is_null());
    let kind = match (fields.get("method"), has_result, has_error) {
        (Some(Value::String(_)), false, false) if has_id => EnvelopeKind::Request,
        (Some(Value::String(_)), false, false) => EnvelopeKind::Notification,
        (Some(_), false, false) => {
            return Err(CodecError::ProtocolViolation("`method` must be a string".into()))
        }
        (None, true, false) => EnvelopeKind::Response,
        (None, false, true) => {
            let err = &fields["error"];
            if err.get("code").and_then(Value::as_i64).is_none() {
                return Err(CodecError::ProtocolViolation("error object lacks integer `code`".into()));
            }
            EnvelopeKind::ErrorResponse
        }
        (None, true, true) => {
            return Err(CodecError::ProtocolViolation("both `result` and `error` present".into()))
        }
        (None, false, false) => {
            return Err(CodecError::ProtocolViolation("request is missing `method`".into()))
        }
        (Some(_), _, _) => {
            return Err(CodecError::ProtocolViolation("`method` alongside a response member".into()))
        }
    };
    if matches!(kind, EnvelopeKind::Response | EnvelopeKind::ErrorResponse) && !fields.contains_key("id") {
        return Err(CodecError::ProtocolViolation("response without `id`".into()));
    }
    Ok(RpcEnvelope { fields, kind })
}

/// Compact single-line encoding, without the frame terminator.
pub fn encode_message(envelope: &RpcEnvelope) -> Vec<u8> {
    serde_json::to_vec(&envelope.fields).expect("JSON map always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_request() {
        let env = decode_message(br#"{"jsonrpc":"2.0","id":1,"method":"tools/list"}"#).unwrap();
        assert_eq!(env.kind(), EnvelopeKind::Request);
        assert_eq!(env.id(), Some(&json!(1)));
        assert_eq!(env.method(), Some("tools/list"));
        assert!(env.params().is_null());
    }

    #[test]
    fn empty_tool_list_response() {
        let env = decode_message(br#"{"jsonrpc":"2.0","id":1,"result":{"tools":[]}}"#).unwrap();
        assert_eq!(env.kind(), EnvelopeKind::Response);
        assert_eq!(env.result(), Some(&json!({"tools": []})));
    }

    #[test]
    fn unknown_members_survive_reencoding() {
        let raw = br#"{"id":"a","x-trace":{"span":3},"jsonrpc":"2.0","method":"ping"}"#;
        let env = decode_message(raw).unwrap();
        assert_eq!(env.extra().count(), 1);
        assert_eq!(encode_message(&env), raw.to_vec());
    }

    #[test]
    fn malformed_and_violating_frames() {
        assert!(matches!(decode_message(b"{not json"), Err(CodecError::MalformedFrame(_))));
        assert!(matches!(
            decode_message(br#"{"jsonrpc":"2.0","id":4}"#),
            Err(CodecError::ProtocolViolation(_))
        ));
        assert!(matches!(
            decode_message(br#"{"jsonrpc":"2.0","id":4,"result":1,"error":{"code":1}}"#),
            Err(CodecError::ProtocolViolation(_))
        ));
        assert!(matches!(decode_message(br#"[1,2]"#), Err(CodecError::ProtocolViolation(_))));
    }

    #[test]
    fn notification_has_no_id() {
        let env = decode_message(br#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#).unwrap();
        assert_eq!(env.kind(), EnvelopeKind::Notification);
        assert!(env.id().is_none());
    }

    #[test]
    fn error_response_accessors() {
        let env = RpcEnvelope::error_response(json!(9), METHOD_NOT_FOUND, "nope");
        let back = decode_message(&encode_message(&env)).unwrap();
        let err = back.error().unwrap();
        assert_eq!(err.code, -32601);
        assert_eq!(err.message, "nope");
    }
}
