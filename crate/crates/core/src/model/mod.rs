//! Language-model and similarity backends.
//!
//! Two [`LanguageModel`] implementations exist: [`LiveModel`] speaks an
//! OpenAI-compatible chat-completions API, [`ScriptedModel`] answers from a
//! fixture table and per-template deterministic fallbacks so the whole
//! pipeline runs offline.

mod fault;
pub mod heuristics;
mod live;
pub mod prompts;
mod scripted;
mod similarity;

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use fault::FaultyModel;
pub use live::{LiveModel, LiveModelConfig};
pub use scripted::{fixture_key, ScriptedModel};
pub use similarity::{similarity, Similarity, TokenJaccard};

use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` has unbound placeholder {{{name}}}")]
    UnboundPlaceholder { template: String, name: String },
    #[error("model backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("scripted backend has no entry for {key} and `{template}` declares no fallback")]
    ScriptMiss { template: String, key: String },
}

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: String,
    pub variables: BTreeMap<String, String>,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl PromptRequest {
    pub fn new(template_id: &str) -> Self {
        Self {
            template_id: template_id.to_string(),
            variables: BTreeMap::new(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }

    /// Binds a variable to the compact JSON encoding of `value`.
    pub fn json_var(self, name: &str, value: &impl Serialize) -> Self {
        let encoded = serde_json::to_string(value).expect("prompt variable serializes");
        self.var(name, encoded)
    }

    pub fn with_limits(mut self, max_output_tokens: u32, temperature: f64) -> Self {
        self.max_output_tokens = max_output_tokens;
        self.temperature = temperature.max(0.0);
        self
    }

    /// Renders the template, checking every placeholder is bound.
    pub fn render(&self) -> Result<String, ModelError> {
        let t = prompts::template(&self.template_id)
            .ok_or_else(|| ModelError::UnknownTemplate(self.template_id.clone()))?;
        prompts::render(t.body, &self.variables)
            .map_err(|name| ModelError::UnboundPlaceholder { template: self.template_id.clone(), name })
    }

    /// Stable digest of the variable bindings.
    pub fn variables_hash(&self) -> String {
        let value = serde_json::to_value(&self.variables).expect("string map serializes");
        text::hash_json(&value)[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

#[async_trait]
pub trait LanguageModel: Send + Sync {
    async fn complete(&self, req: &PromptRequest) -> Result<Completion, ModelError>;
}

/// First balanced JSON object or array embedded in `text`, ignoring any
/// surrounding prose.
pub fn extract_json(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while start < bytes.len() {
        let Some(offset) = text[start..].find(['{', '[']) else {
            return None;
        };
        let open = start + offset;
        let mut depth = 0i32;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' | b'[' => depth += 1,
                b'}' | b']' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(v) = serde_json::from_str(&text[open..=i]) {
                            return Some(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn extract_json_skips_prose() {
        let text = "Sure! Here is the plan:\n{\"steps\": [], \"stop\": true}\nHope that helps {not json}";
        assert_eq!(extract_json(text), Some(json!({"steps": [], "stop": true})));
        assert_eq!(extract_json("list: [\"a\", \"b}\"] done"), Some(json!(["a", "b}"])));
        assert_eq!(extract_json("{broken then {\"a\":1}"), Some(json!({"a": 1})));
        assert_eq!(extract_json("nothing here"), None);
    }

    #[test]
    fn unbound_placeholder_fails_before_backend() {
        let req = PromptRequest::new(prompts::ids::CONSENSUS_QUESTION).var("topic", "x");
        assert!(matches!(req.render(), Err(ModelError::UnboundPlaceholder { .. })));
    }

    #[test]
    fn variables_hash_is_order_independent() {
        let a = PromptRequest::new("t").var("a", "1").var("b", "2");
        let b = PromptRequest::new("t").var("b", "2").var("a", "1");
        assert_eq!(a.variables_hash(), b.variables_hash());
    }
}
