use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Completion, FinishReason, LanguageModel, ModelError, PromptRequest, Usage};

const ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveModelConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub backoff_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for LiveModelConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "default".into(),
            api_key: None,
            backoff_ms: 500,
            request_timeout_secs: 120,
        }
    }
}

impl LiveModelConfig {
    /// Reads `SF_MODEL_BASE_URL`, `SF_MODEL_NAME` and `SF_MODEL_API_KEY`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("SF_MODEL_BASE_URL") {
            cfg.base_url = v;
        }
        if let Ok(v) = std::env::var("SF_MODEL_NAME") {
            cfg.model_name = v;
        }
        cfg.api_key = std::env::var("SF_MODEL_API_KEY").ok();
        cfg
    }
}

/// OpenAI-compatible chat-completions client.
pub struct LiveModel {
    config: LiveModelConfig,
    http: reqwest::Client,
}

impl LiveModel {
    pub fn new(config: LiveModelConfig) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .expect("http client builds");
        Self { config, http }
    }

    async fn attempt(&self, body: &Value) -> Result<Completion, String> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut request = self.http.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let resp = request.send().await.map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        let reply: Value = resp.json().await.map_err(|e| e.to_string())?;
        let choice = reply.get("choices").and_then(|c| c.get(0)).ok_or("reply has no choices")?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        };
        if finish_reason == FinishReason::Stop && text.is_empty() {
            return Err("empty completion".into());
        }
        let usage = Usage {
            prompt_tokens: reply.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: reply.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        };
        Ok(Completion { text, finish_reason, usage })
    }
}

#[async_trait]
impl LanguageModel for LiveModel {
    async fn complete(&self, req: &PromptRequest) -> Result<Completion, ModelError> {
        let prompt = req.render()?;
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let mut last = String::new();
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                let wait = self.config.backoff_ms * (1 << (attempt - 1));
                tokio::time::sleep(Duration::from_millis(wait)).await;
            }
            match self.attempt(&body).await {
                Ok(c) => return Ok(c),
                Err(e) => {
                    tracing::warn!(attempt, "chat completion failed: {e}");
                    last = e;
                }
            }
        }
        Err(ModelError::BackendUnavailable(format!("{ATTEMPTS} attempts failed; last error: {last}")))
    }
}
