use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;

use super::{heuristics, Completion, FinishReason, LanguageModel, ModelError, PromptRequest, Usage};
use crate::text;

/// Fixture key: `templateId:variablesHash`.
pub fn fixture_key(req: &PromptRequest) -> String {
    format!("{}:{}", req.template_id, req.variables_hash())
}

/// Deterministic offline backend. Looks up recorded completions first and
/// otherwise answers with the template's declared fallback.
#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    fixtures: HashMap<String, String>,
    no_fallback: bool,
}

impl ScriptedModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a JSON map of `templateId:variablesHash` to completion text.
    pub fn from_fixture_file(path: &Path) -> Result<Self, ModelError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ModelError::BackendUnavailable(format!("reading {}: {e}", path.display())))?;
        let fixtures: HashMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| ModelError::BackendUnavailable(format!("parsing {}: {e}", path.display())))?;
        Ok(Self { fixtures, no_fallback: false })
    }

    pub fn with_fixture(mut self, req: &PromptRequest, text: impl Into<String>) -> Self {
        self.fixtures.insert(fixture_key(req), text.into());
        self
    }

    /// Disables fallbacks: every miss becomes a [`ModelError::ScriptMiss`].
    pub fn strict(mut self) -> Self {
        self.no_fallback = true;
        self
    }

    pub fn fixture_count(&self) -> usize {
        self.fixtures.len()
    }
}

#[async_trait]
impl LanguageModel for ScriptedModel {
    async fn complete(&self, req: &PromptRequest) -> Result<Completion, ModelError> {
        let prompt = req.render()?;
        let key = fixture_key(req);
        let text = match self.fixtures.get(&key) {
            Some(t) => t.clone(),
            None if self.no_fallback => {
                return Err(ModelError::ScriptMiss { template: req.template_id.clone(), key })
            }
            None => heuristics::respond(req).ok_or_else(|| ModelError::ScriptMiss {
                template: req.template_id.clone(),
                key: key.clone(),
            })?,
        };
        Ok(Completion {
            usage: Usage {
                prompt_tokens: text::word_count(&prompt) as u64,
                completion_tokens: text::word_count(&text) as u64,
            },
            text,
            finish_reason: FinishReason::Stop,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::prompts::ids;

    fn summarize_req() -> PromptRequest {
        PromptRequest::new(ids::DIGEST_SUMMARIZE).var("title", "Doc A1F3").var("body", "Body text. More text.")
    }

    #[tokio::test]
    async fn fixture_replay_is_byte_stable() {
        let m = ScriptedModel::new().with_fixture(&summarize_req(), "Recorded summary of A1F3.");
        let a = m.complete(&summarize_req()).await.unwrap();
        let b = m.complete(&summarize_req()).await.unwrap();
        assert_eq!(a.text, "Recorded summary of A1F3.");
        assert_eq!(a, b);
    }

    #[tokio::test]
    async fn strict_mode_fails_loudly() {
        let m = ScriptedModel::new().strict();
        assert!(matches!(m.complete(&summarize_req()).await, Err(ModelError::ScriptMiss { .. })));
    }

    #[tokio::test]
    async fn fallback_answers_when_no_fixture() {
        let m = ScriptedModel::new();
        let c = m.complete(&summarize_req()).await.unwrap();
        assert_eq!(c.text, "Body text. More text.");
    }

    #[tokio::test]
    async fn fixture_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.json");
        let key = fixture_key(&summarize_req());
        std::fs::write(&path, serde_json::json!({ key: "from file" }).to_string()).unwrap();
        let m = ScriptedModel::from_fixture_file(&path).unwrap();
        assert_eq!(m.complete(&summarize_req()).await.unwrap().text, "from file");
    }
}
