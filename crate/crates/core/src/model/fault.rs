use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;

use super::{Completion, FinishReason, LanguageModel, ModelError, PromptRequest, Usage};

/// Wraps a backend and answers selected templates with queued outputs
/// before delegating. Used to inject malformed completions.
pub struct FaultyModel {
    inner: Arc<dyn LanguageModel>,
    queued: Mutex<HashMap<String, VecDeque<String>>>,
    rewrites: Mutex<HashMap<String, Arc<dyn Fn(String) -> String + Send + Sync>>>,
}

impl FaultyModel {
    pub fn new(inner: Arc<dyn LanguageModel>) -> Self {
        Self { inner, queued: Mutex::new(HashMap::new()), rewrites: Mutex::new(HashMap::new()) }
    }

    /// The next call for `template_id` returns `text` verbatim.
    pub fn enqueue(&self, template_id: &str, text: impl Into<String>) -> &Self {
        self.queued.lock().entry(template_id.to_string()).or_default().push_back(text.into());
        self
    }

    /// Every completion for `template_id` is passed through `f`.
    pub fn rewrite(&self, template_id: &str, f: impl Fn(String) -> String + Send + Sync + 'static) -> &Self {
        self.rewrites.lock().insert(template_id.to_string(), Arc::new(f));
        self
    }

    pub fn pending(&self, template_id: &str) -> usize {
        self.queued.lock().get(template_id).map_or(0, VecDeque::len)
    }
}

#[async_trait]
impl LanguageModel for FaultyModel {
    async fn complete(&self, req: &PromptRequest) -> Result<Completion, ModelError> {
        req.render()?;
        let queued = self.queued.lock().get_mut(&req.template_id).and_then(VecDeque::pop_front);
        let mut completion = match queued {
            Some(text) => Completion { text, finish_reason: FinishReason::Stop, usage: Usage::default() },
            None => self.inner.complete(req).await?,
        };
        let rewrite = self.rewrites.lock().get(&req.template_id).cloned();
        if let Some(f) = rewrite {
            completion.text = f(completion.text);
        }
        Ok(completion)
    }
}
