use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::similarity;
use crate::state::{DocSource, ReferenceDocument, SearchResult};
use crate::text;

const EMBEDDED_INDEX: &str = include_str!("../../fixtures/index.json");
pub const SNIPPET_CHARS: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrieverError {
    #[error("retriever unavailable: {0}")]
    Unavailable(String),
    #[error("fetch failed for {url}: {reason}")]
    FetchFailed { url: String, reason: String },
}

#[async_trait]
pub trait Retriever: Send + Sync {
    async fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, RetrieverError>;
    async fn fetch(&self, url: &str) -> Result<ReferenceDocument, RetrieverError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub url: String,
    pub title: String,
    pub body: String,
}

impl IndexEntry {
    pub fn snippet(&self) -> String {
        let s = text::first_sentences(&self.body, 2);
        match s.char_indices().nth(SNIPPET_CHARS) {
            Some((cut, _)) => s[..cut].to_string(),
            None => s,
        }
    }

    pub fn document(&self) -> ReferenceDocument {
        ReferenceDocument::new(
            text::squash_whitespace(&self.title),
            text::squash_whitespace(&self.body),
            DocSource::Url { url: self.url.clone() },
        )
    }
}

/// Offline retriever over a fixed document list. Ranking is a pure function
/// of the index, the query and the limit.
#[derive(Debug, Clone, Default)]
pub struct FixtureIndex {
    entries: Vec<IndexEntry>,
}

impl FixtureIndex {
    pub fn new(entries: Vec<IndexEntry>) -> Self {
        Self { entries }
    }

    /// The 12-document corpus shipped with the crate.
    pub fn embedded() -> Self {
        Self::new(serde_json::from_str(EMBEDDED_INDEX).expect("embedded index parses"))
    }

    pub fn from_file(path: &Path) -> Result<Self, RetrieverError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| RetrieverError::Unavailable(format!("{}: {e}", path.display())))?;
        let entries =
            serde_json::from_str(&raw).map_err(|e| RetrieverError::Unavailable(format!("{}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    /// `SF_FIXTURE_INDEX` if set, the embedded corpus otherwise.
    pub fn from_env() -> Result<Self, RetrieverError> {
        match std::env::var("SF_FIXTURE_INDEX") {
            Ok(path) if !path.is_empty() => Self::from_file(Path::new(&path)),
            _ => Ok(Self::embedded()),
        }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Scored results, best first; zero scores are dropped.
    pub fn rank(&self, query: &str) -> Vec<(f64, SearchResult, String)> {
        let mut scored: Vec<(f64, SearchResult, String)> = self
            .entries
            .iter()
            .map(|e| {
                let snippet = e.snippet();
                let score = similarity(query, &format!("{} {}", e.title, snippet));
                let result = SearchResult { url: e.url.clone(), title: e.title.clone(), snippet, fetched: false };
                (score, result, e.document().doc_id)
            })
            .filter(|(s, _, _)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.2.cmp(&b.2)));
        scored
    }
}

#[async_trait]
impl Retriever for FixtureIndex {
    async fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, RetrieverError> {
        Ok(self.rank(query).into_iter().take(limit).map(|(_, r, _)| r).collect())
    }

    async fn fetch(&self, url: &str) -> Result<ReferenceDocument, RetrieverError> {
        self.entries
            .iter()
            .find(|e| e.url == url)
            .map(IndexEntry::document)
            .ok_or_else(|| RetrieverError::FetchFailed { url: url.to_string(), reason: "not in fixture index".into() })
    }
}

/// Used when no index is configured; every call fails.
#[derive(Debug, Clone, Default)]
pub struct NoRetriever;

#[async_trait]
impl Retriever for NoRetriever {
    async fn search(&self, _query: &str, _limit: usize) -> Result<Vec<SearchResult>, RetrieverError> {
        Err(RetrieverError::Unavailable("no retriever configured".into()))
    }

    async fn fetch(&self, url: &str) -> Result<ReferenceDocument, RetrieverError> {
        Err(RetrieverError::FetchFailed { url: url.to_string(), reason: "no retriever configured".into() })
    }
}
