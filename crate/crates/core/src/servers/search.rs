//! Query generation, retrieval, crawling and similarity filtering.

use serde_json::{json, Value};

use super::{ask_json, bound, fail, finish, take, ServerDeps, VERSION};
use crate::model::prompts::ids;
use crate::model::{similarity, PromptRequest};
use crate::protocol::{opt_arg, McpServer, ServeError, ToolDescriptor, ToolResult};
use crate::state::{DialogueTurn, ReferenceDocument};
use crate::text;

pub const MIN_QUERIES: usize = 3;
pub const MAX_QUERIES: usize = 10;

pub fn server(deps: &ServerDeps) -> Result<McpServer, ServeError> {
    let d = deps.clone();
    let generate = move |args: Value| {
        let d = d.clone();
        async move { finish(generate_queries(&d, &args).await) }
    };
    let d = deps.clone();
    let retrieve = move |args: Value| {
        let d = d.clone();
        async move { finish(retrieve(&d, &args).await) }
    };
    let d = deps.clone();
    let crawl = move |args: Value| {
        let d = d.clone();
        async move { finish(crawl(&d, &args).await) }
    };
    let filter = |args: Value| async move { finish(similarity_filter(&args)) };

    McpServer::builder("search", VERSION)
        .tool(
            ToolDescriptor::new(
                "generate_queries",
                "Generate 3 to 10 distinct web search queries for the topic, covering every agreed perspective.",
                json!({
                    "type": "object",
                    "properties": {
                        "topic": bound("string", "topic", "Survey topic."),
                        "perspectives": {"type": "array", "items": {"type": "string"}, "x-state": "perspectives"},
                        "dialogue": {"type": "array", "items": {"type": "object"}, "x-state": "dialogue"}
                    },
                    "required": ["topic"]
                }),
            ),
            generate,
        )
        .tool(
            ToolDescriptor::new(
                "retrieve",
                "Run one query against the configured retriever and return at most `limit` ranked results.",
                json!({
                    "type": "object",
                    "properties": {
                        "query": {"type": "string", "minLength": 1},
                        "limit": {"type": "integer", "minimum": 0}
                    },
                    "required": ["query", "limit"]
                }),
            ),
            retrieve,
        )
        .tool(
            ToolDescriptor::new(
                "crawl",
                "Fetch a result URL and return the cleaned document with its content-derived id.",
                json!({
                    "type": "object",
                    "properties": {
                        "url": {"type": "string", "minLength": 1},
                        "query": {"type": "string"}
                    },
                    "required": ["url"]
                }),
            ),
            crawl,
        )
        .tool(
            ToolDescriptor::new(
                "similarity_filter",
                "Keep documents whose similarity to the topic is at least `threshold`, best first.",
                json!({
                    "type": "object",
                    "properties": {
                        "docs": {"type": "array", "items": {"type": "object"}},
                        "topic": bound("string", "topic", "Survey topic."),
                        "threshold": {"type": "number", "minimum": 0, "maximum": 1}
                    },
                    "required": ["docs", "topic", "threshold"]
                }),
            ),
            filter,
        )
        .build()
}

fn push_unique(out: &mut Vec<String>, q: &str) {
    let q = text::squash_whitespace(q);
    if !q.is_empty() && !out.iter().any(|x| text::normalize(x) == text::normalize(&q)) {
        out.push(q);
    }
}

/// Deduplicates the backend's queries and enforces the topic and
/// perspective coverage rules regardless of what the backend produced.
pub fn finalize_queries(topic: &str, perspectives: &[String], proposed: &[String]) -> Vec<String> {
    let topic = text::squash_whitespace(topic);
    let mut out: Vec<String> = Vec::new();
    for q in proposed {
        push_unique(&mut out, q);
    }
    if !out.iter().any(|q| q.contains(&topic)) {
        out.insert(0, topic.clone());
    }
    for p in perspectives {
        if !out.iter().any(|q| q.to_lowercase().contains(&p.to_lowercase())) {
            push_unique(&mut out, &format!("{topic} {p}"));
        }
    }
    for filler in ["survey", "methods", "applications", "evaluation"] {
        if out.len() >= MIN_QUERIES {
            break;
        }
        push_unique(&mut out, &format!("{topic} {filler}"));
    }
    if out.len() > MAX_QUERIES {
        // Keep the topic query and the perspective queries, drop the rest from the end.
        let must: Vec<bool> = out
            .iter()
            .enumerate()
            .map(|(i, q)| {
                (i == 0 && q.contains(&topic))
                    || perspectives.iter().any(|p| q.to_lowercase().contains(&p.to_lowercase()))
            })
            .collect();
        let mut keep = must.iter().filter(|m| **m).count();
        let mut trimmed = Vec::new();
        for (q, m) in out.iter().zip(&must) {
            if *m {
                trimmed.push(q.clone());
            } else if keep < MAX_QUERIES {
                keep += 1;
                trimmed.push(q.clone());
            }
        }
        trimmed.truncate(MAX_QUERIES);
        out = trimmed;
    }
    out
}

async fn generate_queries(d: &ServerDeps, args: &Value) -> Result<Value, ToolResult> {
    let topic: String = take(args, "topic")?;
    if topic.trim().is_empty() {
        return Err(fail("topic must not be empty"));
    }
    let perspectives: Vec<String> = opt_arg(args, "perspectives")?.unwrap_or_default();
    let dialogue: Vec<DialogueTurn> = opt_arg(args, "dialogue")?.unwrap_or_default();
    let req = PromptRequest::new(ids::SEARCH_QUERIES)
        .var("topic", topic.clone())
        .json_var("perspectives", &perspectives)
        .json_var("dialogue", &dialogue);
    let reply = ask_json(d.model.as_ref(), req).await.map_err(fail)?;
    let proposed: Vec<String> = match reply {
        Value::Array(items) => items.iter().filter_map(Value::as_str).map(str::to_string).collect(),
        Value::Object(map) => map
            .get("queries")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default(),
        _ => Vec::new(),
    };
    Ok(json!({"queries": finalize_queries(&topic, &perspectives, &proposed)}))
}

async fn retrieve(d: &ServerDeps, args: &Value) -> Result<Value, ToolResult> {
    let query: String = take(args, "query")?;
    let limit: usize = take(args, "limit")?;
    let results = d.retriever.search(&query, limit).await.map_err(|e| fail(e.to_string()))?;
    Ok(json!({"results": results}))
}

async fn crawl(d: &ServerDeps, args: &Value) -> Result<Value, ToolResult> {
    let url: String = take(args, "url")?;
    let query: Option<String> = opt_arg(args, "query")?;
    let mut doc = d.retriever.fetch(&url).await.map_err(|e| fail(e.to_string()))?;
    if doc.body.trim().is_empty() {
        return Err(fail(format!("fetch failed for {url}: empty body")));
    }
    doc.retrieved_query = query;
    Ok(json!({"document": doc}))
}

/// Scores every document against the topic and keeps those at or above the
/// threshold, best first with ties broken by doc id.
pub fn filter_documents(docs: &[ReferenceDocument], topic: &str, threshold: f64) -> Vec<(f64, ReferenceDocument)> {
    let mut scored: Vec<(f64, ReferenceDocument)> = docs
        .iter()
        .map(|d| (similarity(topic, &d.full_text()), d.clone()))
        .filter(|(s, _)| *s >= threshold)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
    scored
}

fn similarity_filter(args: &Value) -> Result<Value, ToolResult> {
    let docs: Vec<ReferenceDocument> = take(args, "docs")?;
    let topic: String = take(args, "topic")?;
    let threshold: f64 = take(args, "threshold")?;
    let kept = filter_documents(&docs, &topic, threshold);
    let scores: Vec<f64> = kept.iter().map(|(s, _)| *s).collect();
    let documents: Vec<ReferenceDocument> = kept.into_iter().map(|(_, d)| d).collect();
    Ok(json!({"documents": documents, "scores": scores}))
}
