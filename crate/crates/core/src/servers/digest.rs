//! Per-document digests and their consolidation into a revision plan.

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ask_json, ask_text, bound, fail, finish, take, ServerDeps, VERSION};
use crate::model::prompts::ids;
use crate::model::{similarity, PromptRequest};
use crate::protocol::{McpServer, ServeError, ToolDescriptor, ToolResult};
use crate::state::{
    plan_coverage, Digest, Directive, ReferenceDocument, ReferenceTree, RevisionPlan, Skeleton, Suggestion,
    SuggestionKind, SUMMARY_WORD_CAP,
};
use crate::text;

/// Suggestions this similar (after normalization) are the same feedback.
pub const DUPLICATE_THRESHOLD: f64 = 0.9;

pub fn server(deps: &ServerDeps) -> Result<McpServer, ServeError> {
    let d = deps.clone();
    let make = move |args: Value| {
        let d = d.clone();
        async move { finish(make(&d, &args).await) }
    };
    let consolidate = |args: Value| async move { finish(consolidate_args(&args)) };
    McpServer::builder("digest", VERSION)
        .tool(
            ToolDescriptor::new(
                "make",
                "For each reference document, write a summary of at most 150 words and suggestions on how the \
                 document aligns or conflicts with the current skeleton.",
                json!({
                    "type": "object",
                    "properties": {
                        "documents": {"type": "array", "items": {"type": "object"}, "minItems": 1, "x-state": "corpus"},
                        "skeleton": bound("object", "skeleton", "Current skeleton.")
                    },
                    "required": ["documents", "skeleton"]
                }),
            ),
            make,
        )
        .tool(
            ToolDescriptor::new(
                "consolidate",
                "Aggregate all digests, merge redundant suggestions and synthesize one revision plan with a \
                 coverage score.",
                json!({
                    "type": "object",
                    "properties": {
                        "digests": {"type": "array", "items": {"type": "object"}, "minItems": 1, "x-state": "digests"},
                        "skeleton": bound("object", "skeleton", "Current skeleton."),
                        "tree": bound("object", "tree", "Grouped reference tree.")
                    },
                    "required": ["digests", "skeleton", "tree"]
                }),
            ),
            consolidate,
        )
        .build()
}

#[derive(Debug, Deserialize)]
struct DraftSuggestion {
    kind: SuggestionKind,
    #[serde(default)]
    target_node_id: Option<String>,
    #[serde(default)]
    with_node_id: Option<String>,
    #[serde(default)]
    text: String,
}

/// Keeps suggestions that reference existing nodes; dangling targets become
/// untargeted additions.
fn sanitize(drafts: Vec<DraftSuggestion>, skeleton: &Skeleton, doc: &ReferenceDocument) -> Vec<Suggestion> {
    let known = |id: &Option<String>| id.as_deref().is_some_and(|i| skeleton.node(i).is_some());
    let mut out = Vec::new();
    for d in drafts {
        let text = text::squash_whitespace(&d.text);
        if text.is_empty() {
            continue;
        }
        let pair = matches!(d.kind, SuggestionKind::Merge | SuggestionKind::Reorder);
        let s = if pair && !(known(&d.target_node_id) && known(&d.with_node_id)) {
            continue;
        } else if d.target_node_id.is_some() && !known(&d.target_node_id) {
            Suggestion { target_node_id: None, with_node_id: None, kind: SuggestionKind::Add, text }
        } else {
            let with_node_id = if pair { d.with_node_id } else { None };
            Suggestion { target_node_id: d.target_node_id, with_node_id, kind: d.kind, text }
        };
        out.push(s);
    }
    if out.is_empty() {
        out.push(Suggestion { target_node_id: None, with_node_id: None, kind: SuggestionKind::Add, text: doc.title.clone() });
    }
    out
}

pub async fn make_digest(d: &ServerDeps, doc: &ReferenceDocument, skeleton: &Skeleton) -> Result<Digest, String> {
    if doc.body.trim().is_empty() {
        return Err(format!("document {} has an empty body", doc.doc_id));
    }
    let req = PromptRequest::new(ids::DIGEST_SUMMARIZE).var("title", doc.title.clone()).var("body", doc.body.clone());
    let summary = ask_text(d.model.as_ref(), req).await?;
    let mut summary = text::squash_whitespace(&summary);
    if text::word_count(&summary) > SUMMARY_WORD_CAP {
        summary = text::truncate_words(&summary, SUMMARY_WORD_CAP - 1);
    }
    let req = PromptRequest::new(ids::DIGEST_SUGGEST)
        .json_var("doc", &json!({"doc_id": doc.doc_id, "title": doc.title, "body": doc.body}))
        .json_var("skeleton", skeleton);
    let reply = ask_json(d.model.as_ref(), req).await?;
    let drafts: Vec<DraftSuggestion> = serde_json::from_value(reply["suggestions"].clone()).unwrap_or_default();
    Ok(Digest {
        digest_id: format!("dg-{}-v{}", doc.doc_id, skeleton.version),
        doc_id: doc.doc_id.clone(),
        summary,
        suggestions: sanitize(drafts, skeleton, doc),
    })
}

async fn make(d: &ServerDeps, args: &Value) -> Result<Value, ToolResult> {
    let docs: Vec<ReferenceDocument> = take(args, "documents")?;
    let skeleton: Skeleton = take(args, "skeleton")?;
    let jobs = docs.iter().map(|doc| make_digest(d, doc, &skeleton));
    let digests: Vec<Digest> = futures::future::join_all(jobs)
        .await
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    Ok(json!({"digests": digests}))
}

fn same_feedback(a: &Directive, s: &Suggestion) -> bool {
    a.kind == s.kind
        && a.target_node_id == s.target_node_id
        && a.with_node_id == s.with_node_id
        && similarity(&text::normalize(&a.text), &text::normalize(&s.text)) >= DUPLICATE_THRESHOLD
}

/// Merges digests into deduplicated directives, each listing the documents
/// that support it.
pub fn consolidate(digests: &[Digest], skeleton: &Skeleton, tree: &ReferenceTree) -> RevisionPlan {
    let mut directives: Vec<Directive> = Vec::new();
    for digest in digests {
        for s in &digest.suggestions {
            match directives.iter_mut().find(|d| same_feedback(d, s)) {
                Some(existing) => {
                    if !existing.supporting_doc_ids.contains(&digest.doc_id) {
                        existing.supporting_doc_ids.push(digest.doc_id.clone());
                    }
                }
                None => directives.push(Directive {
                    kind: s.kind,
                    target_node_id: s.target_node_id.clone(),
                    with_node_id: s.with_node_id.clone(),
                    text: s.text.clone(),
                    supporting_doc_ids: vec![digest.doc_id.clone()],
                }),
            }
        }
    }
    let coverage_score = plan_coverage(&directives, skeleton, tree);
    RevisionPlan { plan_id: format!("plan-v{}", skeleton.version), directives, coverage_score }
}

fn consolidate_args(args: &Value) -> Result<Value, ToolResult> {
    let digests: Vec<Digest> = take(args, "digests")?;
    let skeleton: Skeleton = take(args, "skeleton")?;
    let tree: ReferenceTree = take(args, "tree")?;
    if digests.is_empty() {
        return Err(fail("consolidation needs at least one digest"));
    }
    Ok(json!({"plan": consolidate(&digests, &skeleton, &tree)}))
}
