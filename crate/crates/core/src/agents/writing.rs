//! Writing agent: one section per skeleton node, citation repair, an
//! optional outline figure, and assembly into markdown.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Value};

use super::session::Session;
use super::{AgentError, AgentId};
use crate::model::prompts::ids;
use crate::model::PromptRequest;
use crate::protocol::{ContentPart, ToolResult};
use crate::state::{DocSource, PipelineState, ReferenceDocument, Skeleton};
use crate::text;

const AGENT: AgentId = AgentId::Writing;

static CITATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[@([^\]\s]+)\]").expect("valid regex"));

/// Cited ids in order of first appearance.
pub fn cited_ids(markdown: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    CITATION
        .captures_iter(markdown)
        .map(|c| c[1].to_string())
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

/// Drops citation tokens whose id is not in `known`. Returns the cleaned
/// text and the dropped ids.
pub fn repair_citations(text: &str, known: &BTreeSet<String>) -> (String, Vec<String>) {
    let mut dropped = Vec::new();
    let cleaned = CITATION.replace_all(text, |c: &regex::Captures| {
        if known.contains(&c[1]) {
            c[0].to_string()
        } else {
            if !dropped.contains(&c[1].to_string()) {
                dropped.push(c[1].to_string());
            }
            String::new()
        }
    });
    let cleaned = cleaned.replace(" .", ".").replace("  ", " ");
    (cleaned.trim().to_string(), dropped)
}

fn quoted(label: &str) -> String {
    format!("\"{}\"", label.replace('"', "'"))
}

/// A top-down graph of the outline: the title, its sections and their
/// children.
pub fn mermaid_outline(skeleton: &Skeleton) -> String {
    let mut lines = vec!["graph TD".to_string(), format!("  root[{}]", quoted(&skeleton.title))];
    fn visit(parent: &str, nodes: &[crate::state::SkeletonNode], lines: &mut Vec<String>) {
        for n in nodes {
            lines.push(format!("  {parent} --> {}[{}]", n.node_id, quoted(&n.heading)));
            visit(&n.node_id, &n.children, lines);
        }
    }
    visit("root", &skeleton.sections, &mut lines);
    lines.join("\n")
}

fn reference_line(doc: &ReferenceDocument) -> String {
    let origin = match &doc.source {
        DocSource::Url { url } => url.clone(),
        DocSource::Upload { filename } => format!("uploaded file {filename}"),
    };
    format!("- [{}] {}. {}", doc.doc_id, doc.title, origin)
}

/// The reference list: exactly the cited documents, once each, in order of
/// first citation.
pub fn bibliography(body: &str, corpus: &[ReferenceDocument]) -> Vec<String> {
    cited_ids(body)
        .iter()
        .filter_map(|id| corpus.iter().find(|d| &d.doc_id == id))
        .map(reference_line)
        .collect()
}

/// Headings follow skeleton depth; the figure goes after the introduction.
pub fn assemble_survey(state: &PipelineState) -> String {
    let Some(skeleton) = &state.skeleton else {
        return String::new();
    };
    let mut body = format!("# {}\n", skeleton.title);
    for (i, (depth, node)) in skeleton.walk().into_iter().enumerate() {
        body.push_str(&format!("\n{} {}\n\n", "#".repeat(depth + 1), node.heading));
        if let Some(text) = state.sections.get(&node.node_id).filter(|t| !t.trim().is_empty()) {
            body.push_str(text.trim());
            body.push('\n');
        }
        if i == 0 {
            if let Some(fig) = &state.figure {
                body.push('\n');
                body.push_str(fig.trim());
                body.push('\n');
            }
        }
    }
    let refs = bibliography(&body, &state.corpus);
    body.push_str("\n## References\n\n");
    if refs.is_empty() {
        body.push_str("No references were cited.\n");
    }
    for r in refs {
        body.push_str(&r);
        body.push('\n');
    }
    body
}

fn sources(state: &PipelineState, doc_ids: &[String]) -> Vec<Value> {
    doc_ids
        .iter()
        .filter_map(|id| state.doc(id))
        .map(|d| {
            let summary = state
                .digests
                .iter()
                .find(|g| g.doc_id == d.doc_id)
                .map(|g| g.summary.clone())
                .unwrap_or_else(|| text::first_sentences(&d.body, 1));
            json!({"doc_id": d.doc_id, "title": d.title, "summary": summary})
        })
        .collect()
}

pub(super) async fn run(s: &mut Session) -> Result<(), AgentError> {
    let Some(skeleton) = s.state.skeleton.clone() else {
        return Err(AgentError::SectionFailed { node_id: String::new(), message: "no skeleton to write".into() });
    };
    let known: BTreeSet<String> = s.state.corpus.iter().map(|d| d.doc_id.clone()).collect();
    for (_, node) in skeleton.walk() {
        let req = PromptRequest::new(ids::WRITING_SECTION)
            .var("topic", s.state.brief.topic.clone())
            .var("heading", node.heading.clone())
            .var("intent", node.intent.clone())
            .json_var("sources", &sources(&s.state, &node.citation_slots));
        let text = match s.rt.model.complete(&req).await {
            Ok(c) => c.text.trim().to_string(),
            Err(e) => return Err(AgentError::SectionFailed { node_id: node.node_id.clone(), message: e.to_string() }),
        };
        let args = json!({"node_id": node.node_id});
        s.record(AGENT, "writing.compose_section", args, ToolResult::json(json!({"text": text})))?;
        let (repaired, dropped) = repair_citations(&text, &known);
        if !dropped.is_empty() {
            let warning = format!("warning: dropped unknown citations {}", dropped.join(", "));
            let result = ToolResult {
                content: vec![ContentPart::Text { text: warning }, ContentPart::Json { json: json!({"text": repaired}) }],
                is_error: false,
            };
            s.record(AGENT, "writing.citation_repair", json!({"node_id": node.node_id, "dropped": dropped}), result)?;
        }
    }
    // The figure is optional: a failed render is recorded and skipped.
    match s.invoke(AGENT, "figure.render_mermaid", json!({"spec": mermaid_outline(&skeleton)})).await {
        Ok(_) | Err(AgentError::Call { .. }) | Err(AgentError::AccessDenied { .. }) => {}
        Err(e) => return Err(e),
    }
    let survey = assemble_survey(&s.state);
    s.record(AGENT, "writing.assemble", json!({}), ToolResult::json(json!({"survey": survey})))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repair_drops_only_unknown_ids() {
        let known: BTreeSet<String> = ["a1".to_string()].into();
        let (text, dropped) = repair_citations("Shown in [@a1] and [@zz] too [@zz].", &known);
        assert_eq!(text, "Shown in [@a1] and too.");
        assert_eq!(dropped, vec!["zz"]);
    }

    #[test]
    fn cited_order_is_first_appearance() {
        assert_eq!(cited_ids("x [@b] y [@a] z [@b]"), vec!["b", "a"]);
    }
}
