//! Skeleton initialization and feedback translation.

use std::collections::BTreeSet;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ask_json, bound, fail, finish, take, ServerDeps, VERSION};
use crate::model::prompts::ids;
use crate::model::{similarity, PromptRequest};
use crate::protocol::{McpServer, ServeError, ToolDescriptor, ToolResult};
use crate::state::{
    plan_coverage, Directive, NodeKind, ReferenceTree, ResearchBrief, RevisionPlan, Skeleton, SkeletonNode,
    SuggestionKind, MISC_GROUP,
};
use crate::text;

pub const INTRODUCTION: &str = "Introduction";
pub const CONCLUSION: &str = "Conclusion and Future Directions";

pub fn server(deps: &ServerDeps) -> Result<McpServer, ServeError> {
    let d = deps.clone();
    let init = move |args: Value| {
        let d = d.clone();
        async move { finish(init(&d, &args).await) }
    };
    let d = deps.clone();
    let revise = move |args: Value| {
        let d = d.clone();
        async move { finish(revise(&d, &args).await) }
    };
    McpServer::builder("skeleton", VERSION)
        .tool(
            ToolDescriptor::new(
                "init",
                "Construct the high-level section-wise outline (version 1) from the research brief and the \
                 grouped reference tree. One content section per distinct facet, plus introduction and conclusion.",
                json!({
                    "type": "object",
                    "properties": {
                        "topic": bound("string", "topic", "Survey topic."),
                        "brief": bound("object", "brief", "Agreed research brief."),
                        "tree": bound("object", "tree", "Grouped reference tree.")
                    },
                    "required": ["topic", "brief", "tree"]
                }),
            ),
            init,
        )
        .tool(
            ToolDescriptor::new(
                "revise",
                "Translate user feedback on the outline (merge, reorder, split, add or emphasize sections) into a \
                 revision plan for refine.step.",
                json!({
                    "type": "object",
                    "properties": {
                        "skeleton": bound("object", "skeleton", "Current skeleton."),
                        "tree": bound("object", "tree", "Grouped reference tree."),
                        "feedback": {"type": "string", "minLength": 1}
                    },
                    "required": ["skeleton", "tree", "feedback"]
                }),
            ),
            revise,
        )
        .build()
}

#[derive(Debug, Deserialize)]
struct DraftSection {
    heading: String,
    #[serde(default)]
    intent: String,
    #[serde(default)]
    group_refs: Vec<String>,
}

fn unique_heading(heading: &str, taken: &mut BTreeSet<String>) -> String {
    let base = text::squash_whitespace(heading);
    let mut candidate = base.clone();
    let mut n = 2;
    while !taken.insert(candidate.to_lowercase()) {
        candidate = format!("{base} ({n})");
        n += 1;
    }
    candidate
}

/// Turns a drafted section list into a valid version-1 skeleton: unknown
/// group refs are dropped, sections with an empty or repeated group set are
/// discarded, unreferenced groups get their own section, and the
/// introduction and conclusion are added around the content.
pub fn assemble_initial(topic: &str, title: &str, draft: Vec<(String, String, Vec<String>)>, tree: &ReferenceTree) -> Skeleton {
    let title = if title.trim().is_empty() { format!("A Survey of {}", text::title_case(topic)) } else { title.trim().to_string() };
    let mut skeleton = Skeleton::new(title);
    let mut taken: BTreeSet<String> = [INTRODUCTION, CONCLUSION].iter().map(|h| h.to_lowercase()).collect();
    let mut sets: Vec<BTreeSet<String>> = Vec::new();
    let mut content = Vec::new();
    for (heading, intent, refs) in draft {
        let refs: Vec<String> = refs.into_iter().filter(|g| tree.has_group(g)).fold(Vec::new(), |mut acc, g| {
            if !acc.contains(&g) {
                acc.push(g);
            }
            acc
        });
        let set: BTreeSet<String> = refs.iter().cloned().collect();
        if heading.trim().is_empty() || set.is_empty() || sets.contains(&set) {
            continue;
        }
        sets.push(set);
        content.push((heading, intent, refs));
    }
    for g in &tree.groups {
        if !sets.iter().any(|s| s.contains(&g.group_id)) {
            let heading = if g.group_id == MISC_GROUP { "Other Approaches".to_string() } else { g.label.clone() };
            let intent = format!("Reviews work on {} within {topic}.", g.label.to_lowercase());
            sets.push([g.group_id.clone()].into());
            content.push((heading, intent, vec![g.group_id.clone()]));
        }
    }

    let intro_id = skeleton.fresh_id();
    let mut intro = SkeletonNode::new(
        intro_id,
        INTRODUCTION,
        format!("Introduces {topic}, the scope of this survey and how it is organized."),
    );
    intro.kind = NodeKind::Introduction;
    skeleton.sections.push(intro);
    for (heading, intent, refs) in content {
        let id = skeleton.fresh_id();
        let intent = if intent.trim().is_empty() { format!("Reviews {heading}.") } else { text::squash_whitespace(&intent) };
        let mut node = SkeletonNode::new(id, unique_heading(&heading, &mut taken), intent);
        node.group_refs = refs;
        skeleton.sections.push(node);
    }
    let outro_id = skeleton.fresh_id();
    let mut outro = SkeletonNode::new(
        outro_id,
        CONCLUSION,
        format!("Summarizes the state of {topic} and outlines open problems."),
    );
    outro.kind = NodeKind::Conclusion;
    skeleton.sections.push(outro);
    skeleton
}

async fn init(d: &ServerDeps, args: &Value) -> Result<Value, ToolResult> {
    let topic: String = take(args, "topic")?;
    let brief: ResearchBrief = take(args, "brief")?;
    let tree: ReferenceTree = take(args, "tree")?;
    if tree.groups.is_empty() {
        return Err(fail("reference tree has no groups"));
    }
    let groups: Vec<Value> = tree
        .groups
        .iter()
        .map(|g| json!({"group_id": g.group_id, "label": g.label, "rationale": g.rationale, "size": g.member_ids.len()}))
        .collect();
    let req = PromptRequest::new(ids::SKELETON_INIT)
        .var("topic", topic.clone())
        .json_var("brief", &brief)
        .json_var("groups", &groups);
    let reply = ask_json(d.model.as_ref(), req).await.map_err(fail)?;
    let sections: Vec<DraftSection> = serde_json::from_value(reply["sections"].clone())
        .map_err(|e| fail(format!("skeleton.init completion: {e}")))?;
    let draft = sections.into_iter().map(|s| (s.heading, s.intent, s.group_refs)).collect();
    let skeleton = assemble_initial(&topic, reply["title"].as_str().unwrap_or_default(), draft, &tree);
    Ok(json!({"skeleton": skeleton}))
}

#[derive(Debug, Deserialize)]
struct DraftDirective {
    kind: SuggestionKind,
    #[serde(default)]
    target_node_id: Option<String>,
    #[serde(default)]
    with_node_id: Option<String>,
    #[serde(default)]
    text: String,
}

/// Documents that back a feedback directive: the citations and group
/// members of the nodes it touches, or the best-matching group otherwise.
fn supporting_docs(skeleton: &Skeleton, tree: &ReferenceTree, nodes: &[&str], text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let push = |out: &mut Vec<String>, d: &String| {
        if !out.contains(d) {
            out.push(d.clone());
        }
    };
    for id in nodes {
        if let Some(n) = skeleton.node(id) {
            n.citation_slots.iter().for_each(|d| push(&mut out, d));
            for g in n.group_refs.iter().filter_map(|g| tree.group(g)) {
                g.member_ids.iter().for_each(|d| push(&mut out, d));
            }
        }
    }
    if out.is_empty() {
        let best = tree
            .groups
            .iter()
            .map(|g| (similarity(text, &format!("{} {}", g.label, g.rationale)), g))
            .fold(None, |best: Option<(f64, _)>, cur| match best {
                Some(b) if b.0 >= cur.0 => Some(b),
                _ => Some(cur),
            });
        if let Some((_, g)) = best {
            g.member_ids.iter().for_each(|d| push(&mut out, d));
        }
    }
    out
}

async fn revise(d: &ServerDeps, args: &Value) -> Result<Value, ToolResult> {
    let skeleton: Skeleton = take(args, "skeleton")?;
    let tree: ReferenceTree = take(args, "tree")?;
    let feedback: String = take(args, "feedback")?;
    let req = PromptRequest::new(ids::SKELETON_REVISE)
        .json_var("skeleton", &skeleton)
        .var("feedback", feedback.clone());
    let reply = ask_json(d.model.as_ref(), req).await.map_err(fail)?;
    let drafts: Vec<DraftDirective> = serde_json::from_value(reply["directives"].clone())
        .map_err(|e| fail(format!("skeleton.revise completion: {e}")))?;
    let exists = |id: &Option<String>| id.as_deref().is_none_or(|i| skeleton.node(i).is_some());
    let mut directives: Vec<Directive> = Vec::new();
    for dd in drafts {
        let text = text::squash_whitespace(&dd.text);
        if text.is_empty() || !exists(&dd.target_node_id) || !exists(&dd.with_node_id) {
            continue;
        }
        let needs_pair = matches!(dd.kind, SuggestionKind::Merge | SuggestionKind::Reorder);
        if needs_pair && (dd.target_node_id.is_none() || dd.with_node_id.is_none()) {
            continue;
        }
        let touched: Vec<&str> = dd.target_node_id.iter().chain(dd.with_node_id.iter()).map(String::as_str).collect();
        let supporting_doc_ids = supporting_docs(&skeleton, &tree, &touched, &text);
        if supporting_doc_ids.is_empty() {
            continue;
        }
        directives.push(Directive {
            kind: dd.kind,
            target_node_id: dd.target_node_id,
            with_node_id: dd.with_node_id,
            text,
            supporting_doc_ids,
        });
    }
    let coverage_score = plan_coverage(&directives, &skeleton, &tree);
    let plan = RevisionPlan { plan_id: format!("feedback-v{}", skeleton.version), directives, coverage_score };
    Ok(json!({"plan": plan}))
}
