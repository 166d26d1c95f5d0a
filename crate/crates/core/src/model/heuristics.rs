//! Deterministic fallback answers for every prompt template.
//!
//! The scripted backend uses these when no recorded completion matches.
//! They read the same variables a live model would see and answer in the
//! same output format, so servers parse both paths identically.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::prompts::ids;
use super::similarity::similarity;
use super::PromptRequest;
use crate::state::{NodeKind, Skeleton};
use crate::text;

/// Threshold below which a document is considered off-outline and gets an
/// `add` suggestion instead of an `emphasize` one.
pub const EMPHASIZE_THRESHOLD: f64 = 0.04;

pub fn respond(req: &PromptRequest) -> Option<String> {
    let v = &req.variables;
    let out = match req.template_id.as_str() {
        ids::CONSENSUS_QUESTION => consensus_question(v),
        ids::CONSENSUS_SUMMARIZE => consensus_summarize(v).to_string(),
        ids::SEARCH_QUERIES => search_queries(v).to_string(),
        ids::GROUP_LABEL => group_label(v).to_string(),
        ids::SKELETON_INIT => skeleton_init(v).to_string(),
        ids::SKELETON_REVISE => skeleton_revise(v).to_string(),
        ids::DIGEST_SUMMARIZE => text::truncate_words(&text::first_sentences(var(v, "body"), 3), 150),
        ids::DIGEST_SUGGEST => digest_suggest(v).to_string(),
        ids::ORCHESTRA_PLAN => orchestra_plan(v).to_string(),
        ids::WRITING_SECTION => writing_section(v),
        _ => return None,
    };
    Some(out)
}

fn var<'a>(v: &'a BTreeMap<String, String>, name: &str) -> &'a str {
    v.get(name).map(String::as_str).unwrap_or_default()
}

fn json_var(v: &BTreeMap<String, String>, name: &str) -> Value {
    serde_json::from_str(var(v, name)).unwrap_or(Value::Null)
}

fn user_turns(dialogue: &Value) -> Vec<String> {
    dialogue
        .as_array()
        .into_iter()
        .flatten()
        .filter(|t| t.get("role").and_then(Value::as_str) == Some("user"))
        .filter_map(|t| t.get("text").and_then(Value::as_str))
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn consensus_question(v: &BTreeMap<String, String>) -> String {
    let topic = var(v, "topic");
    let asked = json_var(v, "dialogue")
        .as_array()
        .map_or(0, |d| d.iter().filter(|t| t["role"] == "assistant").count());
    match asked {
        0 => format!("Which aspects of {topic} matter most to you: methods, applications, evaluation, or open problems?"),
        1 => "Are there specific sub-areas, benchmarks or time ranges the survey must cover?".to_string(),
        2 => "Who is the intended audience, and how technical should the survey be?".to_string(),
        _ => "Is there anything else to settle before retrieval starts?".to_string(),
    }
}

fn consensus_summarize(v: &BTreeMap<String, String>) -> Value {
    let topic = var(v, "topic");
    let goals = var(v, "goals");
    let mut perspectives: Vec<String> = Vec::new();
    for p in user_turns(&json_var(v, "dialogue")) {
        if !perspectives.contains(&p) {
            perspectives.push(p);
        }
    }
    if perspectives.is_empty() {
        perspectives = vec!["core methods".into(), "evaluation and benchmarks".into()];
    }
    let goals = if goals.trim().is_empty() { format!("A comprehensive survey of {topic}") } else { goals.to_string() };
    json!({
        "goals": goals,
        "perspectives": perspectives,
        "search_strategy": "Query the topic alone and combined with each perspective; keep documents similar to the topic.",
    })
}

fn search_queries(v: &BTreeMap<String, String>) -> Value {
    let topic = var(v, "topic");
    let mut perspectives: Vec<String> = json_var(v, "perspectives")
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .map(str::to_string)
        .collect();
    for turn in user_turns(&json_var(v, "dialogue")) {
        if !perspectives.contains(&turn) {
            perspectives.push(turn);
        }
    }
    let mut queries = vec![topic.to_string(), format!("{topic} survey")];
    queries.extend(perspectives.iter().map(|p| format!("{topic} {p}")));
    queries.push(format!("{topic} methods"));
    queries.push(format!("{topic} evaluation"));
    json!(queries)
}

fn group_label(v: &BTreeMap<String, String>) -> Value {
    let terms: Vec<String> = json_var(v, "terms")
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .map(str::to_string)
        .collect();
    match terms.as_slice() {
        [] => json!({
            "label": "Related Work",
            "rationale": "Thematic relevance: loosely related documents; methodological similarity: no shared method terms.",
        }),
        [theme] => json!({
            "label": text::title_case(theme),
            "rationale": format!("Thematic relevance: shared focus on {theme}; methodological similarity: common treatment of {theme}."),
        }),
        [theme, method, ..] => json!({
            "label": format!("{} and {}", text::title_case(theme), text::title_case(method)),
            "rationale": format!("Thematic relevance: shared focus on {theme}; methodological similarity: common reliance on {method}."),
        }),
    }
}

fn skeleton_init(v: &BTreeMap<String, String>) -> Value {
    let topic = var(v, "topic");
    let brief = json_var(v, "brief");
    let perspectives: Vec<&str> = brief["perspectives"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
    let groups = json_var(v, "groups");
    let mut sections = Vec::new();
    for g in groups.as_array().into_iter().flatten() {
        let label = g["label"].as_str().unwrap_or("Related Work");
        let rationale = g["rationale"].as_str().unwrap_or_default();
        let context = format!("{label} {rationale}");
        let focus = perspectives
            .iter()
            .map(|p| (similarity(p, &context), *p))
            .filter(|(s, _)| *s > 0.0)
            .fold(None::<(f64, &str)>, |best, cur| match best {
                Some(b) if b.0 >= cur.0 => Some(b),
                _ => Some(cur),
            });
        let mut intent = format!("Reviews work on {} within {topic}.", label.to_lowercase());
        if let Some((_, p)) = focus {
            intent.push_str(&format!(" Emphasizes {p}."));
        }
        sections.push(json!({"heading": label, "intent": intent, "group_refs": [g["group_id"].clone()]}));
    }
    json!({"title": format!("A Survey of {}", text::title_case(topic)), "sections": sections})
}

fn section_number(word: &str) -> Option<usize> {
    word.trim_matches(|c: char| !c.is_ascii_digit()).parse().ok()
}

fn skeleton_revise(v: &BTreeMap<String, String>) -> Value {
    let feedback = var(v, "feedback");
    let skeleton: Option<Skeleton> = serde_json::from_str(var(v, "skeleton")).ok();
    let Some(skeleton) = skeleton else { return json!({"directives": []}) };
    let top: Vec<&str> = skeleton.sections.iter().map(|s| s.node_id.as_str()).collect();
    let nth = |n: usize| n.checked_sub(1).and_then(|i| top.get(i)).map(|s| s.to_string());
    let mut directives = Vec::new();
    for clause in feedback.split([';', '\n']).map(str::trim).filter(|c| !c.is_empty()) {
        let lower = clause.to_lowercase();
        let words: Vec<&str> = lower.split_whitespace().collect();
        let numbers: Vec<usize> = words.iter().filter_map(|w| section_number(w)).collect();
        let verb = words.first().copied().unwrap_or_default();
        let directive = match verb {
            "merge" | "combine" if numbers.len() >= 2 => json!({
                "kind": "merge", "target_node_id": nth(numbers[0]), "with_node_id": nth(numbers[1]), "text": clause,
            }),
            "reorder" | "swap" | "move" => {
                let (a, b) = match numbers.as_slice() {
                    [a, b, ..] => (nth(*a), nth(*b)),
                    _ => {
                        let content: Vec<&str> = skeleton.content_sections().map(|s| s.node_id.as_str()).collect();
                        (content.first().map(|s| s.to_string()), content.get(1).map(|s| s.to_string()))
                    }
                };
                json!({"kind": "reorder", "target_node_id": a, "with_node_id": b, "text": clause})
            }
            "split" if !numbers.is_empty() => json!({"kind": "split", "target_node_id": nth(numbers[0]), "text": clause}),
            "add" => {
                let subject = clause
                    .splitn(2, |c: char| c.is_whitespace())
                    .nth(1)
                    .unwrap_or(clause)
                    .trim_start_matches(|c: char| c.is_whitespace());
                let subject = ["a section on ", "a section about ", "section on ", "section about ", "a section ", "section "]
                    .iter()
                    .find_map(|p| subject.to_lowercase().starts_with(p).then(|| &subject[p.len()..]))
                    .unwrap_or(subject);
                json!({"kind": "add", "target_node_id": null, "text": subject.trim()})
            }
            _ => {
                let best = skeleton
                    .walk()
                    .into_iter()
                    .filter(|(_, n)| n.kind == NodeKind::Content)
                    .map(|(_, n)| (similarity(clause, &format!("{} {}", n.heading, n.intent)), n.node_id.clone()))
                    .fold(None::<(f64, String)>, |best, cur| match best {
                        Some(b) if b.0 >= cur.0 => Some(b),
                        _ => Some(cur),
                    });
                json!({"kind": "emphasize", "target_node_id": best.map(|b| b.1), "text": clause})
            }
        };
        directives.push(directive);
    }
    json!({"directives": directives})
}

fn digest_suggest(v: &BTreeMap<String, String>) -> Value {
    let doc = json_var(v, "doc");
    let doc_id = doc["doc_id"].as_str().unwrap_or_default();
    let title = doc["title"].as_str().unwrap_or_default();
    let full = format!("{title} {}", doc["body"].as_str().unwrap_or_default());
    let Ok(skeleton) = serde_json::from_value::<Skeleton>(json_var(v, "skeleton")) else {
        return json!({"suggestions": [{"kind": "add", "target_node_id": null, "text": title}]});
    };
    let nodes: Vec<_> = skeleton.walk().into_iter().filter(|(_, n)| n.kind == NodeKind::Content).collect();
    if let Some((_, n)) = nodes.iter().find(|(_, n)| n.citation_slots.iter().any(|d| d == doc_id)) {
        return json!({"suggestions": [{
            "kind": "emphasize", "target_node_id": n.node_id,
            "text": format!("Strengthen the discussion in '{}'", n.heading),
        }]});
    }
    let best = nodes
        .iter()
        .map(|(d, n)| (similarity(&full, &format!("{} {}", n.heading, n.intent)), *d, *n))
        .fold(None::<(f64, usize, &crate::state::SkeletonNode)>, |best, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        });
    match best {
        Some((score, _, node)) if score >= EMPHASIZE_THRESHOLD => json!({"suggestions": [{
            "kind": "emphasize", "target_node_id": node.node_id,
            "text": format!("Cite supporting evidence in '{}'", node.heading),
        }]}),
        Some((_, _, node)) => {
            // Attach the proposal to the top-level section holding the best match.
            let section = skeleton
                .sections
                .iter()
                .find(|s| s.node_id == node.node_id || s.children.iter().any(|c| c.node_id == node.node_id))
                .map(|s| s.node_id.clone());
            json!({"suggestions": [{"kind": "add", "target_node_id": section, "text": title}]})
        }
        None => json!({"suggestions": [{"kind": "add", "target_node_id": null, "text": title}]}),
    }
}

fn orchestra_plan(v: &BTreeMap<String, String>) -> Value {
    let ctx = json_var(v, "context");
    let available: Vec<&str> = ctx["available"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
    let has = |name: &str| available.contains(&name);
    let pending: Vec<&str> = ctx["pending_feedback"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
    let layers = ctx["layers_done"].as_u64().unwrap_or(0);
    let max_layers = ctx["max_layers"].as_u64().unwrap_or(3);
    let min_gain = ctx["min_gain"].as_f64().unwrap_or(0.02);
    let coverage = ctx["coverage"].as_f64().unwrap_or(0.0);
    let last_gain = ctx["last_gain"].as_f64();
    let step = |tool: &str, args: Value, why: String| json!({"tool_name": tool, "args": args, "rationale": why});

    if ctx["has_skeleton"] != json!(true) {
        if has("skeleton.init") {
            return json!({"steps": [step("skeleton.init", json!({}), "No skeleton yet: initialize it from the grouped references.".into())], "stop": false});
        }
        return json!({"steps": [], "stop": true});
    }
    if !pending.is_empty() && has("skeleton.revise") && has("refine.step") {
        let fb = pending.join("; ");
        return json!({"steps": [
            step("skeleton.revise", json!({"feedback": fb}), format!("Apply user feedback: {fb}")),
            step("refine.step", json!({}), format!("Refine the skeleton to reflect the feedback: {fb}")),
        ], "stop": false});
    }
    let keep_going = layers == 0
        || (layers < max_layers && last_gain.is_some_and(|g| g >= min_gain) && coverage < 1.0);
    if keep_going && has("digest.make") && has("digest.consolidate") && has("refine.step") {
        let n = layers + 1;
        return json!({"steps": [
            step("digest.make", json!({}), format!("Layer {n}: digest every reference against the current skeleton.")),
            step("digest.consolidate", json!({}), format!("Layer {n}: merge digest suggestions into one revision plan.")),
            step("refine.step", json!({}), format!("Layer {n}: apply intra-section then cross-section refinement.")),
        ], "stop": false});
    }
    json!({"steps": [], "stop": true,
           "rationale": format!("Stop after {layers} layer(s): coverage {coverage:.2}, last gain {:.2}.", last_gain.unwrap_or(0.0))})
}

fn writing_section(v: &BTreeMap<String, String>) -> String {
    let topic = var(v, "topic");
    let intent = var(v, "intent");
    let sources = json_var(v, "sources");
    let mut out = vec![intent.to_string()];
    let sources = sources.as_array().cloned().unwrap_or_default();
    if sources.is_empty() {
        out.push(format!("This part situates the discussion within the wider study of {topic}."));
    }
    for s in sources {
        let id = s["doc_id"].as_str().unwrap_or_default();
        let title = s["title"].as_str().unwrap_or_default();
        let summary = text::first_sentences(s["summary"].as_str().unwrap_or_default(), 1);
        out.push(format!("{title}: {summary} [@{id}]"));
    }
    out.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: &str, vars: &[(&str, String)]) -> PromptRequest {
        let mut r = PromptRequest::new(id);
        for (k, val) in vars {
            r = r.var(k, val.clone());
        }
        r
    }

    #[test]
    fn every_template_has_a_fallback() {
        for id in ids::ALL {
            assert!(respond(&PromptRequest::new(id)).is_some(), "{id}");
        }
    }

    #[test]
    fn perspectives_are_copied_verbatim() {
        let dialogue = json!([
            {"role": "assistant", "text": "Which aspects?"},
            {"role": "user", "text": "evaluation benchmarks"},
        ]);
        let r = req(ids::CONSENSUS_SUMMARIZE, &[("topic", "t".into()), ("goals", "".into()), ("dialogue", dialogue.to_string())]);
        let out: Value = serde_json::from_str(&respond(&r).unwrap()).unwrap();
        assert_eq!(out["perspectives"], json!(["evaluation benchmarks"]));
    }

    #[test]
    fn revise_parses_merge_clause() {
        let mut s = Skeleton::new("T");
        for (i, h) in ["Intro", "A", "B", "C"].iter().enumerate() {
            s.sections.push(crate::state::SkeletonNode::new(format!("n{}", i + 1), *h, "x"));
        }
        let r = req(ids::SKELETON_REVISE, &[
            ("feedback", "merge sections 2 and 3".into()),
            ("skeleton", serde_json::to_string(&s).unwrap()),
        ]);
        let out: Value = serde_json::from_str(&respond(&r).unwrap()).unwrap();
        assert_eq!(out["directives"][0]["kind"], "merge");
        assert_eq!(out["directives"][0]["target_node_id"], "n2");
        assert_eq!(out["directives"][0]["with_node_id"], "n3");
    }
}
