use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::{json, Value};
use surveyforge::model::ScriptedModel;
use surveyforge::protocol::{CallError, Origin, ServerHandle};
use surveyforge::servers::digest::consolidate;
use surveyforge::servers::figure::render_mermaid;
use surveyforge::servers::group::{agglomerate, MERGE_THRESHOLD};
use surveyforge::servers::refine::refine_layer;
use surveyforge::servers::{self, FixtureIndex, ServerDeps, NATIVE_SERVERS};
use surveyforge::state::{
    validate_skeleton, Digest, Directive, NodeKind, ReferenceDocument, ReferenceGroup, ReferenceTree, RevisionPlan,
    Skeleton, SkeletonNode, Suggestion, SuggestionKind,
};

// Oracles below re-derive tokenization and scoring from scratch rather than
// calling into the crate.

fn words(s: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

fn jaccard(a: &str, b: &str) -> f64 {
    let (x, y) = (words(a), words(b));
    if x.is_empty() && y.is_empty() {
        return 1.0;
    }
    let shared = x.iter().filter(|w| y.contains(*w)).count();
    shared as f64 / (x.len() + y.len() - shared) as f64
}

fn deps(index: FixtureIndex) -> ServerDeps {
    ServerDeps::new(Arc::new(ScriptedModel::new()), Arc::new(index))
}

async fn handle(id: &str, deps: &ServerDeps) -> ServerHandle {
    let server = servers::build(id, deps).expect("known server").expect("builds");
    ServerHandle::in_process(id, Arc::new(server), Origin::Native).await.expect("initializes")
}

fn corpus() -> Vec<ReferenceDocument> {
    FixtureIndex::embedded().entries().iter().map(|e| e.document()).collect()
}

#[tokio::test]
async fn every_native_server_lists_tools() {
    let d = deps(FixtureIndex::embedded());
    let mut counts = BTreeMap::new();
    for id in NATIVE_SERVERS {
        let h = handle(id, &d).await;
        assert!(!h.tools().is_empty(), "{id} has no tools");
        counts.insert(*id, h.tools().len());
    }
    assert_eq!(counts["search"], 4);
    let names: BTreeSet<String> = handle("search", &d).await.tools().into_iter().map(|t| t.name).collect();
    let want: BTreeSet<String> =
        ["generate_queries", "retrieve", "crawl", "similarity_filter"].iter().map(|s| s.to_string()).collect();
    assert_eq!(names, want);
}

#[tokio::test]
async fn retrieve_matches_brute_force_ranking() {
    let index = FixtureIndex::embedded();
    let query = "skeleton refinement";
    let mut scored: Vec<(f64, String, String)> = index
        .entries()
        .iter()
        .map(|e| {
            let doc = e.document();
            (jaccard(query, &format!("{} {}", e.title, e.snippet())), doc.doc_id, e.url.clone())
        })
        .filter(|(s, _, _)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let expected: Vec<String> = scored.iter().take(3).map(|(_, _, u)| u.clone()).collect();
    assert_eq!(expected.len(), 3, "fixture corpus should have three matches");

    let h = handle("search", &deps(index)).await;
    let out = h.call_tool("retrieve", json!({"query": query, "limit": 3})).await.unwrap();
    let urls: Vec<String> = out.json_body().unwrap()["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["url"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(urls, expected);
}

#[tokio::test]
async fn retrieve_edge_cases() {
    let h = handle("search", &deps(FixtureIndex::embedded())).await;
    let zero = h.call_tool("retrieve", json!({"query": "skeleton", "limit": 0})).await.unwrap();
    assert_eq!(zero.json_body().unwrap()["results"], json!([]));
    let none = h.call_tool("retrieve", json!({"query": "zzqx qqvw", "limit": 5})).await.unwrap();
    assert_eq!(none.json_body().unwrap()["results"], json!([]));
}

#[tokio::test]
async fn similarity_filter_matches_oracle() {
    let docs = corpus();
    let topic = "large language models";
    let threshold = 0.05;
    let mut expected: Vec<(f64, String)> = docs
        .iter()
        .map(|d| (jaccard(topic, &format!("{} {}", d.title, d.body)), d.doc_id.clone()))
        .filter(|(s, _)| *s >= threshold)
        .collect();
    expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    let h = handle("search", &deps(FixtureIndex::embedded())).await;
    let out = h
        .call_tool("similarity_filter", json!({"docs": docs, "topic": topic, "threshold": threshold}))
        .await
        .unwrap();
    let body = out.json_body().unwrap();
    let got: Vec<&str> = body["documents"].as_array().unwrap().iter().map(|d| d["doc_id"].as_str().unwrap()).collect();
    let want: Vec<&str> = expected.iter().map(|(_, id)| id.as_str()).collect();
    assert_eq!(got, want);
}

#[tokio::test]
async fn crawl_unknown_url_is_a_tool_error() {
    let h = handle("search", &deps(FixtureIndex::embedded())).await;
    let err = h.call_tool("crawl", json!({"url": "https://nowhere.invalid/x"})).await.unwrap_err();
    assert!(matches!(err, CallError::ToolFailed { .. }), "{err:?}");
}

/// Average-linkage clustering written against sets instead of index vectors.
fn linkage_oracle(texts: &[String], target: Option<usize>) -> Vec<Vec<usize>> {
    let mut clusters: Vec<BTreeSet<usize>> = (0..texts.len()).map(|i| BTreeSet::from([i])).collect();
    loop {
        if clusters.len() < 2 || target.is_some_and(|t| clusters.len() <= t.max(1)) {
            break;
        }
        let mut best = (-1.0, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += jaccard(&texts[i], &texts[j]);
                    }
                }
                let avg = sum / (clusters[a].len() * clusters[b].len()) as f64;
                if avg > best.0 {
                    best = (avg, a, b);
                }
            }
        }
        if target.is_none() && best.0 < MERGE_THRESHOLD {
            break;
        }
        let gone = clusters.remove(best.2);
        clusters[best.1].extend(gone);
    }
    let mut out: Vec<Vec<usize>> = clusters.into_iter().map(|c| c.into_iter().collect()).collect();
    out.sort();
    out
}

#[test]
fn agglomerate_matches_oracle_on_fixture_subsets() {
    let texts: Vec<String> = corpus().iter().map(|d| d.full_text()).collect();
    for window in [0..12, 0..5, 3..9, 6..12, 2..3] {
        let sub = texts[window.clone()].to_vec();
        assert_eq!(agglomerate(&sub, None), linkage_oracle(&sub, None), "window {window:?}");
        for t in 1..=sub.len() {
            assert_eq!(agglomerate(&sub, Some(t)), linkage_oracle(&sub, Some(t)), "window {window:?} target {t}");
        }
    }
}

#[test]
fn agglomerate_degenerate_inputs() {
    assert!(agglomerate(&[], None).is_empty());
    assert_eq!(agglomerate(&["only one".to_string()], None), vec![vec![0]]);
    let texts: Vec<String> = corpus().iter().map(|d| d.full_text()).collect();
    assert_eq!(agglomerate(&texts, Some(1)), vec![(0..12).collect::<Vec<_>>()]);
}

#[tokio::test]
async fn cluster_references_partitions_the_corpus() {
    let docs = corpus();
    let h = handle("group", &deps(FixtureIndex::embedded())).await;
    let out = h
        .call_tool("cluster_references", json!({"documents": docs, "topic": "large language models"}))
        .await
        .unwrap();
    let groups: Vec<ReferenceGroup> = serde_json::from_value(out.json_body().unwrap()["groups"].clone()).unwrap();
    let mut seen = BTreeSet::new();
    for g in &groups {
        assert!(!g.label.is_empty() && !g.rationale.is_empty());
        for m in &g.member_ids {
            assert!(seen.insert(m.clone()), "{m} in two groups");
        }
    }
    let all: BTreeSet<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    assert_eq!(seen, all);

    let texts: Vec<String> = docs.iter().map(|d| d.full_text()).collect();
    let oracle: BTreeSet<BTreeSet<String>> = linkage_oracle(&texts, None)
        .into_iter()
        .filter(|c| c.len() > 1)
        .map(|c| c.into_iter().map(|i| docs[i].doc_id.clone()).collect())
        .collect();
    let got: BTreeSet<BTreeSet<String>> = groups
        .iter()
        .filter(|g| g.group_id != "misc")
        .map(|g| g.member_ids.iter().cloned().collect())
        .collect();
    assert_eq!(got, oracle);
}

#[tokio::test]
async fn cluster_references_rejects_empty_corpus() {
    let h = handle("group", &deps(FixtureIndex::embedded())).await;
    let err = h.call_tool("cluster_references", json!({"documents": [], "topic": "t"})).await.unwrap_err();
    match err {
        CallError::ToolFailed { message, .. } => assert!(message.contains("empty corpus"), "{message}"),
        other => panic!("unexpected {other:?}"),
    }
}

fn tree() -> ReferenceTree {
    let group = |id: &str, members: &[&str]| ReferenceGroup {
        group_id: id.into(),
        label: format!("Group {id}"),
        member_ids: members.iter().map(|m| m.to_string()).collect(),
        rationale: "test".into(),
    };
    ReferenceTree { topic: "t".into(), groups: vec![group("g1", &["d1", "d2"]), group("g2", &["d3"])] }
}

fn node(id: &str, heading: &str, groups: &[&str], cites: &[&str]) -> SkeletonNode {
    let mut n = SkeletonNode::new(id, heading, format!("About {heading}."));
    n.group_refs = groups.iter().map(|s| s.to_string()).collect();
    n.citation_slots = cites.iter().map(|s| s.to_string()).collect();
    n
}

fn skeleton() -> Skeleton {
    let mut s = Skeleton::new("Survey");
    let mut intro = node("n1", "Introduction", &[], &[]);
    intro.kind = NodeKind::Introduction;
    let mut outro = node("n4", "Conclusion", &[], &[]);
    outro.kind = NodeKind::Conclusion;
    s.sections = vec![intro, node("n2", "Retrieval methods", &["g1"], &["d1"]), node("n3", "Systems", &["g2"], &[]), outro];
    s.next_node = 5;
    s
}

fn plan(directives: Vec<Directive>) -> RevisionPlan {
    RevisionPlan { plan_id: "p".into(), directives, coverage_score: 0.0 }
}

fn directive(kind: SuggestionKind, target: Option<&str>, with: Option<&str>, text: &str, docs: &[&str]) -> Directive {
    Directive {
        kind,
        target_node_id: target.map(str::to_string),
        with_node_id: with.map(str::to_string),
        text: text.into(),
        supporting_doc_ids: docs.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn refine_empty_plan_is_identity() {
    let s = skeleton();
    let (out, report) = refine_layer(&s, &plan(vec![]), &tree(), 1).unwrap();
    assert_eq!(out, s);
    assert!(report.changed_node_ids.is_empty());
    assert_eq!(report.coverage_before, report.coverage_after);
    assert_eq!(report.skeleton_after_version, s.version);
}

#[test]
fn refine_single_add_inserts_before_conclusion() {
    let s = skeleton();
    let d = directive(SuggestionKind::Add, None, None, "benchmark datasets for evaluation", &["d3"]);
    let (out, report) = refine_layer(&s, &plan(vec![d]), &tree(), 1).unwrap();
    assert_eq!(out.sections.len(), 5);
    let added = &out.sections[3];
    assert_eq!(added.citation_slots, vec!["d3".to_string()]);
    assert_eq!(added.group_refs, vec!["g2".to_string()]);
    assert_eq!(out.sections[4].kind, NodeKind::Conclusion);
    assert_eq!(out.version, s.version + 1);
    assert!((report.coverage_before - 1.0 / 3.0).abs() < 1e-12);
    assert!((report.coverage_after - 2.0 / 3.0).abs() < 1e-12);
    assert!(validate_skeleton(&out, &tree()).is_empty());
}

#[test]
fn refine_merges_redundant_siblings() {
    let mut s = skeleton();
    s.sections.insert(3, node("n5", "Methods, retrieval", &["g1"], &["d2"]));
    s.next_node = 6;
    assert!(validate_skeleton(&s, &tree()).is_empty());
    let (out, report) = refine_layer(&s, &plan(vec![]), &tree(), 1).unwrap();
    assert_eq!(out.content_sections().count(), 2);
    let merged = out.node("n2").unwrap();
    assert_eq!(merged.citation_slots, vec!["d1".to_string(), "d2".to_string()]);
    assert!(out.node("n5").is_none());
    assert!(report.changed_node_ids.contains(&"n5".to_string()));
}

#[test]
fn refine_rejects_citations_outside_the_tree() {
    let s = skeleton();
    let d = directive(SuggestionKind::Emphasize, Some("n2"), None, "stress this", &["ghost"]);
    assert!(refine_layer(&s, &plan(vec![d]), &tree(), 1).is_err());
}

fn any_directive() -> impl Strategy<Value = Directive> {
    let kinds = prop::sample::select(vec![
        SuggestionKind::Add,
        SuggestionKind::Merge,
        SuggestionKind::Split,
        SuggestionKind::Reorder,
        SuggestionKind::Emphasize,
    ]);
    let ids = prop::option::of(prop::sample::select(vec!["n1", "n2", "n3", "n4", "n9"]));
    let docs = prop::collection::vec(prop::sample::select(vec!["d1", "d2", "d3"]), 0..3);
    let texts = prop::sample::select(vec!["latency budgets", "retrieval methods", "open problems", ""]);
    (kinds, ids.clone(), ids, texts, docs).prop_map(|(k, t, w, text, docs)| directive(k, t, w, text, &docs))
}

proptest! {
    #[test]
    fn refine_keeps_invariants_and_citations(directives in prop::collection::vec(any_directive(), 0..6)) {
        let s = skeleton();
        let t = tree();
        if let Ok((out, report)) = refine_layer(&s, &plan(directives), &t, 1) {
            prop_assert!(validate_skeleton(&out, &t).is_empty());
            let before: BTreeSet<String> = s.citations().into_iter().collect();
            let after: BTreeSet<String> = out.citations().into_iter().collect();
            prop_assert!(before.is_subset(&after));
            prop_assert!(report.coverage_after >= report.coverage_before);
            prop_assert!(out.version == s.version || out.version == s.version + 1);
        }
    }

    #[test]
    fn mermaid_accepts_exactly_balanced_brackets(body in "[\\[\\](){}a ]{0,24}") {
        fn balanced(s: &str) -> bool {
            let mut stack = Vec::new();
            for c in s.chars() {
                match c {
                    '(' | '[' | '{' => stack.push(c),
                    ')' => if stack.pop() != Some('(') { return false },
                    ']' => if stack.pop() != Some('[') { return false },
                    '}' => if stack.pop() != Some('{') { return false },
                    _ => {}
                }
            }
            stack.is_empty()
        }
        let spec = format!("graph TD\n{body}");
        prop_assert_eq!(render_mermaid(&spec).is_ok(), balanced(&body));
    }
}

#[test]
fn mermaid_rejects_unknown_kind_and_wraps_valid_input() {
    assert!(render_mermaid("").is_err());
    let err = render_mermaid("\nflowsheet LR\na-->b").unwrap_err();
    assert!(err.starts_with("line 2:"), "{err}");
    assert_eq!(render_mermaid("graph TD\na[\"x)\"] --> b").unwrap(), "```mermaid\ngraph TD\na[\"x)\"] --> b\n```");
}

fn suggestion(kind: SuggestionKind, text: &str) -> Suggestion {
    Suggestion { target_node_id: None, with_node_id: None, kind, text: text.into() }
}

fn digest(doc: &str, suggestions: Vec<Suggestion>) -> Digest {
    Digest { digest_id: format!("dg-{doc}"), doc_id: doc.into(), summary: "s".into(), suggestions }
}

#[test]
fn consolidate_dedupes_and_is_idempotent() {
    let digests = vec![
        digest("d1", vec![suggestion(SuggestionKind::Add, "Benchmark datasets for evaluation")]),
        digest("d3", vec![
            suggestion(SuggestionKind::Add, "benchmark datasets for evaluation."),
            suggestion(SuggestionKind::Add, "Open problems"),
        ]),
    ];
    let s = skeleton();
    let t = tree();
    let p = consolidate(&digests, &s, &t);
    assert_eq!(p.directives.len(), 2);
    assert_eq!(p.directives[0].supporting_doc_ids, vec!["d1".to_string(), "d3".to_string()]);
    assert_eq!(p.directives[1].supporting_doc_ids, vec!["d3".to_string()]);
    // cited d1 plus supporting d1, d3 out of three leaves
    assert!((p.coverage_score - 2.0 / 3.0).abs() < 1e-12);

    let doubled: Vec<Digest> = digests.iter().chain(digests.iter()).cloned().collect();
    assert_eq!(consolidate(&doubled, &s, &t).directives, p.directives);
}

#[tokio::test]
async fn tool_results_carry_json_parts() {
    let h = handle("figure", &deps(FixtureIndex::embedded())).await;
    let out = h.call_tool("render_mermaid", json!({"spec": "graph TD\na-->b"})).await.unwrap();
    let raw: Value = serde_json::to_value(&out).unwrap();
    assert_eq!(raw["content"][0]["type"], "text");
}
