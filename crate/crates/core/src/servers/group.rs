//! Topical grouping of the reference corpus.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use super::{ask_json, bound, fail, finish, take, ServerDeps, VERSION};
use crate::model::prompts::ids;
use crate::model::{similarity, PromptRequest};
use crate::protocol::{opt_arg, McpServer, ServeError, ToolDescriptor, ToolResult};
use crate::state::{ReferenceDocument, ReferenceGroup, MISC_GROUP};
use crate::text;

pub const MERGE_THRESHOLD: f64 = 0.25;

pub fn server(deps: &ServerDeps) -> Result<McpServer, ServeError> {
    let d = deps.clone();
    let cluster = move |args: Value| {
        let d = d.clone();
        async move { finish(cluster_references(&d, &args).await) }
    };
    McpServer::builder("group", VERSION)
        .tool(
            ToolDescriptor::new(
                "cluster_references",
                "Cluster the reference documents into labelled topical groups by thematic relevance and \
                 methodological similarity. Documents that fit no group go to `misc`.",
                json!({
                    "type": "object",
                    "properties": {
                        "documents": {"type": "array", "items": {"type": "object"}, "x-state": "corpus"},
                        "topic": bound("string", "topic", "Survey topic."),
                        "target_groups": {"type": "integer", "minimum": 1}
                    },
                    "required": ["documents", "topic"]
                }),
            ),
            cluster,
        )
        .build()
}

/// Average-linkage agglomerative clustering over pairwise similarity.
///
/// Without a target, clusters merge while the best average link is at least
/// [`MERGE_THRESHOLD`]. With a target, merging continues until exactly that
/// many clusters remain. Returns clusters of input indices, ordered by their
/// smallest member.
pub fn agglomerate(texts: &[String], target: Option<usize>) -> Vec<Vec<usize>> {
    let n = texts.len();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = similarity(&texts[i], &texts[j]);
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let done = match target {
            Some(t) => clusters.len() <= t.max(1),
            None => false,
        };
        if done || clusters.len() < 2 {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let total: f64 = clusters[a].iter().flat_map(|&i| clusters[b].iter().map(move |&j| (i, j))).map(|(i, j)| sim[i][j]).sum();
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(s, _, _)| avg > s) {
                    best = Some((avg, a, b));
                }
            }
        }
        let (score, a, b) = best.expect("at least two clusters");
        if target.is_none() && score < MERGE_THRESHOLD {
            break;
        }
        let absorbed = clusters.remove(b);
        clusters[a].extend(absorbed);
        clusters[a].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Up to two terms frequent inside the cluster and rare outside it.
pub fn distinctive_terms(members: &[&ReferenceDocument], others: &[&ReferenceDocument]) -> Vec<String> {
    let df = |docs: &[&ReferenceDocument]| -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for d in docs {
            let set: BTreeSet<String> = text::content_tokens(&d.full_text()).into_iter().collect();
            for t in set {
                *out.entry(t).or_insert(0) += 1;
            }
        }
        out
    };
    let inside = df(members);
    let outside = df(others);
    let mut ranked: Vec<(f64, String)> = inside
        .into_iter()
        .map(|(t, n)| {
            let out = outside.get(&t).copied().unwrap_or(0) as f64 / others.len().max(1) as f64;
            (n as f64 / members.len() as f64 - out, t)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.into_iter().take(2).map(|(_, t)| t).collect()
}

async fn label(
    d: &ServerDeps,
    topic: &str,
    members: &[&ReferenceDocument],
    terms: &[String],
) -> Result<(String, String), ToolResult> {
    let titles: Vec<&str> = members.iter().map(|m| m.title.as_str()).collect();
    let req = PromptRequest::new(ids::GROUP_LABEL)
        .var("topic", topic)
        .json_var("titles", &titles)
        .json_var("terms", &terms);
    let reply = ask_json(d.model.as_ref(), req).await.map_err(fail)?;
    let label = reply["label"].as_str().map(text::squash_whitespace).filter(|l| !l.is_empty());
    let rationale = reply["rationale"].as_str().map(text::squash_whitespace).filter(|r| !r.is_empty());
    match (label, rationale) {
        (Some(l), Some(r)) => Ok((l, r)),
        _ => Err(fail("group.label completion lacks label or rationale")),
    }
}

async fn cluster_references(d: &ServerDeps, args: &Value) -> Result<Value, ToolResult> {
    let mut docs: Vec<ReferenceDocument> = take(args, "documents")?;
    let mut seen = BTreeSet::new();
    docs.retain(|d| seen.insert(d.doc_id.clone()));
    let topic: String = take(args, "topic")?;
    let target: Option<usize> = opt_arg(args, "target_groups")?;
    if docs.is_empty() {
        return Err(fail("empty corpus"));
    }
    let texts: Vec<String> = docs.iter().map(ReferenceDocument::full_text).collect();
    let clusters = agglomerate(&texts, target);

    let pool_singletons = target.is_none() && clusters.iter().any(|c| c.len() > 1);
    let (multi, singles): (Vec<Vec<usize>>, Vec<Vec<usize>>) =
        clusters.into_iter().partition(|c| c.len() > 1 || !pool_singletons);

    let mut groups = Vec::new();
    let mut used_labels: BTreeSet<String> = BTreeSet::new();
    for (k, cluster) in multi.iter().enumerate() {
        let members: Vec<&ReferenceDocument> = cluster.iter().map(|&i| &docs[i]).collect();
        let others: Vec<&ReferenceDocument> =
            (0..docs.len()).filter(|i| !cluster.contains(i)).map(|i| &docs[i]).collect();
        let terms = distinctive_terms(&members, &others);
        let (mut name, rationale) = label(d, &topic, &members, &terms).await?;
        if !used_labels.insert(name.to_lowercase()) {
            name = format!("{name} ({})", k + 1);
            used_labels.insert(name.to_lowercase());
        }
        groups.push(ReferenceGroup {
            group_id: format!("g{}", k + 1),
            label: name,
            member_ids: members.iter().map(|m| m.doc_id.clone()).collect(),
            rationale,
        });
    }
    let leftovers: Vec<String> = singles.into_iter().flatten().map(|i| docs[i].doc_id.clone()).collect();
    if !leftovers.is_empty() {
        groups.push(ReferenceGroup {
            group_id: MISC_GROUP.into(),
            label: "Miscellaneous".into(),
            member_ids: leftovers,
            rationale: "Documents with no close thematic or methodological neighbour in the corpus.".into(),
        });
    }
    Ok(json!({"groups": groups}))
}
