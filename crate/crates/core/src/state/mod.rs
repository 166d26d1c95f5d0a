//! Shared domain model: corpus, grouped reference tree, skeleton, digests,
//! revision plans, execution history and whole-pipeline snapshots.

mod checkpoint;
mod history;
mod revision;
mod skeleton;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub use checkpoint::{restore, snapshot, Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use history::{ExecutionHistory, HistoryEntry, SUMMARY_WORD_LIMIT};
pub use revision::{
    plan_coverage, skeleton_coverage, Digest, Directive, RefinementReport, RevisionPlan, Suggestion, SuggestionKind,
    SUMMARY_WORD_CAP,
};
pub use skeleton::{validate_skeleton, NodeKind, Rule, Skeleton, SkeletonNode, Violation, MAX_DEPTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("document {doc_id} appears in groups {first} and {second}")]
    DuplicateMembership { doc_id: String, first: String, second: String },
    #[error("group {0} references a document outside the corpus")]
    UnknownMember(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("illegal stage change from {from:?} to {to:?}")]
    IllegalStage { from: Stage, to: Stage },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DocSource {
    Url { url: String },
    Upload { filename: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceDocument {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub source: DocSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_query: Option<String>,
}

/// Content-derived id: the first 16 hex digits of SHA-256 over the
/// whitespace-normalized title and body.
pub fn doc_id_for(title: &str, body: &str) -> String {
    let canonical = format!("{}\u{1f}{}", text::squash_whitespace(title), text::squash_whitespace(body));
    text::sha256_hex(canonical.as_bytes())[..16].to_string()
}

impl ReferenceDocument {
    pub fn new(title: impl Into<String>, body: impl Into<String>, source: DocSource) -> Self {
        let title = title.into();
        let body = body.into();
        Self { doc_id: doc_id_for(&title, &body), title, body, source, retrieved_query: None }
    }

    pub fn upload(filename: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self::new(title, body, DocSource::Upload { filename: filename.into() })
    }

    /// Title and body joined, the text similarity is computed over.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceGroup {
    pub group_id: String,
    pub label: String,
    pub member_ids: Vec<String>,
    pub rationale: String,
}

pub const MISC_GROUP: &str = "misc";

/// Root (the topic) with one child per group and documents as leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceTree {
    pub topic: String,
    pub groups: Vec<ReferenceGroup>,
}

impl ReferenceTree {
    pub fn group(&self, group_id: &str) -> Option<&ReferenceGroup> {
        self.groups.iter().find(|g| g.group_id == group_id)
    }

    pub fn group_of(&self, doc_id: &str) -> Option<&ReferenceGroup> {
        self.groups.iter().find(|g| g.member_ids.iter().any(|m| m == doc_id))
    }

    pub fn has_group(&self, group_id: &str) -> bool {
        self.group(group_id).is_some()
    }

    pub fn has_doc(&self, doc_id: &str) -> bool {
        self.group_of(doc_id).is_some()
    }

    /// Leaves in tree order.
    pub fn doc_ids(&self) -> Vec<String> {
        self.groups.iter().flat_map(|g| g.member_ids.iter().cloned()).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.groups.iter().map(|g| g.member_ids.len()).sum()
    }

    /// Root + one node per group + one leaf per document.
    pub fn node_count(&self) -> usize {
        1 + self.groups.len() + self.leaf_count()
    }
}

/// Builds the grouped reference tree; documents no group claims land in a
/// `misc` group.
pub fn build_reference_tree(
    topic: &str,
    groups: &[ReferenceGroup],
    corpus: &[ReferenceDocument],
) -> Result<ReferenceTree, StateError> {
    let known: BTreeSet<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for g in groups {
        for m in &g.member_ids {
            if !known.contains(m.as_str()) {
                return Err(StateError::UnknownMember(g.group_id.clone()));
            }
            if let Some(first) = owner.insert(m, &g.group_id) {
                return Err(StateError::DuplicateMembership {
                    doc_id: m.clone(),
                    first: first.to_string(),
                    second: g.group_id.clone(),
                });
            }
        }
    }
    let mut out: Vec<ReferenceGroup> = groups.iter().filter(|g| !g.member_ids.is_empty()).cloned().collect();
    let ungrouped: Vec<String> = corpus
        .iter()
        .filter(|d| !owner.contains_key(d.doc_id.as_str()))
        .map(|d| d.doc_id.clone())
        .collect();
    if !ungrouped.is_empty() {
        match out.iter_mut().find(|g| g.group_id == MISC_GROUP) {
            Some(misc) => misc.member_ids.extend(ungrouped),
            None => out.push(ReferenceGroup {
                group_id: MISC_GROUP.into(),
                label: "Miscellaneous".into(),
                member_ids: ungrouped,
                rationale: "documents no topical group claimed".into(),
            }),
        }
    }
    Ok(ReferenceTree { topic: topic.to_string(), groups: out })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ResearchBrief {
    pub topic: String,
    #[serde(default)]
    pub goals: String,
    #[serde(default)]
    pub perspectives: Vec<String>,
    #[serde(default)]
    pub search_strategy: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    pub title: String,
    pub snippet: String,
    pub fetched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Consensus,
    Analysis,
    Skeletonizing,
    Writing,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub stage: Stage,
    pub text: String,
    pub consumed: bool,
}

/// Everything one session knows; the planner's context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PipelineState {
    pub session_id: String,
    pub stage: Stage,
    pub brief: ResearchBrief,
    pub dialogue: Vec<DialogueTurn>,
    pub consensus_reached: bool,
    pub uploads: Vec<ReferenceDocument>,
    pub queries: Vec<String>,
    pub search_results: Vec<SearchResult>,
    pub corpus: Vec<ReferenceDocument>,
    pub tree: Option<ReferenceTree>,
    pub skeleton: Option<Skeleton>,
    pub digests: Vec<Digest>,
    pub plan: Option<RevisionPlan>,
    pub reports: Vec<RefinementReport>,
    pub feedback: Vec<Feedback>,
    pub outline_rounds: u32,
    pub sections: BTreeMap<String, String>,
    pub figure: Option<String>,
    pub survey: Option<String>,
    pub history: ExecutionHistory,
}

impl PipelineState {
    pub fn new(session_id: impl Into<String>, topic: impl Into<String>, goals: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            brief: ResearchBrief { topic: topic.into(), goals: goals.into(), ..Default::default() },
            ..Default::default()
        }
    }

    /// Moves the stage forward; the only backward move allowed is re-entry
    /// into skeletonizing from writing.
    pub fn advance(&mut self, to: Stage) -> Result<(), StateError> {
        let reentry = self.stage == Stage::Writing && to == Stage::Skeletonizing;
        if to < self.stage && !reentry {
            return Err(StateError::IllegalStage { from: self.stage, to });
        }
        self.stage = to;
        Ok(())
    }

    pub fn doc(&self, doc_id: &str) -> Option<&ReferenceDocument> {
        self.corpus.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn pending_feedback(&self) -> Vec<&Feedback> {
        self.feedback.iter().filter(|f| !f.consumed).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize) -> Vec<ReferenceDocument> {
        (0..n).map(|i| ReferenceDocument::upload(format!("f{i}"), format!("t{i}"), format!("body {i}"))).collect()
    }

    fn group(id: &str, members: &[&ReferenceDocument]) -> ReferenceGroup {
        ReferenceGroup {
            group_id: id.into(),
            label: id.into(),
            member_ids: members.iter().map(|d| d.doc_id.clone()).collect(),
            rationale: "r".into(),
        }
    }

    #[test]
    fn doc_id_ignores_whitespace_layout() {
        assert_eq!(doc_id_for("A  title", "body\ntext"), doc_id_for("A title", "body text"));
        assert_ne!(doc_id_for("A title", "x"), doc_id_for("A title", "y"));
        assert_eq!(doc_id_for("t", "b").len(), 16);
    }

    #[test]
    fn one_group_of_three() {
        let c = docs(3);
        let tree = build_reference_tree("topic", &[group("g1", &[&c[0], &c[1], &c[2]])], &c).unwrap();
        assert_eq!(tree.groups.len(), 1);
        assert_eq!(tree.node_count(), 1 + 1 + 3);
    }

    #[test]
    fn ungrouped_docs_go_to_misc() {
        let c = docs(6);
        let groups = [group("g1", &[&c[0], &c[1], &c[2]]), group("g2", &[&c[3], &c[4]])];
        let tree = build_reference_tree("topic", &groups, &c).unwrap();
        // set difference oracle: corpus minus grouped members
        let grouped: BTreeSet<_> = groups.iter().flat_map(|g| g.member_ids.clone()).collect();
        let expected: Vec<_> = c.iter().map(|d| d.doc_id.clone()).filter(|id| !grouped.contains(id)).collect();
        let misc = tree.group(MISC_GROUP).unwrap();
        assert_eq!(misc.member_ids, expected);
        assert_eq!(misc.member_ids.len(), 1);
        assert_eq!(tree.leaf_count(), c.len());
    }

    #[test]
    fn shared_doc_is_rejected() {
        let c = docs(3);
        let groups = [group("g1", &[&c[0], &c[1]]), group("g2", &[&c[1], &c[2]])];
        assert!(matches!(
            build_reference_tree("t", &groups, &c),
            Err(StateError::DuplicateMembership { .. })
        ));
    }

    #[test]
    fn stage_only_moves_forward() {
        let mut s = PipelineState::new("s", "t", "");
        s.advance(Stage::Analysis).unwrap();
        assert!(s.advance(Stage::Consensus).is_err());
        s.advance(Stage::Writing).unwrap();
        s.advance(Stage::Skeletonizing).unwrap();
    }
}
