use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ReferenceTree, Skeleton};

pub const SUMMARY_WORD_CAP: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionKind {
    Add,
    Merge,
    Split,
    Reorder,
    Emphasize,
}

impl SuggestionKind {
    /// Structural kinds first, then additions, then emphasis.
    pub fn application_rank(self) -> u8 {
        match self {
            SuggestionKind::Split | SuggestionKind::Merge | SuggestionKind::Reorder => 0,
            SuggestionKind::Add => 1,
            SuggestionKind::Emphasize => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_node_id: Option<String>,
    /// Second node for `merge` and `reorder`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_node_id: Option<String>,
    pub kind: SuggestionKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digest {
    pub digest_id: String,
    pub doc_id: String,
    pub summary: String,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub kind: SuggestionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_node_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_node_id: Option<String>,
    pub text: String,
    pub supporting_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionPlan {
    pub plan_id: String,
    pub directives: Vec<Directive>,
    pub coverage_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub layer_index: u32,
    pub skeleton_before_version: u64,
    pub skeleton_after_version: u64,
    pub coverage_before: f64,
    pub coverage_after: f64,
    pub changed_node_ids: Vec<String>,
    #[serde(default)]
    pub skipped: Vec<String>,
}

impl RefinementReport {
    pub fn gain(&self) -> f64 {
        self.coverage_after - self.coverage_before
    }
}

fn fraction(covered: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    }
}

/// Fraction of tree documents cited somewhere in the skeleton.
pub fn skeleton_coverage(skeleton: &Skeleton, tree: &ReferenceTree) -> f64 {
    let cited: BTreeSet<String> = skeleton.citations().into_iter().filter(|d| tree.has_doc(d)).collect();
    fraction(cited.len(), tree.leaf_count())
}

/// Fraction of tree documents referenced by a directive or a citation slot.
pub fn plan_coverage(directives: &[Directive], skeleton: &Skeleton, tree: &ReferenceTree) -> f64 {
    let mut covered: BTreeSet<String> = skeleton.citations().into_iter().collect();
    covered.extend(directives.iter().flat_map(|d| d.supporting_doc_ids.iter().cloned()));
    let covered = covered.into_iter().filter(|d| tree.has_doc(d)).count();
    fraction(covered, tree.leaf_count())
}
