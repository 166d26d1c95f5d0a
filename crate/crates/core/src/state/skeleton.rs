use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ReferenceTree;

/// Section / subsection / sub-subsection.
pub const MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    #[default]
    Content,
    Introduction,
    Conclusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub node_id: String,
    pub heading: String,
    pub intent: String,
    #[serde(default)]
    pub kind: NodeKind,
    #[serde(default)]
    pub group_refs: Vec<String>,
    #[serde(default)]
    pub citation_slots: Vec<String>,
    #[serde(default)]
    pub attached_digests: Vec<String>,
    #[serde(default)]
    pub children: Vec<SkeletonNode>,
}

impl SkeletonNode {
    pub fn new(node_id: impl Into<String>, heading: impl Into<String>, intent: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            heading: heading.into(),
            intent: intent.into(),
            kind: NodeKind::Content,
            group_refs: Vec::new(),
            citation_slots: Vec::new(),
            attached_digests: Vec::new(),
            children: Vec::new(),
        }
    }

    fn visit<'a>(&'a self, depth: usize, out: &mut Vec<(usize, &'a SkeletonNode)>) {
        out.push((depth, self));
        for c in &self.children {
            c.visit(depth + 1, out);
        }
    }
}

/// The survey outline; `version` increases on every mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub title: String,
    pub sections: Vec<SkeletonNode>,
    pub version: u64,
    /// Counter for allocating fresh node ids.
    #[serde(default)]
    pub next_node: u64,
}

impl Skeleton {
    pub fn new(title: impl Into<String>) -> Self {
        Self { title: title.into(), sections: Vec::new(), version: 1, next_node: 1 }
    }

    pub fn fresh_id(&mut self) -> String {
        let id = format!("n{}", self.next_node);
        self.next_node += 1;
        id
    }

    /// Depth-first (pre-order) walk with 1-based depths.
    pub fn walk(&self) -> Vec<(usize, &SkeletonNode)> {
        let mut out = Vec::new();
        for s in &self.sections {
            s.visit(1, &mut out);
        }
        out
    }

    pub fn node(&self, node_id: &str) -> Option<&SkeletonNode> {
        self.walk().into_iter().map(|(_, n)| n).find(|n| n.node_id == node_id)
    }

    pub fn node_mut(&mut self, node_id: &str) -> Option<&mut SkeletonNode> {
        fn find<'a>(nodes: &'a mut [SkeletonNode], id: &str) -> Option<&'a mut SkeletonNode> {
            for n in nodes {
                if n.node_id == id {
                    return Some(n);
                }
                if let Some(hit) = find(&mut n.children, id) {
                    return Some(hit);
                }
            }
            None
        }
        find(&mut self.sections, node_id)
    }

    pub fn depth_of(&self, node_id: &str) -> Option<usize> {
        self.walk().into_iter().find(|(_, n)| n.node_id == node_id).map(|(d, _)| d)
    }

    /// Mutable sibling list containing `node_id`, with its index.
    pub fn siblings_mut(&mut self, node_id: &str) -> Option<(&mut Vec<SkeletonNode>, usize)> {
        fn find<'a>(list: &'a mut Vec<SkeletonNode>, id: &str) -> Option<(&'a mut Vec<SkeletonNode>, usize)> {
            if let Some(i) = list.iter().position(|n| n.node_id == id) {
                return Some((list, i));
            }
            for n in list.iter_mut() {
                if let Some(hit) = find(&mut n.children, id) {
                    return Some(hit);
                }
            }
            None
        }
        find(&mut self.sections, node_id)
    }

    /// Every cited document id, deduplicated, in walk order.
    pub fn citations(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.walk()
            .into_iter()
            .flat_map(|(_, n)| n.citation_slots.iter())
            .filter(|d| seen.insert(d.as_str()))
            .cloned()
            .collect()
    }

    pub fn content_sections(&self) -> impl Iterator<Item = &SkeletonNode> {
        self.sections.iter().filter(|s| s.kind == NodeKind::Content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyHeading,
    DuplicateNodeId,
    DuplicateSiblingHeading,
    DepthExceeded,
    UnresolvedGroupRef,
    UnresolvedCitation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord, Hash)]
pub struct Violation {
    pub node_id: String,
    pub rule: Rule,
}

fn heading_key(heading: &str) -> String {
    heading.trim().to_lowercase()
}

/// Checks the skeleton invariants against the reference tree. Total: returns
/// one violation per (node, rule) broken, in walk order.
pub fn validate_skeleton(skeleton: &Skeleton, tree: &ReferenceTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    check_siblings(&skeleton.sections, 1, tree, &mut ids, &mut out);
    out
}

fn check_siblings(
    nodes: &[SkeletonNode],
    depth: usize,
    tree: &ReferenceTree,
    ids: &mut HashSet<String>,
    out: &mut Vec<Violation>,
) {
    let mut headings = HashSet::new();
    for n in nodes {
        let mut flag = |rule| out.push(Violation { node_id: n.node_id.clone(), rule });
        if n.heading.trim().is_empty() {
            flag(Rule::EmptyHeading);
        }
        if !ids.insert(n.node_id.clone()) {
            flag(Rule::DuplicateNodeId);
        }
        if !headings.insert(heading_key(&n.heading)) {
            flag(Rule::DuplicateSiblingHeading);
        }
        if depth > MAX_DEPTH {
            flag(Rule::DepthExceeded);
        }
        if n.group_refs.iter().any(|g| !tree.has_group(g)) {
            flag(Rule::UnresolvedGroupRef);
        }
        if n.citation_slots.iter().any(|d| !tree.has_doc(d)) {
            flag(Rule::UnresolvedCitation);
        }
        check_siblings(&n.children, depth + 1, tree, ids, out);
    }
}
