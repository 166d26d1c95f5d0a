//! One refinement layer: an intra-section pass followed by a cross-section
//! pass, applied transactionally.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use super::{bound, fail, finish, take, VERSION};
use crate::model::similarity;
use crate::protocol::{McpServer, ServeError, ToolDescriptor, ToolResult};
use crate::state::{
    skeleton_coverage, validate_skeleton, Directive, NodeKind, ReferenceTree, RefinementReport, RevisionPlan, Skeleton,
    SkeletonNode, SuggestionKind, MAX_DEPTH,
};

pub const HEADING_REDUNDANCY: f64 = 0.9;
pub const GROUP_OVERLAP: f64 = 0.5;
const HEADING_WORDS: usize = 8;

pub fn server() -> Result<McpServer, ServeError> {
    let step = |args: Value| async move { finish(step_args(&args)) };
    McpServer::builder("refine", VERSION)
        .tool(
            ToolDescriptor::new(
                "step",
                "Apply one refinement layer to the skeleton: an intra-section pass applying directives within each \
                 section's group context, then a cross-section pass that merges, reorders and removes redundant \
                 sections. Returns the new skeleton and a refinement report.",
                json!({
                    "type": "object",
                    "properties": {
                        "skeleton": bound("object", "skeleton", "Current skeleton."),
                        "plan": bound("object", "plan", "Revision plan to apply."),
                        "tree": bound("object", "tree", "Grouped reference tree."),
                        "layer_index": {"type": "integer", "minimum": 1, "x-state": "layer_index"}
                    },
                    "required": ["skeleton", "plan", "tree", "layer_index"]
                }),
            ),
            step,
        )
        .build()
}

fn step_args(args: &Value) -> Result<Value, ToolResult> {
    let skeleton: Skeleton = take(args, "skeleton")?;
    let plan: RevisionPlan = take(args, "plan")?;
    let tree: ReferenceTree = take(args, "tree")?;
    let layer_index: u32 = take(args, "layer_index")?;
    let (skeleton, report) = refine_layer(&skeleton, &plan, &tree, layer_index).map_err(fail)?;
    Ok(json!({"skeleton": skeleton, "report": report}))
}

struct Layer<'a> {
    s: Skeleton,
    tree: &'a ReferenceTree,
    changed: Vec<String>,
    skipped: Vec<String>,
    deferred: Vec<String>,
}

fn heading_key(h: &str) -> String {
    h.trim().to_lowercase()
}

fn heading_from(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().take(HEADING_WORDS).collect();
    let h = words.join(" ");
    let h = h.trim_end_matches(|c: char| !c.is_alphanumeric());
    let mut chars = h.chars();
    match chars.next() {
        Some(f) => f.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn push_unique(list: &mut Vec<String>, item: &str) -> bool {
    if list.iter().any(|x| x == item) {
        false
    } else {
        list.push(item.to_string());
        true
    }
}

fn group_overlap(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let sa: BTreeSet<&String> = a.iter().collect();
    let sb: BTreeSet<&String> = b.iter().collect();
    sa.intersection(&sb).count() as f64 / sa.len().min(sb.len()) as f64
}

/// Section pairs a cross-section pass must merge.
pub fn redundant(a: &SkeletonNode, b: &SkeletonNode) -> bool {
    a.kind == NodeKind::Content
        && b.kind == NodeKind::Content
        && similarity(&a.heading, &b.heading) >= HEADING_REDUNDANCY
        && group_overlap(&a.group_refs, &b.group_refs) >= GROUP_OVERLAP
}

/// Folds `b` into `a`, keeping every citation, group ref and child.
fn absorb(a: &mut SkeletonNode, b: SkeletonNode, heading: Option<String>) {
    if let Some(h) = heading {
        a.heading = h;
    }
    if !b.intent.is_empty() && !a.intent.contains(&b.intent) {
        a.intent = format!("{} {}", a.intent, b.intent);
    }
    for g in &b.group_refs {
        push_unique(&mut a.group_refs, g);
    }
    for d in &b.citation_slots {
        push_unique(&mut a.citation_slots, d);
    }
    for d in &b.attached_digests {
        push_unique(&mut a.attached_digests, d);
    }
    let mut taken: BTreeSet<String> = a.children.iter().map(|c| heading_key(&c.heading)).collect();
    for mut child in b.children {
        let base = child.heading.clone();
        let mut n = 2;
        while !taken.insert(heading_key(&child.heading)) {
            child.heading = format!("{base} ({n})");
            n += 1;
        }
        a.children.push(child);
    }
}

impl<'a> Layer<'a> {
    fn mark(&mut self, id: &str) {
        push_unique(&mut self.changed, id);
    }

    fn skip(&mut self, d: &Directive, why: &str) {
        let target = d.target_node_id.as_deref().unwrap_or("-");
        self.skipped.push(format!("{:?} {target}: {why}", d.kind).to_lowercase());
    }

    fn context(&self, node: &SkeletonNode) -> BTreeSet<String> {
        node.group_refs
            .iter()
            .filter_map(|g| self.tree.group(g))
            .flat_map(|g| g.member_ids.iter().cloned())
            .collect()
    }

    fn intra(&mut self, d: &Directive) {
        let id = d.target_node_id.as_deref().expect("intra-section directives are targeted");
        let Some(node) = self.s.node(id) else {
            return self.skip(d, "node no longer exists");
        };
        let context = self.context(node);
        let (inside, outside): (Vec<String>, Vec<String>) =
            d.supporting_doc_ids.iter().cloned().partition(|doc| context.contains(doc));
        self.deferred.extend(outside);
        let depth = self.s.depth_of(id).unwrap_or(1);
        match d.kind {
            SuggestionKind::Emphasize => {
                let node = self.s.node_mut(id).expect("checked above");
                let mut any = false;
                for doc in &inside {
                    any |= push_unique(&mut node.citation_slots, doc);
                }
                if any {
                    self.mark(id);
                }
            }
            SuggestionKind::Add => {
                let heading = heading_from(&d.text);
                if heading.is_empty() {
                    return self.skip(d, "empty heading");
                }
                let group_refs = node.group_refs.clone();
                let new_id = self.s.fresh_id();
                let mut fresh = SkeletonNode::new(new_id.clone(), heading.clone(), format!("Covers {}.", d.text.trim_end_matches('.')));
                fresh.group_refs = group_refs;
                fresh.citation_slots = inside.clone();
                let as_child = depth < MAX_DEPTH;
                let list: &mut Vec<SkeletonNode> = if as_child {
                    &mut self.s.node_mut(id).expect("checked above").children
                } else {
                    self.s.siblings_mut(id).expect("node exists").0
                };
                if let Some(existing) = list.iter_mut().find(|n| heading_key(&n.heading) == heading_key(&heading)) {
                    let existing_id = existing.node_id.clone();
                    let mut any = false;
                    for doc in &inside {
                        any |= push_unique(&mut existing.citation_slots, doc);
                    }
                    if any {
                        self.mark(&existing_id);
                    }
                    return;
                }
                if as_child {
                    list.push(fresh);
                } else {
                    let pos = list.iter().position(|n| n.node_id == id).map_or(list.len(), |p| p + 1);
                    list.insert(pos, fresh);
                }
                self.mark(&new_id);
            }
            SuggestionKind::Split => {
                if depth >= MAX_DEPTH {
                    return self.skip(d, "already at maximum depth");
                }
                if !node.children.is_empty() {
                    return self.skip(d, "already subdivided");
                }
                let heading = node.heading.clone();
                let groups: Vec<(String, String, BTreeSet<String>)> = node
                    .group_refs
                    .iter()
                    .filter_map(|g| self.tree.group(g))
                    .map(|g| (g.group_id.clone(), g.label.clone(), g.member_ids.iter().cloned().collect()))
                    .collect();
                let mut citations = node.citation_slots.clone();
                for doc in &inside {
                    push_unique(&mut citations, doc);
                }
                let mut parts: Vec<(String, Vec<String>, Vec<String>)> = Vec::new();
                if groups.len() >= 2 {
                    for (gid, label, members) in &groups {
                        let cited: Vec<String> = citations.iter().filter(|c| members.contains(*c)).cloned().collect();
                        parts.push((label.clone(), vec![gid.clone()], cited));
                    }
                } else if citations.len() >= 2 {
                    let half = citations.len().div_ceil(2);
                    let refs = node.group_refs.clone();
                    parts.push((format!("{heading}: Foundations"), refs.clone(), citations[..half].to_vec()));
                    parts.push((format!("{heading}: Advances"), refs, citations[half..].to_vec()));
                } else {
                    return self.skip(d, "nothing to split");
                }
                let moved: BTreeSet<String> = parts.iter().flat_map(|p| p.2.iter().cloned()).collect();
                let mut children = Vec::new();
                let mut taken = BTreeSet::new();
                for (h, refs, cited) in parts {
                    let mut h = h;
                    let base = h.clone();
                    let mut n = 2;
                    while !taken.insert(heading_key(&h)) {
                        h = format!("{base} ({n})");
                        n += 1;
                    }
                    let cid = self.s.fresh_id();
                    let mut child = SkeletonNode::new(cid.clone(), h.clone(), format!("Covers {} within {heading}.", h.to_lowercase()));
                    child.group_refs = refs;
                    child.citation_slots = cited;
                    children.push(child);
                    self.mark(&cid);
                }
                let node = self.s.node_mut(id).expect("checked above");
                node.citation_slots = citations.into_iter().filter(|c| !moved.contains(c)).collect();
                node.children = children;
                self.mark(id);
            }
            SuggestionKind::Merge | SuggestionKind::Reorder => unreachable!("cross-section kinds"),
        }
    }

    fn cross(&mut self, d: &Directive) {
        match d.kind {
            SuggestionKind::Merge | SuggestionKind::Reorder => {
                let (Some(a), Some(b)) = (d.target_node_id.as_deref(), d.with_node_id.as_deref()) else {
                    return self.skip(d, "needs two nodes");
                };
                if a == b {
                    return self.skip(d, "same node twice");
                }
                let Some((list, ia)) = self.s.siblings_mut(a) else {
                    return self.skip(d, "node no longer exists");
                };
                let Some(ib) = list.iter().position(|n| n.node_id == b) else {
                    return self.skip(d, "nodes are not siblings");
                };
                if list[ia].kind != NodeKind::Content || list[ib].kind != NodeKind::Content {
                    return self.skip(d, "only content sections move");
                }
                if d.kind == SuggestionKind::Reorder {
                    list.swap(ia, ib);
                } else {
                    let heading = format!("{} and {}", list[ia].heading, list[ib].heading);
                    let clash = list
                        .iter()
                        .enumerate()
                        .any(|(i, n)| i != ia && i != ib && heading_key(&n.heading) == heading_key(&heading));
                    let merged = list.remove(ib);
                    let ia = if ib < ia { ia - 1 } else { ia };
                    absorb(&mut list[ia], merged, (!clash).then_some(heading));
                }
                self.mark(a);
                self.mark(b);
            }
            SuggestionKind::Add => {
                let heading = heading_from(&d.text);
                if heading.is_empty() {
                    return self.skip(d, "empty heading");
                }
                let mut group_refs: Vec<String> = Vec::new();
                for doc in &d.supporting_doc_ids {
                    if let Some(g) = self.tree.group_of(doc) {
                        push_unique(&mut group_refs, &g.group_id);
                    }
                }
                if group_refs.is_empty() {
                    return self.skip(d, "no supporting group");
                }
                if let Some(existing) =
                    self.s.sections.iter_mut().find(|n| heading_key(&n.heading) == heading_key(&heading))
                {
                    let existing_id = existing.node_id.clone();
                    let mut any = false;
                    for doc in &d.supporting_doc_ids {
                        any |= push_unique(&mut existing.citation_slots, doc);
                    }
                    if any {
                        self.mark(&existing_id);
                    }
                    return;
                }
                let new_id = self.s.fresh_id();
                let mut fresh = SkeletonNode::new(new_id.clone(), heading, format!("Covers {}.", d.text.trim_end_matches('.')));
                fresh.group_refs = group_refs;
                fresh.citation_slots = d.supporting_doc_ids.clone();
                let pos = self
                    .s
                    .sections
                    .iter()
                    .position(|n| n.kind == NodeKind::Conclusion)
                    .unwrap_or(self.s.sections.len());
                self.s.sections.insert(pos, fresh);
                self.mark(&new_id);
            }
            SuggestionKind::Emphasize | SuggestionKind::Split => self.skip(d, "needs a target node"),
        }
    }

    /// Sends documents that fell outside their directive's section to the
    /// first section covering their group.
    fn route_deferred(&mut self) {
        let cited: BTreeSet<String> = self.s.citations().into_iter().collect();
        let mut seen = BTreeSet::new();
        let pending: Vec<String> =
            std::mem::take(&mut self.deferred).into_iter().filter(|d| !cited.contains(d) && seen.insert(d.clone())).collect();
        for doc in pending {
            let Some(group) = self.tree.group_of(&doc).map(|g| g.group_id.clone()) else {
                self.skipped.push(format!("route {doc}: not in the reference tree"));
                continue;
            };
            let target = self
                .s
                .walk()
                .into_iter()
                .find(|(_, n)| n.kind == NodeKind::Content && n.group_refs.contains(&group))
                .map(|(_, n)| n.node_id.clone());
            match target {
                Some(id) => {
                    push_unique(&mut self.s.node_mut(&id).expect("found in walk").citation_slots, &doc);
                    self.mark(&id);
                }
                None => self.skipped.push(format!("route {doc}: no section covers group {group}")),
            }
        }
    }

    fn dedupe_siblings(list: &mut Vec<SkeletonNode>, changed: &mut Vec<String>) {
        'scan: loop {
            for i in 0..list.len() {
                for j in i + 1..list.len() {
                    if redundant(&list[i], &list[j]) {
                        let gone = list.remove(j);
                        push_unique(changed, &list[i].node_id.clone());
                        push_unique(changed, &gone.node_id);
                        absorb(&mut list[i], gone, None);
                        continue 'scan;
                    }
                }
            }
            break;
        }
        for n in list.iter_mut() {
            Self::dedupe_siblings(&mut n.children, changed);
        }
    }
}

/// Applies one layer. Fails without side effects if a directive cites a
/// document outside the tree or the result would break a skeleton invariant.
pub fn refine_layer(
    skeleton: &Skeleton,
    plan: &RevisionPlan,
    tree: &ReferenceTree,
    layer_index: u32,
) -> Result<(Skeleton, RefinementReport), String> {
    for d in &plan.directives {
        if let Some(doc) = d.supporting_doc_ids.iter().find(|doc| !tree.has_doc(doc)) {
            return Err(format!("directive `{}` would cite {doc}, which is not in the reference tree", d.text));
        }
    }
    let mut ordered: Vec<&Directive> = plan.directives.iter().collect();
    ordered.sort_by_key(|d| d.kind.application_rank());

    let mut layer = Layer { s: skeleton.clone(), tree, changed: Vec::new(), skipped: Vec::new(), deferred: Vec::new() };
    let is_intra = |d: &Directive| d.target_node_id.is_some() && !matches!(d.kind, SuggestionKind::Merge | SuggestionKind::Reorder);
    for d in ordered.iter().filter(|d| is_intra(d)) {
        layer.intra(d);
    }
    for d in ordered.iter().filter(|d| !is_intra(d)) {
        layer.cross(d);
    }
    layer.route_deferred();
    Layer::dedupe_siblings(&mut layer.s.sections, &mut layer.changed);

    let Layer { mut s, changed, skipped, .. } = layer;
    let before: BTreeSet<String> = skeleton.citations().into_iter().collect();
    let after: BTreeSet<String> = s.citations().into_iter().collect();
    if let Some(lost) = before.difference(&after).next() {
        return Err(format!("refinement would orphan citation {lost}"));
    }
    let violations = validate_skeleton(&s, tree);
    if !violations.is_empty() {
        let listed: Vec<String> = violations.iter().map(|v| format!("{}:{:?}", v.node_id, v.rule)).collect();
        return Err(format!("refinement would break the skeleton: {}", listed.join(", ")));
    }
    if !changed.is_empty() {
        s.version = skeleton.version + 1;
    }
    let report = RefinementReport {
        layer_index,
        skeleton_before_version: skeleton.version,
        skeleton_after_version: s.version,
        coverage_before: skeleton_coverage(skeleton, tree),
        coverage_after: skeleton_coverage(&s, tree),
        changed_node_ids: changed,
        skipped,
    };
    Ok((s, report))
}
