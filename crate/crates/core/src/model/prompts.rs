//! Prompt template registry. Every LLM-backed step goes through one of
//! these templates; `{name}` placeholders must all be bound before a
//! request leaves the process.

use std::collections::BTreeMap;

pub mod ids {
    pub const CONSENSUS_QUESTION: &str = "consensus.question";
    pub const CONSENSUS_SUMMARIZE: &str = "consensus.summarize";
    pub const SEARCH_QUERIES: &str = "search.queries";
    pub const GROUP_LABEL: &str = "group.label";
    pub const SKELETON_INIT: &str = "skeleton.init";
    pub const SKELETON_REVISE: &str = "skeleton.revise";
    pub const DIGEST_SUMMARIZE: &str = "digest.summarize";
    pub const DIGEST_SUGGEST: &str = "digest.suggest";
    pub const ORCHESTRA_PLAN: &str = "orchestra.plan";
    pub const WRITING_SECTION: &str = "writing.section";

    pub const ALL: &[&str] = &[
        CONSENSUS_QUESTION,
        CONSENSUS_SUMMARIZE,
        SEARCH_QUERIES,
        GROUP_LABEL,
        SKELETON_INIT,
        SKELETON_REVISE,
        DIGEST_SUMMARIZE,
        DIGEST_SUGGEST,
        ORCHESTRA_PLAN,
        WRITING_SECTION,
    ];
}

pub struct Template {
    pub id: &'static str,
    pub body: &'static str,
}

pub const TEMPLATES: &[Template] = &[
    Template {
        id: ids::CONSENSUS_QUESTION,
        body: "You are helping a researcher scope a literature survey on \"{topic}\".\n\
Stated goals: {goals}\nConversation so far (JSON): {dialogue}\n\
Ask ONE short clarifying question that uncovers research perspectives the user has not yet stated.",
    },
    Template {
        id: ids::CONSENSUS_SUMMARIZE,
        body: "Summarize the agreed scope of a survey on \"{topic}\".\nStated goals: {goals}\n\
Conversation (JSON): {dialogue}\n\
Answer with a JSON object {\"goals\": string, \"perspectives\": [string], \"search_strategy\": string}. \
Copy each user-requested perspective verbatim.",
    },
    Template {
        id: ids::SEARCH_QUERIES,
        body: "Write 3 to 10 distinct web search queries for a survey on \"{topic}\".\n\
Agreed perspectives (JSON): {perspectives}\nConversation (JSON): {dialogue}\n\
At least one query must contain the topic verbatim and every perspective must appear in some query. \
Answer with a JSON array of strings.",
    },
    Template {
        id: ids::GROUP_LABEL,
        body: "These documents were clustered together for a survey on \"{topic}\".\nTitles: {titles}\n\
Distinctive shared terms (JSON): {terms}\n\
Name the group by its theme and its method. Answer with JSON {\"label\": string, \"rationale\": string}; \
the rationale must state the thematic relevance and the methodological similarity.",
    },
    Template {
        id: ids::SKELETON_INIT,
        body: "Draft a section-wise outline for a survey on \"{topic}\".\nResearch brief (JSON): {brief}\n\
Reference groups (JSON): {groups}\n\
Map the user's perspectives onto the groups. Answer with JSON {\"title\": string, \"sections\": \
[{\"heading\": string, \"intent\": string, \"group_refs\": [group_id]}]}, one section per distinct facet.",
    },
    Template {
        id: ids::SKELETON_REVISE,
        body: "A user reviewed the outline below and asked for changes.\nOutline (JSON, top-level sections \
numbered from 1): {skeleton}\nFeedback: {feedback}\n\
Translate the feedback into directives. Answer with JSON {\"directives\": [{\"kind\": \
\"add|merge|split|reorder|emphasize\", \"target_node_id\": string|null, \"with_node_id\": string|null, \
\"text\": string}]}.",
    },
    Template {
        id: ids::DIGEST_SUMMARIZE,
        body: "Summarize this reference in at most 150 words.\nTitle: {title}\nText: {body}",
    },
    Template {
        id: ids::DIGEST_SUGGEST,
        body: "Reference (JSON): {doc}\nCurrent outline (JSON): {skeleton}\n\
Explain how the reference aligns or conflicts with the outline as suggestions. Answer with JSON \
{\"suggestions\": [{\"kind\": \"add|merge|split|reorder|emphasize\", \"target_node_id\": string|null, \
\"with_node_id\": string|null, \"text\": string}]}.",
    },
    Template {
        id: ids::ORCHESTRA_PLAN,
        body: "You coordinate the construction of a survey skeleton.\nAvailable tools:\n{tools}\n\
Recent execution history (JSON): {history}\nCurrent context (JSON): {context}\n\
Pending user feedback: {feedback}\nPrevious answer problems: {validation_error}\n\
Choose the next tool sequence. Answer with ONE JSON object {\"steps\": [{\"tool_name\": string, \
\"args\": object, \"rationale\": string}], \"stop\": bool}. Use only tool names listed above.",
    },
    Template {
        id: ids::WRITING_SECTION,
        body: "Write the section \"{heading}\" of a survey on \"{topic}\".\nSection intent: {intent}\n\
Sources (JSON): {sources}\n\
Cite sources inline as [@doc_id] using only the ids listed. Do not include the heading.",
    },
];

pub fn template(id: &str) -> Option<&'static Template> {
    TEMPLATES.iter().find(|t| t.id == id)
}

/// Placeholder names in order of first appearance.
pub fn placeholders(body: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(len) = body[i + 1..].find('}') {
                let name = &body[i + 1..i + 1 + len];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    if !out.iter().any(|n| n == name) {
                        out.push(name.to_string());
                    }
                    i += len + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// Substitutes every placeholder, failing on the first unbound one.
pub fn render(body: &str, vars: &BTreeMap<String, String>) -> Result<String, String> {
    let names = placeholders(body);
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = names.iter().find(|n| tail.starts_with(&format!("{{{n}}}")));
        match hit {
            Some(name) => {
                out.push_str(vars.get(name).ok_or_else(|| name.clone())?);
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Startup check: the id list and the template table agree.
pub fn verify_registry() -> Result<(), String> {
    for id in ids::ALL {
        if template(id).is_none() {
            return Err(format!("template `{id}` referenced but not registered"));
        }
    }
    for t in TEMPLATES {
        if !ids::ALL.contains(&t.id) {
            return Err(format!("template `{}` registered but not listed", t.id));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_closed() {
        verify_registry().unwrap();
    }

    #[test]
    fn json_braces_are_not_placeholders() {
        assert!(placeholders(r#"{"steps": [], "stop": true}"#).is_empty());
        let t = template(ids::ORCHESTRA_PLAN).unwrap();
        assert_eq!(placeholders(t.body), vec!["tools", "history", "context", "feedback", "validation_error"]);
    }

    #[test]
    fn unbound_placeholder_is_reported() {
        let mut vars = BTreeMap::new();
        vars.insert("title".to_string(), "T".to_string());
        assert_eq!(render(template(ids::DIGEST_SUMMARIZE).unwrap().body, &vars), Err("body".to_string()));
    }

    #[test]
    fn every_literal_template_id_in_sources_is_registered() {
        // Scan the crate sources for template constant uses and make sure each name exists.
        let src = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
        let mut stack = vec![src];
        let consts: Vec<&str> = vec![
            "CONSENSUS_QUESTION", "CONSENSUS_SUMMARIZE", "SEARCH_QUERIES", "GROUP_LABEL", "SKELETON_INIT",
            "SKELETON_REVISE", "DIGEST_SUMMARIZE", "DIGEST_SUGGEST", "ORCHESTRA_PLAN", "WRITING_SECTION",
        ];
        assert_eq!(consts.len(), ids::ALL.len());
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let text = std::fs::read_to_string(&path).unwrap();
                for (i, _) in text.match_indices("ids::") {
                    let name: String = text[i + 5..]
                        .chars()
                        .take_while(|c| c.is_ascii_uppercase() || *c == '_')
                        .collect();
                    if !name.is_empty() && name != "ALL" {
                        assert!(consts.contains(&name.as_str()), "{} uses unknown template {name}", path.display());
                    }
                }
            }
        }
    }
}
