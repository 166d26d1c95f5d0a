//! Mermaid diagram rendering with a syntactic sanity check.

use serde_json::{json, Value};

use super::{fail, take, VERSION};
use crate::protocol::{McpServer, ServeError, ToolDescriptor, ToolResult};

pub const DIAGRAM_KINDS: &[&str] = &[
    "graph",
    "flowchart",
    "sequenceDiagram",
    "classDiagram",
    "stateDiagram",
    "stateDiagram-v2",
    "erDiagram",
    "gantt",
    "pie",
    "mindmap",
    "timeline",
    "journey",
    "gitGraph",
];

pub fn server() -> Result<McpServer, ServeError> {
    let render = |args: Value| async move {
        let spec: String = match take(&args, "spec") {
            Ok(s) => s,
            Err(e) => return e,
        };
        match render_mermaid(&spec) {
            Ok(block) => ToolResult::text(block),
            Err(e) => fail(e),
        }
    };
    McpServer::builder("figure", VERSION)
        .tool(
            ToolDescriptor::new(
                "render_mermaid",
                "Check a Mermaid diagram source (known diagram kind, balanced brackets) and return it as a fenced \
                 mermaid block.",
                json!({
                    "type": "object",
                    "properties": {"spec": {"type": "string"}},
                    "required": ["spec"]
                }),
            ),
            render,
        )
        .build()
}

/// Validates `spec` and wraps it in a fenced block. Errors name the
/// offending 1-based line.
pub fn render_mermaid(spec: &str) -> Result<String, String> {
    let spec = spec.trim_end();
    let Some((first_no, first)) = spec.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Err("empty diagram spec".into());
    };
    let kind = first.trim().split(|c: char| c.is_whitespace() || c == ';').next().unwrap_or_default();
    if !DIAGRAM_KINDS.contains(&kind) {
        return Err(format!("line {}: unknown diagram kind `{kind}`", first_no + 1));
    }
    check_brackets(spec)?;
    Ok(format!("```mermaid\n{spec}\n```"))
}

fn check_brackets(spec: &str) -> Result<(), String> {
    let mut stack: Vec<(char, usize)> = Vec::new();
    for (no, line) in spec.lines().enumerate() {
        let line_no = no + 1;
        let mut in_quote = false;
        for c in line.chars() {
            match c {
                '"' => in_quote = !in_quote,
                _ if in_quote => {}
                '(' | '[' | '{' => stack.push((c, line_no)),
                ')' | ']' | '}' => {
                    let want = match c {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    match stack.pop() {
                        Some((open, _)) if open == want => {}
                        Some((open, opened)) => {
                            return Err(format!("line {line_no}: `{c}` closes `{open}` opened on line {opened}"))
                        }
                        None => return Err(format!("line {line_no}: unmatched `{c}`")),
                    }
                }
                _ => {}
            }
        }
        if in_quote {
            return Err(format!("line {line_no}: unterminated string"));
        }
    }
    match stack.pop() {
        Some((open, line_no)) => Err(format!("line {line_no}: unclosed `{open}`")),
        None => Ok(()),
    }
}
