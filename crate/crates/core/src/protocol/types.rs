use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One tool exposed by a server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    #[serde(rename = "inputSchema")]
    pub input_schema: Value,
}

impl ToolDescriptor {
    pub fn new(name: impl Into<String>, description: impl Into<String>, input_schema: Value) -> Self {
        Self { name: name.into(), description: description.into(), input_schema }
    }

    /// Checks the descriptor invariants, returning the first problem found.
    pub fn check(&self) -> Result<(), String> {
        if !valid_tool_name(&self.name) {
            return Err(format!("tool name `{}` must match [a-z][a-z0-9_.-]*", self.name));
        }
        if self.description.trim().is_empty() {
            return Err(format!("tool `{}` has an empty description", self.name));
        }
        if self.input_schema.get("type").and_then(Value::as_str) != Some("object") {
            return Err(format!("tool `{}` input schema must describe an object", self.name));
        }
        Ok(())
    }
}

pub fn valid_tool_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '_' | '.' | '-'))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    Text { text: String },
    Json { json: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub content: Vec<ContentPart>,
    #[serde(rename = "isError", default)]
    pub is_error: bool,
}

impl ToolResult {
    pub fn text(text: impl Into<String>) -> Self {
        Self { content: vec![ContentPart::Text { text: text.into() }], is_error: false }
    }

    pub fn json(json: Value) -> Self {
        Self { content: vec![ContentPart::Json { json }], is_error: false }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self { content: vec![ContentPart::Text { text: message.into() }], is_error: true }
    }

    /// First JSON part, if any.
    pub fn json_body(&self) -> Option<&Value> {
        self.content.iter().find_map(|p| match p {
            ContentPart::Json { json } => Some(json),
            _ => None,
        })
    }

    /// Concatenated text parts.
    pub fn text_body(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Short description of the result for logs and history entries.
    pub fn headline(&self) -> String {
        match self.content.first() {
            Some(ContentPart::Text { text }) => text.clone(),
            Some(ContentPart::Json { json }) => summarize_json(json),
            None => String::new(),
        }
    }
}

fn summarize_json(json: &Value) -> String {
    match json {
        Value::Object(map) => {
            let parts: Vec<String> = map
                .iter()
                .map(|(k, v)| match v {
                    Value::Array(a) => format!("{k}: {} items", a.len()),
                    Value::Object(_) => format!("{k}: object"),
                    Value::String(s) => format!("{k}: {}", crate::text::truncate_words(s, 8)),
                    other => format!("{k}: {other}"),
                })
                .collect();
            parts.join("; ")
        }
        Value::Array(a) => format!("{} items", a.len()),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Native,
    UserCustomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub name: String,
    pub version: String,
}
