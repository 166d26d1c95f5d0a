//! One JSON document configures servers, agent bindings, the model backend
//! and limits. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LanguageModel, LiveModel, LiveModelConfig, ScriptedModel};
use crate::orchestra::{DEFAULT_MAX_LAYERS, DEFAULT_MIN_GAIN, DEFAULT_STEP_BUDGET};
use crate::protocol::Origin;
use crate::servers::NATIVE_SERVERS;

pub const AGENTS: &[&str] = &["analysis", "skeleton", "writing"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Inprocess,
    Stdio,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub id: String,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default)]
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backend: Backend,
    pub base_url: Option<String>,
    pub model_name: Option<String>,
    /// Recorded completions for the scripted backend.
    pub fixtures: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub max_planner_steps: usize,
    pub max_layers: u32,
    pub min_gain: f64,
    pub consensus_turns: usize,
    pub gate_rejections: u32,
    pub retrieve_limit: usize,
    pub filter_threshold: f64,
    pub call_timeout_secs: u64,
    pub planner_full_toolset: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_planner_steps: DEFAULT_STEP_BUDGET,
            max_layers: DEFAULT_MAX_LAYERS,
            min_gain: DEFAULT_MIN_GAIN,
            consensus_turns: 8,
            gate_rejections: 5,
            retrieve_limit: 20,
            filter_threshold: 0.02,
            call_timeout_secs: 120,
            planner_full_toolset: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub servers: Vec<ServerConfig>,
    pub bindings: BTreeMap<String, Vec<String>>,
    pub model: ModelConfig,
    pub limits: Limits,
}

pub fn default_bindings() -> BTreeMap<String, Vec<String>> {
    let table: [(&str, &[&str]); 3] = [
        ("analysis", &["search", "group"]),
        ("skeleton", &["skeleton", "digest", "refine", "orchestra"]),
        ("writing", &["figure"]),
    ];
    table.iter().map(|(a, s)| (a.to_string(), s.iter().map(|x| x.to_string()).collect())).collect()
}

impl Default for Config {
    fn default() -> Self {
        Self {
            servers: NATIVE_SERVERS
                .iter()
                .map(|id| ServerConfig {
                    id: id.to_string(),
                    transport: TransportKind::Inprocess,
                    command: None,
                    url: None,
                    origin: Origin::Native,
                })
                .collect(),
            bindings: default_bindings(),
            model: ModelConfig::default(),
            limits: Limits::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|_| ConfigError::NotFound(path.display().to_string()))?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        let mut cfg: Config = serde_json::from_str(raw).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Native servers not listed are added in-process; agents not bound
    /// keep their default servers.
    fn fill_defaults(&mut self) {
        for id in NATIVE_SERVERS {
            if !self.servers.iter().any(|s| s.id == *id) {
                self.servers.push(ServerConfig {
                    id: id.to_string(),
                    transport: TransportKind::Inprocess,
                    command: None,
                    url: None,
                    origin: Origin::Native,
                });
            }
        }
        for (agent, servers) in default_bindings() {
            self.bindings.entry(agent).or_insert(servers);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.servers {
            if !seen.insert(s.id.as_str()) {
                return bad(format!("server `{}` declared twice", s.id));
            }
            if !crate::protocol::types::valid_tool_name(&s.id) || s.id.contains('.') {
                return bad(format!("server id `{}` is not a valid identifier", s.id));
            }
            match s.transport {
                TransportKind::Inprocess if !NATIVE_SERVERS.contains(&s.id.as_str()) => {
                    return bad(format!("server `{}` is not native and needs a stdio or http transport", s.id))
                }
                TransportKind::Stdio if s.command.as_ref().is_none_or(|c| c.is_empty()) => {
                    return bad(format!("server `{}` uses stdio but has no command", s.id))
                }
                TransportKind::Http if s.url.is_none() => {
                    return bad(format!("server `{}` uses http but has no url", s.id))
                }
                _ => {}
            }
        }
        for (agent, servers) in &self.bindings {
            if !AGENTS.contains(&agent.as_str()) {
                return bad(format!("unknown agent `{agent}` in bindings"));
            }
            if servers.is_empty() {
                return bad(format!("agent `{agent}` has no servers"));
            }
            if let Some(s) = servers.iter().find(|s| !seen.contains(s.as_str())) {
                return bad(format!("agent `{agent}` is bound to unknown server `{s}`"));
            }
        }
        let l = &self.limits;
        if l.max_planner_steps == 0 || l.max_layers == 0 || l.consensus_turns == 0 {
            return bad("limits must be positive".into());
        }
        if !(0.0..=1.0).contains(&l.filter_threshold) || l.min_gain < 0.0 {
            return bad("filter_threshold must lie in [0, 1] and min_gain must be non-negative".into());
        }
        Ok(())
    }
}

impl Backend {
    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "scripted" => Ok(Backend::Scripted),
            "live" => Ok(Backend::Live),
            other => Err(ConfigError::Invalid(format!("unknown backend `{other}` (expected scripted or live)"))),
        }
    }
}

impl Config {
    /// `SF_BACKEND` overrides the configured backend.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(b) = std::env::var("SF_BACKEND") {
            if !b.is_empty() {
                self.model.backend = Backend::parse(&b)?;
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Arc<dyn LanguageModel>, ConfigError> {
        match self.model.backend {
            Backend::Scripted => {
                let model = match &self.model.fixtures {
                    Some(path) => ScriptedModel::from_fixture_file(Path::new(path))
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                    None => ScriptedModel::new(),
                };
                Ok(Arc::new(model))
            }
            Backend::Live => {
                let mut cfg = LiveModelConfig::from_env();
                if let Some(url) = &self.model.base_url {
                    cfg.base_url = url.clone();
                }
                if let Some(name) = &self.model.model_name {
                    cfg.model_name = name.clone();
                }
                Ok(Arc::new(LiveModel::new(cfg)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = Config::parse("{}").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::parse(r#"{"limits": {"max_layer": 2}}"#), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse(r#"{"extra": 1}"#), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn bindings_must_resolve() {
        let err = Config::parse(r#"{"bindings": {"writing": ["nowhere"]}}"#).unwrap_err();
        assert!(err.to_string().contains("nowhere"));
        assert!(Config::parse(r#"{"bindings": {"editor": ["figure"]}}"#).is_err());
        assert!(Config::parse(r#"{"bindings": {"writing": []}}"#).is_err());
    }

    #[test]
    fn custom_server_joins_a_binding() {
        let cfg = Config::parse(
            r#"{"servers": [{"id": "notes", "transport": "stdio", "command": ["notes-server"], "origin": "user_customized"}],
                "bindings": {"skeleton": ["skeleton", "digest", "refine", "orchestra", "notes"]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.servers.len(), NATIVE_SERVERS.len() + 1);
        assert_eq!(cfg.bindings["analysis"], vec!["search", "group"]);
    }
}
