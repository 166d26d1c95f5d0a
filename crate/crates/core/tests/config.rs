mod common;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use surveyforge::agents::{AgentId, AutoApprove, RunOutcome};
use surveyforge::config::{Backend, Config, ConfigError};
use surveyforge::model::ScriptedModel;
use surveyforge::orchestra::stage_of;
use surveyforge::protocol::{serve_http, McpServer, Origin, ToolDescriptor, ToolResult};
use surveyforge::servers::FixtureIndex;

#[test]
fn missing_file_is_not_found() {
    match Config::load(Path::new("/definitely/not/here.json")) {
        Err(e @ ConfigError::NotFound(_)) => assert!(e.to_string().starts_with("config not found")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn limits_and_model_round_trip_through_a_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    std::fs::write(
        &path,
        r#"{"model": {"backend": "live", "model_name": "m"}, "limits": {"max_layers": 2, "min_gain": 0.05}}"#,
    )
    .unwrap();
    let cfg = Config::load(&path).unwrap();
    assert_eq!(cfg.model.backend, Backend::Live);
    assert_eq!(cfg.limits.max_layers, 2);
    assert_eq!(cfg.limits.max_planner_steps, Config::default().limits.max_planner_steps);
    assert!(Config::parse(r#"{"limits": {"max_layers": 0}}"#).is_err());
    assert!(Config::parse(r#"{"limits": {"filter_threshold": 1.5}}"#).is_err());
    assert!(Backend::parse("Scripted").is_ok());
    assert!(Backend::parse("oracle").is_err());
}

#[test]
fn transports_need_their_endpoints() {
    for raw in [
        r#"{"servers": [{"id": "x", "transport": "stdio"}]}"#,
        r#"{"servers": [{"id": "x", "transport": "http"}]}"#,
        r#"{"servers": [{"id": "x", "transport": "inprocess"}]}"#,
        r#"{"servers": [{"id": "a.b", "transport": "http", "url": "http://h"}]}"#,
        r#"{"servers": [{"id": "search", "transport": "inprocess"}, {"id": "search", "transport": "inprocess"}]}"#,
    ] {
        assert!(matches!(Config::parse(raw), Err(ConfigError::Invalid(_))), "{raw}");
    }
}

fn notes_server() -> McpServer {
    let lookup = |args: Value| async move { ToolResult::json(json!({"note": format!("noted {}", args["key"])})) };
    McpServer::builder("notes", "1")
        .tool(
            ToolDescriptor::new(
                "lookup",
                "Look up a note.",
                json!({"type": "object", "properties": {"key": {"type": "string"}}, "required": ["key"]}),
            ),
            lookup,
        )
        .build()
        .unwrap()
}

#[tokio::test]
async fn user_server_over_http_joins_one_agent() {
    let bound = serve_http(Arc::new(notes_server()), SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let raw = json!({
        "servers": [{"id": "notes", "transport": "http", "url": bound.url(), "origin": "user_customized"}],
        "bindings": {"skeleton": ["skeleton", "digest", "refine", "orchestra", "notes"]}
    });
    let cfg = Config::parse(&raw.to_string()).unwrap();
    let rt = common::runtime_with(cfg, Arc::new(ScriptedModel::new()), FixtureIndex::embedded()).await;
    let notes = rt.registry.children().iter().find(|c| c.server_id() == "notes").unwrap();
    assert_eq!(notes.origin(), Origin::UserCustomized);
    assert!(rt.registry.descriptor("notes.lookup").is_some());
    assert_eq!(stage_of("notes.lookup"), None);

    let mut s = common::session(rt, common::TOPIC, Arc::new(AutoApprove), None);
    assert!(s.bindings().authorize("skeleton", "notes.lookup"));
    assert!(!s.bindings().authorize("writing", "notes.lookup"));
    assert!(s.planner_tools().iter().any(|t| t.name == "notes.lookup"));

    let out = s.invoke(AgentId::Skeleton, "notes.lookup", json!({"key": "k"})).await.unwrap();
    assert_eq!(out.json_body().unwrap()["note"], "noted \"k\"");
    assert_eq!(s.state().history.last().unwrap().tool_name, "notes.lookup");
    assert_eq!(s.run(None).await.unwrap(), RunOutcome::Completed);
    bound.shutdown();
}
