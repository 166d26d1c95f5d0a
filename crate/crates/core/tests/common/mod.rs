#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use surveyforge::agents::{AutoApprove, GateResponder, Runtime, Session, SessionStore};
use surveyforge::config::Config;
use surveyforge::model::{LanguageModel, ScriptedModel};
use surveyforge::servers::FixtureIndex;
use surveyforge::state::PipelineState;

pub const TOPIC: &str = "large language models";

pub async fn runtime_with(config: Config, model: Arc<dyn LanguageModel>, index: FixtureIndex) -> Runtime {
    Runtime::new(config, model, Arc::new(index)).await.expect("runtime")
}

pub async fn runtime() -> Runtime {
    runtime_with(Config::default(), Arc::new(ScriptedModel::new()), FixtureIndex::embedded()).await
}

pub fn session(rt: Runtime, topic: &str, gates: Arc<dyn GateResponder>, dir: Option<&Path>) -> Session {
    let store = dir.map(|d| SessionStore::create(d).expect("store"));
    Session::new(rt, PipelineState::new("test", topic, ""), gates, store).expect("session")
}

/// A completed headless run, optionally persisted to `dir`.
pub async fn headless(topic: &str, dir: Option<&Path>) -> Session {
    let mut s = session(runtime().await, topic, Arc::new(AutoApprove), dir);
    s.run(None).await.expect("headless run completes");
    s
}
