mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::json;
use surveyforge::agents::{
    cited_ids, replay, AgentError, AgentId, AutoApprove, GateKind, Registry, Resolution, RunOutcome, Runtime,
    ScriptedGates, Session, SessionStore,
};
use surveyforge::config::{default_bindings, Config};
use surveyforge::events::EventKind;
use surveyforge::model::prompts::ids;
use surveyforge::model::{FaultyModel, ScriptedModel};
use surveyforge::protocol::conformance::{FrameLog, RecordingConnection};
use surveyforge::protocol::{Origin, ServerHandle, TransportSpec, DEFAULT_CALL_TIMEOUT};
use surveyforge::servers::retriever::NoRetriever;
use surveyforge::servers::{self, FixtureIndex, IndexEntry, ServerDeps, NATIVE_SERVERS};
use surveyforge::state::{NodeKind, PipelineState, ReferenceDocument, Stage};

#[tokio::test]
async fn access_table_is_enforced_without_reaching_a_transport() {
    let log: FrameLog = Arc::new(Mutex::new(Vec::new()));
    let deps = ServerDeps::new(Arc::new(ScriptedModel::new()), Arc::new(FixtureIndex::embedded()));
    let mut handles = Vec::new();
    for id in NATIVE_SERVERS {
        let server = Arc::new(servers::build(id, &deps).unwrap().unwrap());
        let conn = RecordingConnection::new(*id, server, log.clone());
        let h = ServerHandle::new(*id, TransportSpec::InProcess, Origin::Native, Arc::new(conn), DEFAULT_CALL_TIMEOUT);
        h.initialize().await.unwrap();
        handles.push(h);
    }
    let registry = Registry::from_handles(handles).await.unwrap();
    let tools: Vec<String> = registry.tools().into_iter().map(|t| t.name).collect();
    let rt = Runtime::with_registry(Config::default(), registry, Arc::new(ScriptedModel::new()));
    let mut s = common::session(rt, common::TOPIC, Arc::new(AutoApprove), None);

    let table = default_bindings();
    let mut denied = 0;
    for agent in AgentId::ALL {
        for tool in &tools {
            let server = tool.split('.').next().unwrap();
            let allowed = table[agent.as_str()].iter().any(|s| s == server);
            assert_eq!(s.bindings().authorize(agent.as_str(), tool), allowed, "{agent:?} {tool}");
            if allowed {
                continue;
            }
            denied += 1;
            let frames = log.lock().len();
            let history = s.state().history.len();
            match s.invoke(agent, tool, json!({})).await {
                Err(AgentError::AccessDenied { .. }) => {}
                other => panic!("{agent:?} {tool}: {other:?}"),
            }
            assert_eq!(log.lock().len(), frames, "{agent:?} {tool} reached the transport");
            assert_eq!(s.state().history.len(), history);
        }
    }
    assert!(denied >= 20);
    assert!(!s.bindings().authorize("intruder", "search.retrieve"));
    assert!(!s.bindings().authorize("analysis", "search"));
    assert!(!s.bindings().authorize("analysis", "search."));
}

fn uploads() -> Vec<ReferenceDocument> {
    FixtureIndex::embedded()
        .entries()
        .iter()
        .take(6)
        .enumerate()
        .map(|(i, e)| ReferenceDocument::upload(format!("paper{i}.md"), e.title.clone(), e.body.clone()))
        .collect()
}

#[tokio::test]
async fn uploads_alone_build_the_tree() {
    let rt = common::runtime_with(Config::default(), Arc::new(ScriptedModel::new()), FixtureIndex::new(vec![])).await;
    let mut state = PipelineState::new("up", common::TOPIC, "");
    state.uploads = uploads();
    let mut s = Session::new(rt, state, Arc::new(AutoApprove), None).unwrap();
    assert_eq!(s.run(None).await.unwrap(), RunOutcome::Completed);
    let ids: BTreeSet<String> = uploads().into_iter().map(|d| d.doc_id).collect();
    let tree: BTreeSet<String> = s.state().tree.as_ref().unwrap().doc_ids().into_iter().collect();
    assert_eq!(tree, ids);
    let survey = s.state().survey.as_ref().unwrap();
    assert!(survey.contains("uploaded file paper"), "{survey}");
}

#[tokio::test]
async fn no_retriever_and_no_uploads_fails_cleanly() {
    let rt = Runtime::new(Config::default(), Arc::new(ScriptedModel::new()), Arc::new(NoRetriever)).await.unwrap();
    let mut s = common::session(rt, common::TOPIC, Arc::new(AutoApprove), None);
    assert!(matches!(s.run(None).await, Err(AgentError::RetrieverUnavailable(_))));
}

#[tokio::test]
async fn consensus_answers_become_perspectives_verbatim() {
    let answer = "Graph-based retrievers for source code";
    let gates = Arc::new(
        ScriptedGates::new()
            .then(GateKind::Consensus, Resolution::revise(answer))
            .then(GateKind::Consensus, Resolution::Approve),
    );
    let mut s = common::session(common::runtime().await, common::TOPIC, gates.clone(), None);
    s.run(Some(Stage::Consensus)).await.unwrap();
    assert!(s.state().brief.perspectives.iter().any(|p| p == answer), "{:?}", s.state().brief.perspectives);
    assert!(s.state().queries.is_empty());
    let consensus = gates.requests().iter().filter(|r| r.kind == GateKind::Consensus).count();
    assert_eq!(consensus, 2);
}

#[tokio::test]
async fn consensus_abort_abandons_the_session() {
    let gates = Arc::new(ScriptedGates::new().then(GateKind::Consensus, Resolution::Abort));
    let mut s = common::session(common::runtime().await, common::TOPIC, gates, None);
    assert!(matches!(s.run(None).await, Err(AgentError::ConsensusAbandoned)));
}

#[tokio::test]
async fn outline_merge_request_reduces_sections() {
    let gates = Arc::new(
        ScriptedGates::new()
            .then(GateKind::Outline, Resolution::revise("merge sections 2 and 3"))
            .then(GateKind::Outline, Resolution::Approve),
    );
    let mut s = common::session(common::runtime().await, common::TOPIC, gates.clone(), None);
    s.run(None).await.unwrap();
    let outlines: Vec<_> = gates.requests().into_iter().filter(|r| r.kind == GateKind::Outline).collect();
    assert_eq!(outlines.len(), 2);
    let count = |v: &serde_json::Value| v["skeleton"]["sections"].as_array().unwrap().len();
    assert_eq!(count(&outlines[1].payload), count(&outlines[0].payload) - 1);

    let first_gate = s.state().history.entries().iter().position(|e| e.tool_name == "gate.outline").unwrap();
    let after: Vec<&str> = s.state().history.entries()[first_gate..].iter().map(|e| e.tool_name.as_str()).collect();
    let revise = after.iter().position(|t| *t == "skeleton.revise").expect("feedback applied");
    assert!(after[revise..].contains(&"refine.step"), "{after:?}");
}

#[tokio::test]
async fn outline_regenerations_are_capped() {
    let mut gates = ScriptedGates::new();
    for _ in 0..6 {
        gates = gates.then(GateKind::Outline, Resolution::Regenerate);
    }
    let mut s = common::session(common::runtime().await, common::TOPIC, Arc::new(gates), None);
    match s.run(None).await {
        Err(AgentError::GateRejectedLimit { gate, limit }) => {
            assert_eq!(gate, "outline");
            assert_eq!(limit, 5);
        }
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn outline_abort_stops_before_writing() {
    let gates = Arc::new(ScriptedGates::new().then(GateKind::Outline, Resolution::Abort));
    let mut s = common::session(common::runtime().await, common::TOPIC, gates, None);
    assert!(matches!(s.run(None).await, Err(AgentError::GateAborted { .. })));
    assert!(s.state().survey.is_none());
}

#[tokio::test]
async fn early_planner_stop_still_yields_an_outline() {
    let model = Arc::new(FaultyModel::new(Arc::new(ScriptedModel::new())));
    model.enqueue(ids::ORCHESTRA_PLAN, r#"{"steps": [], "stop": true}"#);
    let rt = common::runtime_with(Config::default(), model, FixtureIndex::embedded()).await;
    let gates = Arc::new(ScriptedGates::new());
    let mut s = common::session(rt, common::TOPIC, gates.clone(), None);
    s.run(None).await.unwrap();
    assert!(gates.requests().iter().any(|r| r.kind == GateKind::Outline && !r.payload["skeleton"].is_null()));
    let tools: Vec<&str> = s.state().history.entries().iter().map(|e| e.tool_name.as_str()).collect();
    let init = tools.iter().position(|t| *t == "skeleton.init").unwrap();
    assert_eq!(tools[init - 1], "orchestra.plan_next");
    assert!(s.state().reports.is_empty());
}

#[tokio::test]
async fn planner_budget_is_enforced() {
    let mut config = Config::default();
    config.limits.max_planner_steps = 3;
    let rt = common::runtime_with(config, Arc::new(ScriptedModel::new()), FixtureIndex::embedded()).await;
    let mut s = common::session(rt, common::TOPIC, Arc::new(AutoApprove), None);
    let err = s.run(None).await.unwrap_err();
    assert!(matches!(err, AgentError::StepBudgetExhausted { budget: 3 }), "{err:?}");
    assert!(err.is_planning());
    assert_eq!(s.planner_steps(), 3);
}

#[tokio::test]
async fn unknown_citations_are_repaired_with_a_warning() {
    let model = Arc::new(FaultyModel::new(Arc::new(ScriptedModel::new())));
    model.rewrite(ids::WRITING_SECTION, |t| format!("{t} See also [@deadbeefdeadbeef] and [@not-a-doc]."));
    let rt = common::runtime_with(Config::default(), model, FixtureIndex::embedded()).await;
    let mut s = common::session(rt, common::TOPIC, Arc::new(AutoApprove), None);
    s.run(None).await.unwrap();
    let state = s.state();
    let warnings: Vec<_> =
        state.history.entries().iter().filter(|e| e.tool_name == "writing.citation_repair").collect();
    assert!(!warnings.is_empty());
    assert!(warnings.iter().all(|e| e.result_summary.starts_with("warning:")), "{warnings:?}");

    let survey = state.survey.as_ref().unwrap();
    let corpus: BTreeSet<&str> = state.corpus.iter().map(|d| d.doc_id.as_str()).collect();
    let cited = cited_ids(survey);
    assert!(!cited.is_empty());
    assert!(cited.iter().all(|c| corpus.contains(c.as_str())), "{cited:?}");
    let refs = survey.split("## References").nth(1).unwrap();
    assert_eq!(refs.lines().filter(|l| l.starts_with("- [")).count(), cited.len());
}

#[tokio::test]
async fn gates_open_in_stage_order_and_resolve_once() {
    let gates = Arc::new(ScriptedGates::new());
    let mut s = common::session(common::runtime().await, common::TOPIC, gates.clone(), None);
    s.run(None).await.unwrap();
    let kinds: Vec<GateKind> = gates.requests().iter().map(|r| r.kind).collect();
    assert_eq!(kinds, vec![GateKind::Consensus, GateKind::AnalysisQa, GateKind::Outline]);

    let events = s.events().snapshot();
    let mut open: Option<String> = None;
    for e in &events {
        match e.kind {
            EventKind::GateOpened => {
                assert!(open.is_none(), "two gates open at once");
                open = Some(e.payload["gate_id"].as_str().unwrap().to_string());
            }
            EventKind::GateResolved => {
                assert_eq!(open.take().as_deref(), e.payload["gate_id"].as_str());
            }
            _ => {}
        }
    }
    assert!(open.is_none());
    assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
    let stage_changes = events.iter().filter(|e| e.kind == EventKind::StageChanged).count();
    assert_eq!(stage_changes, 4);
}

#[tokio::test]
async fn refinement_converges_within_the_layer_cap() {
    let s = common::headless(common::TOPIC, None).await;
    let state = s.state();
    assert!(!state.reports.is_empty() && state.reports.len() <= 3);
    for w in state.reports.windows(2) {
        assert!(w[1].coverage_before >= w[0].coverage_before);
    }
    assert!(state.reports.iter().all(|r| r.coverage_after >= r.coverage_before));
    let tree = state.tree.as_ref().unwrap();
    let skeleton = state.skeleton.as_ref().unwrap();
    assert!(surveyforge::state::validate_skeleton(skeleton, tree).is_empty());
    assert!(state.reports.last().unwrap().coverage_after >= 0.9);
    assert_eq!(skeleton.sections.first().unwrap().kind, NodeKind::Introduction);
    assert_eq!(skeleton.sections.last().unwrap().kind, NodeKind::Conclusion);
}

fn read(dir: &std::path::Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[tokio::test]
async fn runs_are_byte_identical_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    common::headless(common::TOPIC, Some(&a)).await;
    common::headless(common::TOPIC, Some(&b)).await;
    for name in ["survey.md", "transcript.jsonl", "tree.json", "brief.json"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
    let report = replay(&a.join("transcript.jsonl")).unwrap();
    assert_eq!(report.entries, report.final_state.history.len());
    assert_eq!(report.final_state.survey.as_deref(), Some(read(&a, "survey.md").as_str()));
    assert!(report.checkpoints_checked >= 5);
}

#[tokio::test]
async fn tampered_transcript_is_reported_at_its_seq() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    common::headless(common::TOPIC, Some(&dir)).await;
    let path = dir.join("transcript.jsonl");
    let mut lines: Vec<serde_json::Value> =
        read(&dir, "transcript.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let target = lines[12]["seq"].as_u64().unwrap();
    lines[12]["result_summary"] = json!("something else happened");
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, body).unwrap();
    match replay(&path) {
        Err(AgentError::TranscriptMismatch { seq, .. }) => assert_eq!(seq, target),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn resume_after_each_stage_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let whole = tmp.path().join("whole");
    common::headless(common::TOPIC, Some(&whole)).await;
    for halt in [Stage::Consensus, Stage::Analysis, Stage::Skeletonizing, Stage::Writing] {
        let dir = tmp.path().join(format!("{halt:?}"));
        let mut s = common::session(common::runtime().await, common::TOPIC, Arc::new(AutoApprove), Some(&dir));
        let outcome = s.run(Some(halt)).await.unwrap();
        if halt != Stage::Writing {
            assert_eq!(outcome, RunOutcome::Halted(halt));
        }
        drop(s);
        // A torn write past the checkpoint must be discarded on resume.
        let mut t = std::fs::OpenOptions::new().append(true).open(dir.join("transcript.jsonl")).unwrap();
        std::io::Write::write_all(&mut t, b"{\"seq\": 99999, \"agent").unwrap();

        let mut resumed = Session::resume(common::runtime().await, SessionStore::open(&dir).unwrap(), Arc::new(AutoApprove)).unwrap();
        assert_eq!(resumed.run(None).await.unwrap(), RunOutcome::Completed);
        for name in ["survey.md", "transcript.jsonl"] {
            assert_eq!(read(&whole, name), read(&dir, name), "{name} after halting at {halt:?}");
        }
        replay(&dir.join("transcript.jsonl")).unwrap();
    }
}

#[tokio::test]
async fn corpus_entries_have_stable_ids() {
    let e = IndexEntry { url: "u".into(), title: "  A   Title ".into(), body: "Body text.".into() };
    let d = e.document();
    assert_eq!(d.doc_id.len(), 16);
    assert_eq!(d.doc_id, ReferenceDocument::upload("f", "A Title", "Body   text.").doc_id);
}
