mod common;

use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use serde_json::json;
use surveyforge::agents::TranscriptLine;
use surveyforge::model::prompts::ids;
use surveyforge::model::{FaultyModel, ScriptedModel};
use surveyforge::orchestra::{
    parse_plan, plan_next, planning_context, stage_of, transition, validate_plan, ActionPlan, ExecutedStep,
    PlanStep, PlanViolation, PlannerLimits, TransitionError, MAX_REPROMPTS,
};
use surveyforge::protocol::{ToolDescriptor, ToolResult};
use surveyforge::state::{PipelineState, Stage};

/// Every (state before, step, result) triple from one headless run.
struct Recorded {
    steps: Vec<(PipelineState, ExecutedStep, ToolResult)>,
    tools: Vec<ToolDescriptor>,
}

fn recorded() -> &'static Recorded {
    static CELL: OnceLock<Recorded> = OnceLock::new();
    CELL.get_or_init(|| {
        tokio::runtime::Runtime::new().unwrap().block_on(async {
            let s = common::headless(common::TOPIC, None).await;
            let tools = s.planner_tools();
            let mut state = PipelineState::new("test", common::TOPIC, "");
            let mut steps = Vec::new();
            let mut group: Vec<&TranscriptLine> = Vec::new();
            for line in s.transcript() {
                group.push(line);
                let Some(result) = &line.result else { continue };
                let head = &group[group.len() - 1].entry;
                let step = ExecutedStep {
                    agent_id: head.agent_id.clone(),
                    tool_name: head.tool_name.clone(),
                    args: line.args.clone().unwrap_or_default(),
                    timestamp: head.timestamp,
                };
                let next = transition(&state, &step, result).unwrap();
                steps.push((state, step, result.clone()));
                state = next;
                group.clear();
            }
            assert_eq!(&state, s.state(), "replaying the transcript reproduces the final state");
            Recorded { steps, tools }
        })
    })
}

fn step(tool: &str, args: serde_json::Value) -> PlanStep {
    PlanStep { tool_name: tool.into(), args, rationale: String::new() }
}

#[test]
fn validate_plan_cases() {
    let tools = &recorded().tools;
    let names: Vec<&str> = tools.iter().map(|t| t.name.as_str()).collect();
    assert!(names.contains(&"refine.step"), "{names:?}");

    let ok = ActionPlan { steps: vec![step("refine.step", json!({}))], stop: false };
    assert!(validate_plan(&ok, tools).is_empty());
    assert!(validate_plan(&ActionPlan::stop(), tools).is_empty());
    assert_eq!(validate_plan(&ActionPlan { steps: vec![], stop: false }, tools), vec![PlanViolation::EmptyPlan]);

    let bad = ActionPlan {
        steps: vec![step("refine.step", json!({})), step("web.browse", json!({})), step("refine.step", json!({"layer_index": "one"}))],
        stop: false,
    };
    let v = validate_plan(&bad, tools);
    assert_eq!(v.len(), 2);
    assert_eq!(v[0], PlanViolation::UnknownTool { step: 2, tool: "web.browse".into() });
    assert!(matches!(&v[1], PlanViolation::SchemaViolation { step: 3, .. }));

    // Tools the planner may not pick are unknown to it even if registered elsewhere.
    let writing = ActionPlan { steps: vec![step("figure.render_mermaid", json!({"spec": "graph TD"}))], stop: false };
    assert!(matches!(validate_plan(&writing, tools)[..], [PlanViolation::UnknownTool { .. }]));
}

#[test]
fn parse_plan_tolerates_prose_and_rejects_garbage() {
    let plan = parse_plan("Here is the plan:\n{\"steps\": [{\"tool_name\": \"refine.step\"}], \"stop\": false}\nDone.").unwrap();
    assert_eq!(plan.steps[0].tool_name, "refine.step");
    assert_eq!(plan.steps[0].args, json!({}));
    assert!(matches!(parse_plan("no plan today"), Err(PlanViolation::Malformed { .. })));
    assert!(matches!(parse_plan("[1, 2]"), Err(PlanViolation::Malformed { .. })));
}

fn context_and_history() -> (serde_json::Value, Vec<surveyforge::state::HistoryEntry>) {
    let (state, _, _) = recorded()
        .steps
        .iter()
        .find(|(s, _, _)| s.stage == Stage::Skeletonizing)
        .expect("a skeletonizing state");
    let ctx = planning_context(state, &recorded().tools, PlannerLimits::default());
    (ctx, state.history.tail(20).to_vec())
}

#[tokio::test]
async fn plan_next_reprompts_after_an_invalid_answer() {
    let (ctx, history) = context_and_history();
    let model = FaultyModel::new(Arc::new(ScriptedModel::new()));
    model.enqueue(ids::ORCHESTRA_PLAN, "I think we should refine.");
    model.enqueue(ids::ORCHESTRA_PLAN, r#"{"steps": [{"tool_name": "nope.tool", "args": {}}]}"#);
    let out = plan_next(&model, &history, &ctx, &recorded().tools).await.unwrap();
    assert_eq!(out.attempts.len(), 3);
    assert_eq!(out.rejected().count(), 2);
    assert!(out.attempts[1].violations[0].contains("unknown tool `nope.tool`"));
    assert!(validate_plan(&out.plan, &recorded().tools).is_empty());
}

#[tokio::test]
async fn plan_next_gives_up_after_the_reprompt_limit() {
    let (ctx, history) = context_and_history();
    let model = FaultyModel::new(Arc::new(ScriptedModel::new()));
    for _ in 0..=MAX_REPROMPTS {
        model.enqueue(ids::ORCHESTRA_PLAN, "{\"steps\": 3}");
    }
    let err = plan_next(&model, &history, &ctx, &recorded().tools).await.unwrap_err();
    assert_eq!(err.attempts.len(), MAX_REPROMPTS + 1);
    assert!(err.attempts.iter().all(|a| !a.violations.is_empty()));
}

#[tokio::test]
async fn scripted_planner_is_valid_on_every_recorded_state() {
    let model = ScriptedModel::new();
    let tools = &recorded().tools;
    let mut consulted = 0;
    for (state, _, _) in &recorded().steps {
        let ctx = planning_context(state, tools, PlannerLimits::default());
        let out = plan_next(&model, state.history.tail(20), &ctx, tools).await.unwrap();
        assert_eq!(out.rejected().count(), 0);
        assert!(validate_plan(&out.plan, tools).is_empty());
        consulted += 1;
    }
    assert!(consulted >= 30);
}

#[test]
fn transition_rejects_tools_outside_their_stage() {
    let (state, _, _) = &recorded().steps[0];
    assert_eq!(state.stage, Stage::Consensus);
    let s = ExecutedStep { agent_id: "writing".into(), tool_name: "writing.assemble".into(), args: json!({}), timestamp: 0 };
    let err = transition(state, &s, &ToolResult::json(json!({"survey": "x"}))).unwrap_err();
    assert!(matches!(err, TransitionError::IllegalTransition { .. }));
}

#[test]
fn malformed_results_are_rejected() {
    let (state, step, _) = recorded().steps.iter().find(|(_, s, _)| s.tool_name == "search.retrieve").unwrap();
    let err = transition(state, step, &ToolResult::json(json!({"results": "not a list"}))).unwrap_err();
    assert!(matches!(err, TransitionError::MalformedResult { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn transition_is_pure(k in 0usize..1000, junk in "[a-z ]{0,40}", fail in any::<bool>()) {
        let steps = &recorded().steps;
        let (state, step, result) = &steps[k % steps.len()];
        let before = state.clone();
        let result = if fail { ToolResult::error(junk) } else { result.clone() };
        let a = transition(state, step, &result);
        let b = transition(state, step, &result);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(state, &before);
        let next = a.unwrap();
        prop_assert!(next.history.len() > state.history.len());
        let seqs: Vec<u64> = next.history.entries().iter().map(|e| e.seq).collect();
        prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        if fail {
            let mut expect = before.clone();
            expect.history = next.history.clone();
            prop_assert_eq!(&next, &expect);
            prop_assert!(!next.history.last().unwrap().ok);
        }
    }

    #[test]
    fn stage_mismatch_never_mutates(k in 0usize..1000, j in 0usize..1000) {
        let steps = &recorded().steps;
        let (state, _, _) = &steps[k % steps.len()];
        let (_, step, result) = &steps[j % steps.len()];
        match stage_of(&step.tool_name) {
            Some(stage) if stage != state.stage => {
                let is_illegal = matches!(transition(state, step, result), Err(TransitionError::IllegalTransition { .. }));
                prop_assert!(is_illegal);
            }
            _ => {}
        }
    }
}
