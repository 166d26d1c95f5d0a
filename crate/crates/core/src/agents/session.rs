use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::gate::{GateKind, GateRequest, GateResponder, Resolution};
use super::registry::Registry;
use super::store::{SessionStore, TranscriptLine, BRIEF, SURVEY, TREE};
use super::{agent_for, analysis, skeleton, writing, AgentError, AgentId, Bindings};
use crate::config::Config;
use crate::events::{EventKind, EventLog};
use crate::model::LanguageModel;
use crate::orchestra::{planning_context, stage_of, transition, ExecutedStep, PlannerLimits, TransitionError, HISTORY_WINDOW};
use crate::protocol::{CallError, ToolDescriptor, ToolResult};
use crate::servers::{Retriever, ServerDeps};
use crate::state::{PipelineState, Stage};

/// What every session of one process shares.
#[derive(Clone)]
pub struct Runtime {
    pub config: Config,
    pub registry: Arc<Registry>,
    pub model: Arc<dyn LanguageModel>,
}

impl Runtime {
    pub async fn new(config: Config, model: Arc<dyn LanguageModel>, retriever: Arc<dyn Retriever>) -> Result<Self, AgentError> {
        let deps = ServerDeps::new(model.clone(), retriever);
        let registry = Registry::from_config(&config, &deps).await?;
        Ok(Self { config, registry: Arc::new(registry), model })
    }

    pub fn with_registry(config: Config, registry: Registry, model: Arc<dyn LanguageModel>) -> Self {
        Self { config, registry: Arc::new(registry), model }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// Stopped on request right after the checkpoint that closed a stage.
    Halted(Stage),
}

pub struct Session {
    pub(super) rt: Runtime,
    pub(super) state: PipelineState,
    bindings: Bindings,
    gates: Arc<dyn GateResponder>,
    store: Option<SessionStore>,
    events: Arc<EventLog>,
    transcript: Vec<TranscriptLine>,
    pub(super) planner_steps: usize,
}

impl Session {
    /// A fresh session. With a store, the initial checkpoint is written.
    pub fn new(
        rt: Runtime,
        state: PipelineState,
        gates: Arc<dyn GateResponder>,
        store: Option<SessionStore>,
    ) -> Result<Self, AgentError> {
        let bindings = Bindings::new(&rt.config.bindings);
        let s = Self {
            rt,
            state,
            bindings,
            gates,
            store,
            events: Arc::new(EventLog::new()),
            transcript: Vec::new(),
            planner_steps: 0,
        };
        if let Some(store) = &s.store {
            store.write_checkpoint(&s.state)?;
        }
        Ok(s)
    }

    /// Picks up from the latest checkpoint in `store`. Transcript lines
    /// written after that checkpoint are discarded; the stage in progress
    /// restarts from its beginning.
    pub fn resume(rt: Runtime, store: SessionStore, gates: Arc<dyn GateResponder>) -> Result<Self, AgentError> {
        let state = store
            .latest_checkpoint()?
            .ok_or_else(|| AgentError::Store(format!("no checkpoint in {}", store.dir().display())))?;
        let last = state.history.last().map_or(0, |e| e.seq);
        store.truncate_transcript(last)?;
        let transcript = match super::store::read_transcript(&store.path(super::store::TRANSCRIPT)) {
            Ok(t) => t,
            Err(AgentError::Store(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        let bindings = Bindings::new(&rt.config.bindings);
        Ok(Self { rt, state, bindings, gates, store: Some(store), events: Arc::new(EventLog::new()), transcript, planner_steps: 0 })
    }

    pub fn with_events(mut self, events: Arc<EventLog>) -> Self {
        self.events = events;
        self
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn events(&self) -> Arc<EventLog> {
        self.events.clone()
    }

    pub fn store(&self) -> Option<&SessionStore> {
        self.store.as_ref()
    }

    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn transcript(&self) -> &[TranscriptLine] {
        &self.transcript
    }

    /// Planner consults plus planner-chosen steps spent in this process.
    pub fn planner_steps(&self) -> usize {
        self.planner_steps
    }

    /// Drives the pipeline until done, or until the stage `halt_after`
    /// has been closed and checkpointed.
    pub async fn run(&mut self, halt_after: Option<Stage>) -> Result<RunOutcome, AgentError> {
        let outcome = self.drive(halt_after).await;
        if let Err(e) = &outcome {
            self.events.emit(EventKind::Error, json!({"message": e.to_string()}));
        }
        outcome
    }

    async fn drive(&mut self, halt_after: Option<Stage>) -> Result<RunOutcome, AgentError> {
        loop {
            let stage = self.state.stage;
            match stage {
                Stage::Consensus => analysis::consensus(self).await?,
                Stage::Analysis => analysis::gather(self).await?,
                Stage::Skeletonizing => skeleton::run(self).await?,
                Stage::Writing => writing::run(self).await?,
                Stage::Done => return Ok(RunOutcome::Completed),
            }
            if halt_after == Some(stage) && self.state.stage != Stage::Done {
                return Ok(RunOutcome::Halted(stage));
            }
        }
    }

    /// Tools the planner may choose from.
    pub fn planner_tools(&self) -> Vec<ToolDescriptor> {
        if self.rt.config.limits.planner_full_toolset {
            return self.rt.registry.tools();
        }
        let servers: Vec<String> =
            self.bindings.servers(AgentId::Skeleton.as_str()).into_iter().filter(|s| s != "orchestra").collect();
        self.rt.registry.tools_of(&servers)
    }

    fn planner_limits(&self) -> PlannerLimits {
        PlannerLimits { max_layers: self.rt.config.limits.max_layers, min_gain: self.rt.config.limits.min_gain }
    }

    /// Session state exposed to tool arguments marked with `x-state`.
    fn slot(&self, name: &str) -> Option<Value> {
        let s = &self.state;
        let v = match name {
            "topic" => json!(s.brief.topic),
            "brief" => json!(s.brief),
            "perspectives" => json!(s.brief.perspectives),
            "dialogue" => json!(s.dialogue),
            "corpus" => json!(s.corpus),
            "tree" => json!(s.tree.as_ref()?),
            "skeleton" => json!(s.skeleton.as_ref()?),
            "digests" => json!(s.digests),
            "plan" => json!(s.plan.as_ref()?),
            "layer_index" => json!(s.reports.len() + 1),
            "history" => json!(s.history.tail(HISTORY_WINDOW)),
            "context" => planning_context(s, &self.planner_tools(), self.planner_limits()),
            "available" => json!(self.planner_tools()),
            _ => return None,
        };
        Some(v)
    }

    /// Fills omitted state-bound arguments.
    pub fn bind(&self, tool: &str, args: Value) -> Value {
        let Some(descriptor) = self.rt.registry.descriptor(tool) else {
            return args;
        };
        let mut map = match args {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => return other,
        };
        if let Some(props) = descriptor.input_schema.get("properties").and_then(Value::as_object) {
            for (key, schema) in props {
                if map.contains_key(key) {
                    continue;
                }
                if let Some(v) = schema.get("x-state").and_then(Value::as_str).and_then(|slot| self.slot(slot)) {
                    map.insert(key.clone(), v);
                }
            }
        }
        Value::Object(map)
    }

    /// The one path to a server: authorize, bind state, call, transition,
    /// events, transcript. Denied calls never reach a transport.
    pub async fn invoke(&mut self, agent: AgentId, tool: &str, args: Value) -> Result<ToolResult, AgentError> {
        if !self.bindings.authorize(agent.as_str(), tool) {
            let err = AgentError::AccessDenied { agent: agent.as_str().to_string(), tool: tool.to_string() };
            self.events.emit(EventKind::Error, json!({"message": err.to_string()}));
            return Err(err);
        }
        if let Some(stage) = stage_of(tool) {
            if stage != self.state.stage {
                return Err(TransitionError::IllegalTransition { tool: tool.to_string(), stage: self.state.stage }.into());
            }
        }
        let args = if args.is_null() { json!({}) } else { args };
        let bound = self.bind(tool, args.clone());
        let timestamp = self.state.history.next_seq();
        self.events.emit(EventKind::ToolStarted, json!({"agent": agent.as_str(), "tool": tool, "seq": timestamp}));
        let (result, failure) = match self.rt.registry.call(tool, bound).await {
            Ok(r) => (r, None),
            Err(e) => {
                let r = match &e {
                    CallError::ToolFailed { result: Some(r), .. } => r.clone(),
                    other => ToolResult::error(other.to_string()),
                };
                (r, Some(e))
            }
        };
        let step = ExecutedStep { agent_id: agent.as_str().to_string(), tool_name: tool.to_string(), args, timestamp };
        self.apply(step, &result)?;
        match failure {
            None => Ok(result),
            Some(source) => Err(AgentError::Call { tool: tool.to_string(), source }),
        }
    }

    /// Records an agent-internal step (dialogue, gates, writing) through the
    /// same transition and transcript path as server calls.
    pub(super) fn record(&mut self, agent: AgentId, tool: &str, args: Value, result: ToolResult) -> Result<(), AgentError> {
        let timestamp = self.state.history.next_seq();
        self.events.emit(EventKind::ToolStarted, json!({"agent": agent.as_str(), "tool": tool, "seq": timestamp}));
        let step = ExecutedStep { agent_id: agent.as_str().to_string(), tool_name: tool.to_string(), args, timestamp };
        self.apply(step, &result)
    }

    fn apply(&mut self, step: ExecutedStep, result: &ToolResult) -> Result<(), AgentError> {
        let next = transition(&self.state, &step, result)?;
        let before = self.state.history.len();
        let mut lines: Vec<TranscriptLine> = next.history.entries()[before..]
            .iter()
            .map(|e| TranscriptLine { entry: e.clone(), args: None, result: None })
            .collect();
        if let Some(last) = lines.last_mut() {
            last.args = Some(step.args.clone());
            last.result = Some(result.clone());
        }
        let prev = std::mem::replace(&mut self.state, next);
        if let Some(store) = &self.store {
            store.append_transcript(&lines)?;
        }
        self.transcript.extend(lines);
        let last = self.state.history.last().expect("transition appends");
        self.events.emit(
            EventKind::ToolFinished,
            json!({"agent": step.agent_id, "tool": step.tool_name, "seq": last.seq, "ok": last.ok, "summary": last.result_summary}),
        );
        self.write_artifacts(&prev)?;
        if prev.stage != self.state.stage {
            if let Some(store) = &self.store {
                store.write_checkpoint(&self.state)?;
            }
            self.events.emit(EventKind::StageChanged, json!({"from": prev.stage, "to": self.state.stage}));
        }
        Ok(())
    }

    fn write_artifacts(&self, prev: &PipelineState) -> Result<(), AgentError> {
        let s = &self.state;
        let mut ready: Vec<(String, String)> = Vec::new();
        if s.brief != prev.brief && s.consensus_reached {
            ready.push((BRIEF.into(), pretty(&s.brief)));
        }
        if s.tree != prev.tree {
            if let Some(t) = &s.tree {
                ready.push((TREE.into(), pretty(t)));
            }
        }
        if s.skeleton != prev.skeleton {
            if let Some(k) = &s.skeleton {
                ready.push((format!("skeleton-v{}.json", k.version), pretty(k)));
            }
        }
        if s.survey != prev.survey {
            if let Some(md) = &s.survey {
                ready.push((SURVEY.into(), md.clone()));
            }
        }
        for (name, contents) in ready {
            if let Some(store) = &self.store {
                store.write_artifact(&name, &contents)?;
            }
            let kind = name.split(['-', '.']).next().unwrap_or_default().to_string();
            self.events.emit(EventKind::ArtifactReady, json!({"kind": kind, "name": name}));
        }
        Ok(())
    }

    /// Parks on a gate and records the resolution.
    pub(super) async fn gate(&mut self, kind: GateKind, payload: Value) -> Result<Resolution, AgentError> {
        let request = GateRequest {
            gate_id: format!("{}-{}", kind.as_str(), self.state.history.next_seq()),
            kind,
            stage: self.state.stage,
            payload,
            options: ["approve", "revise", "regenerate", "abort"].iter().map(|s| s.to_string()).collect(),
        };
        self.events.emit(EventKind::GateOpened, serde_json::to_value(&request).expect("gate serializes"));
        let resolution = self.gates.respond(&request).await;
        self.events.emit(EventKind::GateResolved, json!({"gate_id": request.gate_id, "resolution": resolution}));
        let mut body = serde_json::to_value(&resolution).expect("resolution serializes");
        body["gate_id"] = json!(request.gate_id);
        let agent = agent_for(self.state.stage);
        self.record(agent, &kind.tool_name(), json!({"gate_id": request.gate_id}), ToolResult::json(body))?;
        Ok(resolution)
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}
