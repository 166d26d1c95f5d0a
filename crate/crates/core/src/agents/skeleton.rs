//! Skeleton agent: consult the planner, run what it chooses, repeat until it
//! stops, then offer the outline for review.

use serde_json::json;

use super::gate::{GateKind, Resolution};
use super::session::Session;
use super::{AgentError, AgentId};
use crate::orchestra::{PlanOutcome, PlanningFailed};
use crate::protocol::CallError;

const AGENT: AgentId = AgentId::Skeleton;

fn spend(s: &mut Session) -> Result<(), AgentError> {
    let budget = s.rt.config.limits.max_planner_steps;
    if s.planner_steps >= budget {
        return Err(AgentError::StepBudgetExhausted { budget });
    }
    s.planner_steps += 1;
    Ok(())
}

async fn planner_loop(s: &mut Session) -> Result<(), AgentError> {
    loop {
        spend(s)?;
        let result = match s.invoke(AGENT, "orchestra.plan_next", json!({})).await {
            Ok(r) => r,
            Err(AgentError::Call { source: CallError::ToolFailed { result: Some(r), .. }, .. }) => {
                let attempts = r
                    .json_body()
                    .and_then(|b| serde_json::from_value(b["attempts"].clone()).ok())
                    .unwrap_or_default();
                return Err(PlanningFailed { attempts }.into());
            }
            Err(e) => return Err(e),
        };
        let outcome: PlanOutcome = result
            .json_body()
            .and_then(|b| serde_json::from_value(b.clone()).ok())
            .ok_or_else(|| PlanningFailed { attempts: Vec::new() })?;
        for step in outcome.plan.steps {
            spend(s)?;
            match s.invoke(AGENT, &step.tool_name, step.args).await {
                Ok(_) => {}
                // Recorded as a failed history entry; the planner sees it on
                // the next consult.
                Err(AgentError::Call { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if outcome.plan.stop {
            return Ok(());
        }
    }
}

pub(super) async fn run(s: &mut Session) -> Result<(), AgentError> {
    let limit = s.rt.config.limits.gate_rejections;
    let mut regenerated = 0;
    loop {
        planner_loop(s).await?;
        // A planner that stops before initializing still leaves a skeleton
        // to review.
        if s.state.skeleton.is_none() {
            s.invoke(AGENT, "skeleton.init", json!({})).await?;
        }
        let payload = json!({"skeleton": s.state.skeleton});
        match s.gate(GateKind::Outline, payload).await? {
            Resolution::Approve => return Ok(()),
            Resolution::Revise { .. } => {}
            Resolution::Regenerate => {
                regenerated += 1;
                if regenerated > limit {
                    return Err(AgentError::GateRejectedLimit { gate: GateKind::Outline.as_str().into(), limit });
                }
            }
            Resolution::Abort => return Err(AgentError::GateAborted { gate: GateKind::Outline.as_str().into() }),
        }
    }
}
