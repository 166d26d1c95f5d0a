//! Re-runs a transcript through the transition function and checks every
//! history entry and every checkpoint against what was recorded.

use std::path::Path;

use super::store::{read_transcript, SessionStore, TranscriptLine};
use super::AgentError;
use crate::orchestra::{transition, ExecutedStep};
use crate::state::PipelineState;
use crate::text;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    pub entries: usize,
    pub checkpoints_checked: usize,
    pub final_state: PipelineState,
}

fn mismatch(seq: u64, detail: impl Into<String>) -> AgentError {
    AgentError::TranscriptMismatch { seq, detail: detail.into() }
}

/// The starting state is the `state-0.json` next to the transcript, or an
/// empty state when there is none.
pub fn replay(transcript: &Path) -> Result<ReplayReport, AgentError> {
    let dir = transcript.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let store = SessionStore::open(dir).ok();
    let checkpoints = store.as_ref().map(|s| s.checkpoints()).unwrap_or_default();
    let mut state = match &store {
        Some(s) if checkpoints.first() == Some(&0) => s.checkpoint(0)?,
        _ => PipelineState::default(),
    };
    let lines = if transcript.exists() { read_transcript(transcript)? } else { Vec::new() };
    let mut report = ReplayReport { steps: 0, entries: 0, checkpoints_checked: 0, final_state: PipelineState::default() };
    let mut pending: Vec<TranscriptLine> = Vec::new();
    let check = |state: &PipelineState, report: &mut ReplayReport| -> Result<(), AgentError> {
        let seq = state.history.last().map_or(0, |e| e.seq);
        if let (Some(store), true) = (&store, checkpoints.contains(&seq)) {
            let recorded = store.checkpoint(seq)?;
            if text::hash_json(&serde_json::to_value(&recorded).expect("state serializes"))
                != text::hash_json(&serde_json::to_value(state).expect("state serializes"))
            {
                return Err(mismatch(seq, format!("state differs from checkpoint state-{seq}.json")));
            }
            report.checkpoints_checked += 1;
        }
        Ok(())
    };
    check(&state, &mut report)?;
    for line in lines {
        let (args, result) = (line.args.clone(), line.result.clone());
        pending.push(line);
        let Some(result) = result else { continue };
        let head = pending.last().expect("just pushed").entry.clone();
        let step = ExecutedStep {
            agent_id: head.agent_id.clone(),
            tool_name: head.tool_name.clone(),
            args: args.unwrap_or_default(),
            timestamp: head.timestamp,
        };
        let next = transition(&state, &step, &result).map_err(|e| mismatch(head.seq, e.to_string()))?;
        let produced = &next.history.entries()[state.history.len()..];
        for (i, want) in pending.iter().enumerate() {
            match produced.get(i) {
                Some(got) if *got == want.entry => {}
                Some(got) => return Err(mismatch(want.entry.seq, format!("recorded {:?}, replay gives {:?}", want.entry, got))),
                None => return Err(mismatch(want.entry.seq, "recorded entry not produced by replay")),
            }
        }
        if let Some(extra) = produced.get(pending.len()) {
            return Err(mismatch(extra.seq, "replay produces an entry the transcript lacks"));
        }
        report.steps += 1;
        report.entries += pending.len();
        pending.clear();
        state = next;
        check(&state, &mut report)?;
    }
    if let Some(first) = pending.first() {
        return Err(mismatch(first.entry.seq, "transcript ends inside a step"));
    }
    report.final_state = state;
    Ok(report)
}
