use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::text;

pub const SUMMARY_WORD_LIMIT: usize = 80;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub agent_id: String,
    pub tool_name: String,
    pub args_hash: String,
    pub result_summary: String,
    pub ok: bool,
    pub timestamp: u64,
}

/// Append-only log of executed steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExecutionHistory {
    entries: Vec<HistoryEntry>,
}

impl ExecutionHistory {
    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.last().map_or(1, |e| e.seq + 1)
    }

    pub fn last(&self) -> Option<&HistoryEntry> {
        self.entries.last()
    }

    pub fn append(
        &mut self,
        agent_id: &str,
        tool_name: &str,
        args: &Value,
        summary: &str,
        ok: bool,
        timestamp: u64,
    ) -> &HistoryEntry {
        let entry = HistoryEntry {
            seq: self.next_seq(),
            agent_id: agent_id.to_string(),
            tool_name: tool_name.to_string(),
            args_hash: text::hash_json(args),
            result_summary: text::truncate_words(summary, SUMMARY_WORD_LIMIT),
            ok,
            timestamp,
        };
        self.entries.push(entry);
        self.entries.last().expect("just pushed")
    }

    /// The most recent `n` entries, oldest first.
    pub fn tail(&self, n: usize) -> &[HistoryEntry] {
        &self.entries[self.entries.len().saturating_sub(n)..]
    }

    pub fn args_hashes(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.args_hash.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seq_strictly_increases_and_summary_is_bounded() {
        let mut h = ExecutionHistory::default();
        let long = "word ".repeat(200);
        h.append("a", "t.x", &json!({"b": 1, "a": 2}), &long, true, 0);
        h.append("a", "t.y", &json!({"a": 2, "b": 1}), "short", false, 0);
        let e = h.entries();
        assert_eq!((e[0].seq, e[1].seq), (1, 2));
        assert_eq!(e[0].args_hash, e[1].args_hash);
        assert!(text::word_count(&e[0].result_summary) <= SUMMARY_WORD_LIMIT + 1);
        assert_eq!(h.tail(1)[0].tool_name, "t.y");
    }
}
