//! On-disk session layout: checkpoints, artifacts and the transcript.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::AgentError;
use crate::protocol::ToolResult;
use crate::state::{restore, snapshot, HistoryEntry, PipelineState};

pub const TRANSCRIPT: &str = "transcript.jsonl";
pub const SURVEY: &str = "survey.md";
pub const BRIEF: &str = "brief.json";
pub const TREE: &str = "tree.json";

/// One transcript line is one history entry. The last line of each
/// executed step also carries its arguments and full result, which is what
/// replay needs to re-run the transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    #[serde(flatten)]
    pub entry: HistoryEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ToolResult>,
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn checkpoint_seq(name: &str) -> Option<u64> {
    name.strip_prefix("state-")?.strip_suffix(".json")?.parse().ok()
}

fn skeleton_version(name: &str) -> Option<u64> {
    name.strip_prefix("skeleton-v")?.strip_suffix(".json")?.parse().ok()
}

impl SessionStore {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, AgentError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, AgentError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(AgentError::Store(format!("no session directory at {}", dir.display())));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_artifact(&self, name: &str, contents: &str) -> Result<(), AgentError> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(tmp, self.dir.join(name))?;
        Ok(())
    }

    pub fn read_artifact(&self, name: &str) -> Option<String> {
        fs::read_to_string(self.dir.join(name)).ok()
    }

    pub fn write_checkpoint(&self, state: &PipelineState) -> Result<PathBuf, AgentError> {
        let seq = state.history.last().map_or(0, |e| e.seq);
        let name = format!("state-{seq}.json");
        self.write_artifact(&name, &snapshot(state))?;
        Ok(self.dir.join(name))
    }

    /// Sequence numbers of all checkpoints, ascending.
    pub fn checkpoints(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.names().iter().filter_map(|n| checkpoint_seq(n)).collect();
        out.sort_unstable();
        out
    }

    pub fn checkpoint(&self, seq: u64) -> Result<PipelineState, AgentError> {
        let raw = fs::read_to_string(self.dir.join(format!("state-{seq}.json")))?;
        restore(&raw).map_err(|e| AgentError::Store(e.to_string()))
    }

    pub fn latest_checkpoint(&self) -> Result<Option<PipelineState>, AgentError> {
        self.checkpoints().last().map(|s| self.checkpoint(*s)).transpose()
    }

    /// Highest-numbered skeleton snapshot.
    pub fn latest_skeleton(&self) -> Option<String> {
        let v = self.names().iter().filter_map(|n| skeleton_version(n)).max()?;
        self.read_artifact(&format!("skeleton-v{v}.json"))
    }

    fn names(&self) -> Vec<String> {
        fs::read_dir(&self.dir)
            .map(|it| it.filter_map(|e| e.ok()).filter_map(|e| e.file_name().into_string().ok()).collect())
            .unwrap_or_default()
    }

    pub fn append_transcript(&self, lines: &[TranscriptLine]) -> Result<(), AgentError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(TRANSCRIPT))?;
        let mut buf = String::new();
        for l in lines {
            buf.push_str(&serde_json::to_string(l).expect("transcript line serializes"));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Drops transcript lines past `max_seq`, including a torn last line.
    pub fn truncate_transcript(&self, max_seq: u64) -> Result<(), AgentError> {
        let path = self.dir.join(TRANSCRIPT);
        let Ok(raw) = fs::read_to_string(&path) else {
            return Ok(());
        };
        let mut kept = String::new();
        for line in raw.lines() {
            match serde_json::from_str::<TranscriptLine>(line) {
                Ok(l) if l.entry.seq <= max_seq => {
                    kept.push_str(line);
                    kept.push('\n');
                }
                _ => break,
            }
        }
        self.write_artifact(TRANSCRIPT, &kept)
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptLine>, AgentError> {
    let raw = fs::read_to_string(path)?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AgentError::TranscriptMismatch {
                seq: i as u64 + 1,
                detail: format!("unreadable line: {e}"),
            })
        })
        .collect()
}
