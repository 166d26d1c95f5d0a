use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PipelineState, StateError};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub state: PipelineState,
}

/// Pretty-printed, versioned checkpoint document.
pub fn snapshot(state: &PipelineState) -> String {
    let cp = Checkpoint { schema_version: CHECKPOINT_SCHEMA_VERSION, state: state.clone() };
    serde_json::to_string_pretty(&cp).expect("pipeline state serializes")
}

pub fn restore(document: &str) -> Result<PipelineState, StateError> {
    let raw: Value = serde_json::from_str(document).map_err(|e| StateError::CorruptCheckpoint(e.to_string()))?;
    let version = raw
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| StateError::CorruptCheckpoint("missing schema_version".into()))?;
    if version != u64::from(CHECKPOINT_SCHEMA_VERSION) {
        return Err(StateError::CorruptCheckpoint(format!(
            "schema version {version} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})"
        )));
    }
    let cp: Checkpoint = serde_json::from_value(raw).map_err(|e| StateError::CorruptCheckpoint(e.to_string()))?;
    Ok(cp.state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_state_round_trips() {
        let s = PipelineState::new("s1", "topic", "goals");
        assert_eq!(restore(&snapshot(&s)).unwrap(), s);
    }

    #[test]
    fn future_version_is_corrupt() {
        let doc = snapshot(&PipelineState::default()).replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(restore(&doc), Err(StateError::CorruptCheckpoint(_))));
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(restore("{"), Err(StateError::CorruptCheckpoint(_))));
    }
}
