//! Ordered event log shared by every stage of a run.
//!
//! Events are appended under a lock, so `seq` is a total order even when
//! agents run on several threads. The log serializes as JSON lines.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    ModelCall,
    FunctionCall,
    PoolAdd,
    PoolRemove,
    Finish,
    Stop,
    /// A parked agent was resumed by reflection.
    Resume,
    /// A failure reason was appended to an agent's dialogue.
    Reflect,
    SolverNode,
    Backtrack,
    SolverFinish,
    Judge,
    Warning,
    Round,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub agent_id: String,
    /// Tier or component that emitted the event: `meta`, `category`,
    /// `tool`, `solver`, `judge`, `loop`, ...
    pub kind: String,
    pub event: EventKind,
    pub payload: Value,
}

#[derive(Debug, Default)]
pub struct Trace {
    events: Mutex<Vec<TraceEvent>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, agent_id: &str, kind: &str, event: EventKind, payload: Value) {
        let mut events = self.events.lock().expect("trace lock poisoned");
        let seq = events.len() as u64;
        events.push(TraceEvent {
            seq,
            agent_id: agent_id.to_string(),
            kind: kind.to_string(),
            event,
            payload,
        });
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("trace lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().expect("trace lock poisoned").clone()
    }

    pub fn of(&self, event: EventKind) -> Vec<TraceEvent> {
        self.events
            .lock()
            .expect("trace lock poisoned")
            .iter()
            .filter(|e| e.event == event)
            .cloned()
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.events.lock().expect("trace lock poisoned").iter() {
            out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<TraceEvent>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from_json))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seq_is_dense_and_round_trips() {
        let trace = Trace::new();
        trace.record("meta", "meta", EventKind::Created, json!({}));
        trace.record("cat-1", "category", EventKind::Finish, json!({"x": 1}));
        let parsed = Trace::parse_jsonl(&trace.to_jsonl()).unwrap();
        assert_eq!(parsed, trace.events());
        assert_eq!(parsed.iter().map(|e| e.seq).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(trace.of(EventKind::Finish).len(), 1);
    }

    #[test]
    fn event_names_are_snake_case() {
        let trace = Trace::new();
        trace.record("a", "tool", EventKind::PoolAdd, json!(null));
        assert!(trace.to_jsonl().contains("\"event\":\"pool_add\""));
    }
}
