//! Line-delimited JSON trace files.
//!
//! Each line is one recorded tool call. Lines may arrive interleaved across
//! sessions; parsing groups them by session (in order of first appearance)
//! and orders each group by index.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// One recorded tool call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolEvent {
    pub session_id: String,
    pub index: u64,
    pub tool_name: String,
    #[serde(default)]
    pub args: IndexMap<String, String>,
    #[serde(default)]
    pub result: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl ToolEvent {
    pub fn new(
        session_id: impl Into<String>,
        index: u64,
        tool_name: impl Into<String>,
        args: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>,
        result: impl Into<String>,
    ) -> Self {
        ToolEvent {
            session_id: session_id.into(),
            index,
            tool_name: tool_name.into(),
            args: args.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            result: result.into(),
            timestamp: None,
        }
    }

    pub fn event_ref(&self) -> EventRef {
        EventRef {
            session_id: self.session_id.clone(),
            index: self.index,
        }
    }

    /// Argument values joined by newlines, in argument order.
    pub fn joined_args(&self) -> String {
        self.args.values().map(String::as_str).collect::<Vec<_>>().join("\n")
    }
}

/// Identifies one event: session plus ordinal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventRef {
    pub session_id: String,
    pub index: u64,
}

impl fmt::Display for EventRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.session_id, self.index)
    }
}

/// The events of one session, ordered by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionTrace {
    pub session_id: String,
    pub events: Vec<ToolEvent>,
}

/// A parsed trace: sessions in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub sessions: Vec<SessionTrace>,
    // Session position of each record in input order.
    interleaving: Vec<usize>,
}

impl Trace {
    /// All events in replay order (session by session).
    pub fn events(&self) -> impl Iterator<Item = &ToolEvent> {
        self.sessions.iter().flat_map(|s| s.events.iter())
    }

    pub fn len(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn session(&self, id: &str) -> Option<&SessionTrace> {
        self.sessions.iter().find(|s| s.session_id == id)
    }

    pub fn get(&self, r: &EventRef) -> Option<&ToolEvent> {
        self.session(&r.session_id)?
            .events
            .get(usize::try_from(r.index).ok()?)
    }

    /// All events in replay order: sessions interleave as they did in the
    /// input, and each session's events come in index order.
    pub fn replay_order(&self) -> Vec<&ToolEvent> {
        let mut next = vec![0usize; self.sessions.len()];
        let mut out = Vec::with_capacity(self.len());
        for &s in &self.interleaving {
            out.push(&self.sessions[s].events[next[s]]);
            next[s] += 1;
        }
        out
    }

    /// Builds a trace from already-validated events, applying the same
    /// grouping and index checks as [`parse_trace`].
    pub fn from_events(events: Vec<ToolEvent>) -> Result<Trace, TraceError> {
        assemble(events.into_iter().map(|e| (0, e)))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("malformed trace record on line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("duplicate index {index} in session {session}")]
    DuplicateIndex { session: String, index: u64 },
    #[error("gap in session {session}: expected index {expected}, found {found}")]
    GapInIndices {
        session: String,
        expected: u64,
        found: u64,
    },
}

/// Parses a line-delimited JSON trace. Blank lines are ignored; any
/// malformed line rejects the whole input.
pub fn parse_trace(input: &[u8]) -> Result<Trace, TraceError> {
    let text = std::str::from_utf8(input).map_err(|e| {
        let line_no = input[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1;
        TraceError::MalformedLine {
            line_no,
            reason: "invalid UTF-8".into(),
        }
    })?;
    let mut parsed = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let event: ToolEvent =
            serde_json::from_str(line).map_err(|e| TraceError::MalformedLine {
                line_no,
                reason: e.to_string(),
            })?;
        if event.tool_name.is_empty() {
            return Err(TraceError::MalformedLine {
                line_no,
                reason: "empty tool_name".into(),
            });
        }
        parsed.push((line_no, event));
    }
    assemble(parsed.into_iter())
}

fn assemble(events: impl Iterator<Item = (usize, ToolEvent)>) -> Result<Trace, TraceError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<ToolEvent>> = HashMap::new();
    let mut interleaving = Vec::new();
    for (line_no, event) in events {
        if event.tool_name.is_empty() {
            return Err(TraceError::MalformedLine {
                line_no,
                reason: "empty tool_name".into(),
            });
        }
        if !groups.contains_key(&event.session_id) {
            order.push(event.session_id.clone());
        }
        interleaving.push(order.iter().position(|s| *s == event.session_id).unwrap_or(0));
        groups.entry(event.session_id.clone()).or_default().push(event);
    }
    let mut sessions = Vec::with_capacity(order.len());
    for session_id in order {
        let mut events = groups.remove(&session_id).unwrap_or_default();
        events.sort_by_key(|e| e.index);
        if let Some(pair) = events.windows(2).find(|p| p[0].index == p[1].index) {
            return Err(TraceError::DuplicateIndex {
                session: session_id,
                index: pair[0].index,
            });
        }
        for (expected, event) in events.iter().enumerate() {
            let expected = expected as u64;
            if event.index != expected {
                return Err(TraceError::GapInIndices {
                    session: session_id,
                    expected,
                    found: event.index,
                });
            }
        }
        sessions.push(SessionTrace { session_id, events });
    }
    Ok(Trace { sessions, interleaving })
}

/// Serializes events as line-delimited JSON, one event per line.
pub fn serialize_trace<'a>(events: impl IntoIterator<Item = &'a ToolEvent>) -> String {
    let mut out = String::new();
    for e in events {
        // ToolEvent holds only strings and integers; serialization cannot fail.
        out.push_str(&serde_json::to_string(e).expect("serializable event"));
        out.push('\n');
    }
    out
}
