//! The JSON-lines game record: a header, ordered events, memory segments
//! and an end marker.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::GameConfig;
use super::vote::VoteTally;
use super::EngineError;
use crate::memory::MemorySegment;
use crate::oracle::CallKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Introduction,
    SensorProbe,
    TargetSelection,
    Question,
    Reply,
    Prune,
    Vote,
    Outcome,
    Diagnostic,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Introduction => "introduction",
            EventKind::SensorProbe => "sensor_probe",
            EventKind::TargetSelection => "target_selection",
            EventKind::Question => "question",
            EventKind::Reply => "reply",
            EventKind::Prune => "prune",
            EventKind::Vote => "vote",
            EventKind::Outcome => "outcome",
            EventKind::Diagnostic => "diagnostic",
        }
    }
}

/// One backend call, referenced by the event that caused it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRef {
    /// Index into the gateway's cost ledger.
    pub id: usize,
    /// Agent on whose behalf the call was made.
    pub agent: String,
    pub kind: CallKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Rendered prompt, or the embedded text.
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollars: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub ordinal: u64,
    pub round: u32,
    pub kind: EventKind,
    pub actors: Vec<String>,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<CallRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub scenario_id: String,
    pub config: GameConfig,
    pub code_version: String,
    pub tokenizer_id: String,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(Box<TranscriptHeader>),
    Event(TranscriptEvent),
    Segment(MemorySegment),
    End { complete: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub events: Vec<TranscriptEvent>,
    pub segments: Vec<MemorySegment>,
    /// False when the game aborted.
    pub complete: bool,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |r: &Record| {
            out.push_str(&serde_json::to_string(r).expect("transcript records serialize"));
            out.push('\n');
        };
        line(&Record::Header(Box::new(self.header.clone())));
        for e in &self.events {
            line(&Record::Event(e.clone()));
        }
        for s in &self.segments {
            line(&Record::Segment(s.clone()));
        }
        line(&Record::End { complete: self.complete });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EngineError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut segments = Vec::new();
        let mut complete = false;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: Record = serde_json::from_str(line)
                .map_err(|e| EngineError::Transcript(format!("line {}: {e}", i + 1)))?;
            match record {
                Record::Header(h) if header.is_none() => header = Some(*h),
                Record::Header(_) => return Err(EngineError::Transcript(format!("line {}: second header", i + 1))),
                Record::Event(e) => events.push(e),
                Record::Segment(s) => segments.push(s),
                Record::End { complete: c } => complete = c,
            }
        }
        let header = header.ok_or_else(|| EngineError::Transcript("missing header record".into()))?;
        Ok(Self {
            header,
            events,
            segments,
            complete,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Transcript(format!("cannot read {}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &TranscriptEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn calls(&self) -> impl Iterator<Item = &CallRef> {
        self.events.iter().flat_map(|e| e.calls.iter())
    }

    /// Vote tallies from the vote events.
    pub fn tallies(&self) -> Vec<VoteTally> {
        self.events_of(EventKind::Vote)
            .filter_map(|e| serde_json::from_value(e.payload.clone()).ok())
            .collect()
    }

    pub fn win_rate(&self) -> Option<f64> {
        self.events_of(EventKind::Outcome)
            .last()
            .and_then(|e| e.payload.get("win_rate"))
            .and_then(Value::as_f64)
    }
}
