//! Full-duplex turn-taking state machine.
//!
//! ```text
//!  Listening --SpeechEnd--> AwaitingTranscript --Transcript(text)--> AwaitingVerdict
//!      ^   ^                      |  Transcript("")                    |      |
//!      |   +----------------------+                  Verdict(Unfinished)|      | Verdict(Finished)
//!      |   +-----------------------------------------------------------+      v
//!      +---------- ResponseDone / SpeechStart (barge-in) ------------- Responding
//! ```
//!
//! The machine is driven by events only. Timing is the event order; there
//! are no timers. Detector components are behind traits so the reference
//! table-driven fakes can be swapped for real ones.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Finished,
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DuplexEvent {
    SpeechStart { segment: u64 },
    SpeechEnd { segment: u64 },
    Transcript { segment: u64, text: String },
    Verdict { segment: u64, verdict: Verdict },
    ResponseChunk { segment: u64, text: String },
    ResponseDone { segment: u64 },
}

impl DuplexEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            DuplexEvent::SpeechStart { .. } => EventKind::SpeechStart,
            DuplexEvent::SpeechEnd { .. } => EventKind::SpeechEnd,
            DuplexEvent::Transcript { .. } => EventKind::Transcript,
            DuplexEvent::Verdict { .. } => EventKind::Verdict,
            DuplexEvent::ResponseChunk { .. } => EventKind::ResponseChunk,
            DuplexEvent::ResponseDone { .. } => EventKind::ResponseDone,
        }
    }

    pub fn segment(&self) -> u64 {
        match self {
            DuplexEvent::SpeechStart { segment }
            | DuplexEvent::SpeechEnd { segment }
            | DuplexEvent::Transcript { segment, .. }
            | DuplexEvent::Verdict { segment, .. }
            | DuplexEvent::ResponseChunk { segment, .. }
            | DuplexEvent::ResponseDone { segment } => *segment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SpeechStart,
    SpeechEnd,
    Transcript,
    Verdict,
    ResponseChunk,
    ResponseDone,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::SpeechStart,
        EventKind::SpeechEnd,
        EventKind::Transcript,
        EventKind::Verdict,
        EventKind::ResponseChunk,
        EventKind::ResponseDone,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DuplexState {
    Listening,
    AwaitingTranscript { segment: u64 },
    AwaitingVerdict { segment: u64, text: String },
    Responding { segment: u64, partial: Vec<String> },
}

impl DuplexState {
    pub fn name(&self) -> &'static str {
        match self {
            DuplexState::Listening => "Listening",
            DuplexState::AwaitingTranscript { .. } => "AwaitingTranscript",
            DuplexState::AwaitingVerdict { .. } => "AwaitingVerdict",
            DuplexState::Responding { .. } => "Responding",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Transcribe { segment: u64 },
    DetectTurn { segment: u64, payload: String },
    StartGeneration { segment: u64, payload: String },
    Emit { segment: u64, payload: String },
    CommitTurn { segment: u64, payload: String },
    AbortGeneration { segment: u64 },
    CommitPartial { segment: u64, payload: String },
    CancelTranscript { segment: u64 },
    CancelVerdict { segment: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

/// A turn committed to history by the machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedTurn {
    pub role: Speaker,
    pub text: String,
    /// Set on assistant turns cut short by barge-in.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DuplexError {
    #[error("protocol violation: event {event} not allowed in state {state}")]
    ProtocolViolation { state: &'static str, event: String },
    #[error("segment {got} out of order (expected {expected})")]
    Segment { got: u64, expected: String },
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        write!(f, "{}", s.as_str().unwrap())
    }
}

/// Machine state plus the context it carries between turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplexMachine {
    pub state: DuplexState,
    /// Transcript of user speech judged unfinished, awaiting continuation.
    pub pending_text: String,
    pub last_segment: Option<u64>,
    pub history: Vec<CommittedTurn>,
}

impl Default for DuplexMachine {
    fn default() -> Self {
        DuplexMachine {
            state: DuplexState::Listening,
            pending_text: String::new(),
            last_segment: None,
            history: Vec::new(),
        }
    }
}

fn join(a: &str, b: &str) -> String {
    match (a.is_empty(), b.is_empty()) {
        (true, _) => b.to_string(),
        (_, true) => a.to_string(),
        _ => format!("{a} {b}"),
    }
}

impl DuplexMachine {
    pub fn new() -> Self {
        Self::default()
    }

    fn violation(&self, event: &DuplexEvent) -> DuplexError {
        DuplexError::ProtocolViolation {
            state: self.state.name(),
            event: event.kind().to_string(),
        }
    }

    fn expect_segment(&self, got: u64, expected: u64) -> Result<(), DuplexError> {
        if got != expected {
            return Err(DuplexError::Segment { got, expected: expected.to_string() });
        }
        Ok(())
    }

    /// Applies one event, returning the next machine and the actions to run.
    pub fn step(&self, event: &DuplexEvent) -> Result<(DuplexMachine, Vec<Action>), DuplexError> {
        use DuplexEvent as E;
        use DuplexState as S;
        let mut next = self.clone();
        let actions = match (&self.state, event) {
            (S::Listening, E::SpeechStart { .. }) => vec![],
            (S::Listening, E::SpeechEnd { segment }) => {
                if self.last_segment.is_some_and(|last| *segment <= last) {
                    return Err(DuplexError::Segment {
                        got: *segment,
                        expected: format!("> {}", self.last_segment.unwrap()),
                    });
                }
                next.last_segment = Some(*segment);
                next.state = S::AwaitingTranscript { segment: *segment };
                vec![Action::Transcribe { segment: *segment }]
            }
            (S::AwaitingTranscript { segment }, E::Transcript { segment: got, text }) => {
                self.expect_segment(*got, *segment)?;
                if text.trim().is_empty() {
                    next.state = S::Listening;
                    vec![]
                } else {
                    let full = join(&self.pending_text, text.trim());
                    next.state = S::AwaitingVerdict { segment: *segment, text: full.clone() };
                    vec![Action::DetectTurn { segment: *segment, payload: full }]
                }
            }
            // the user kept talking before the transcript arrived
            (S::AwaitingTranscript { segment }, E::SpeechStart { .. }) => {
                next.state = S::Listening;
                vec![Action::CancelTranscript { segment: *segment }]
            }
            (S::AwaitingVerdict { segment, text }, E::Verdict { segment: got, verdict }) => {
                self.expect_segment(*got, *segment)?;
                match verdict {
                    Verdict::Unfinished => {
                        next.pending_text = text.clone();
                        next.state = S::Listening;
                        vec![]
                    }
                    Verdict::Finished => {
                        next.pending_text.clear();
                        next.history.push(CommittedTurn {
                            role: Speaker::User,
                            text: text.clone(),
                            truncated: false,
                        });
                        next.state = S::Responding { segment: *segment, partial: vec![] };
                        vec![Action::StartGeneration { segment: *segment, payload: text.clone() }]
                    }
                }
            }
            (S::AwaitingVerdict { segment, text }, E::SpeechStart { .. }) => {
                next.pending_text = text.clone();
                next.state = S::Listening;
                vec![Action::CancelVerdict { segment: *segment }]
            }
            (S::Responding { segment, partial }, E::ResponseChunk { segment: got, text }) => {
                self.expect_segment(*got, *segment)?;
                let mut partial = partial.clone();
                partial.push(text.clone());
                next.state = S::Responding { segment: *segment, partial };
                vec![Action::Emit { segment: *segment, payload: text.clone() }]
            }
            (S::Responding { segment, partial }, E::ResponseDone { segment: got }) => {
                self.expect_segment(*got, *segment)?;
                let text = partial.concat();
                next.history.push(CommittedTurn {
                    role: Speaker::Assistant,
                    text: text.clone(),
                    truncated: false,
                });
                next.state = S::Listening;
                vec![Action::CommitTurn { segment: *segment, payload: text }]
            }
            (S::Responding { segment, partial }, E::SpeechStart { .. }) => {
                let text = partial.concat();
                next.history.push(CommittedTurn {
                    role: Speaker::Assistant,
                    text: text.clone(),
                    truncated: true,
                });
                next.state = S::Listening;
                vec![
                    Action::AbortGeneration { segment: *segment },
                    Action::CommitPartial { segment: *segment, payload: text },
                ]
            }
            _ => return Err(self.violation(event)),
        };
        Ok((next, actions))
    }
}

pub trait ActivityDetector {
    /// Whether the audio of `segment` contains speech. Non-speech segments
    /// never reach the machine.
    fn is_speech(&self, segment: u64) -> bool;
}

pub trait Transcriber {
    fn transcribe(&self, segment: u64) -> String;
}

pub trait TurnDetector {
    fn detect(&self, text: &str) -> Verdict;
}

pub trait Responder {
    fn respond(&self, query: &str) -> Vec<String>;
}

/// Reference detectors: lookup tables with fixed fallbacks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableSuite {
    /// Segments listed as `false` are noise. Unlisted segments are speech.
    pub activity: HashMap<u64, bool>,
    /// Unlisted segments transcribe to the empty string.
    pub transcripts: HashMap<u64, String>,
    /// Unlisted texts are `Finished`.
    pub verdicts: HashMap<String, Verdict>,
    /// Unlisted queries get a single `"ok"` chunk.
    pub responses: HashMap<String, Vec<String>>,
}

impl ActivityDetector for TableSuite {
    fn is_speech(&self, segment: u64) -> bool {
        self.activity.get(&segment).copied().unwrap_or(true)
    }
}

impl Transcriber for TableSuite {
    fn transcribe(&self, segment: u64) -> String {
        self.transcripts.get(&segment).cloned().unwrap_or_default()
    }
}

impl TurnDetector for TableSuite {
    fn detect(&self, text: &str) -> Verdict {
        self.verdicts.get(text).copied().unwrap_or(Verdict::Finished)
    }
}

impl Responder for TableSuite {
    fn respond(&self, query: &str) -> Vec<String> {
        self.responses
            .get(query)
            .cloned()
            .unwrap_or_else(|| vec!["ok".to_string()])
    }
}

pub struct DetectorSuite<'a> {
    pub activity: &'a dyn ActivityDetector,
    pub transcriber: &'a dyn Transcriber,
    pub turn_detector: &'a dyn TurnDetector,
    pub responder: &'a dyn Responder,
}

impl<'a> DetectorSuite<'a> {
    pub fn from_table(table: &'a TableSuite) -> Self {
        DetectorSuite {
            activity: table,
            transcriber: table,
            turn_detector: table,
            responder: table,
        }
    }
}

/// One line of a trace file. Payload-bearing events may omit the payload,
/// in which case it is synthesized from the detector suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub kind: EventKind,
    pub segment: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl TraceRecord {
    pub fn new(kind: EventKind, segment: u64, payload: Option<&str>) -> Self {
        TraceRecord { kind, segment, payload: payload.map(str::to_string) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub log: Vec<Action>,
    pub machine: DuplexMachine,
}

/// Folds `step` over a trace.
pub fn run(trace: &[TraceRecord], suite: &DetectorSuite<'_>) -> Result<RunOutcome, DuplexError> {
    let mut machine = DuplexMachine::new();
    let mut log = Vec::new();
    let mut chunks: Vec<String> = Vec::new();
    let mut last_seen = 0u64;
    for (idx, rec) in trace.iter().enumerate() {
        if rec.segment < last_seen {
            return Err(DuplexError::Trace {
                line: idx + 1,
                message: format!("segment {} after {}", rec.segment, last_seen),
            });
        }
        last_seen = rec.segment;
        let segment = rec.segment;
        let event = match rec.kind {
            EventKind::SpeechStart | EventKind::SpeechEnd if !suite.activity.is_speech(segment) => continue,
            EventKind::SpeechStart => DuplexEvent::SpeechStart { segment },
            EventKind::SpeechEnd => DuplexEvent::SpeechEnd { segment },
            EventKind::Transcript => DuplexEvent::Transcript {
                segment,
                text: rec.payload.clone().unwrap_or_else(|| suite.transcriber.transcribe(segment)),
            },
            EventKind::Verdict => {
                let verdict = match rec.payload.as_deref() {
                    Some("finished") => Verdict::Finished,
                    Some("unfinished") => Verdict::Unfinished,
                    Some(other) => {
                        return Err(DuplexError::Trace {
                            line: idx + 1,
                            message: format!("unknown verdict {other:?}"),
                        })
                    }
                    None => match &machine.state {
                        DuplexState::AwaitingVerdict { text, .. } => suite.turn_detector.detect(text),
                        _ => Verdict::Finished,
                    },
                };
                DuplexEvent::Verdict { segment, verdict }
            }
            EventKind::ResponseChunk => {
                let text = match &rec.payload {
                    Some(p) => p.clone(),
                    None if chunks.is_empty() => String::new(),
                    None => chunks.remove(0),
                };
                DuplexEvent::ResponseChunk { segment, text }
            }
            EventKind::ResponseDone => DuplexEvent::ResponseDone { segment },
        };
        let (next, actions) = machine.step(&event)?;
        for a in &actions {
            if let Action::StartGeneration { payload, .. } = a {
                chunks = suite.responder.respond(payload);
            }
        }
        machine = next;
        log.extend(actions);
    }
    Ok(RunOutcome { log, machine })
}
