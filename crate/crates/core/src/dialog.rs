//! Multi-turn conversation state.
//!
//! History keeps the user's turns as they were (text or speech) and drops the
//! speech of assistant turns, keeping only their text. Context assembly lays
//! out the model input with optional speaker-embedding slots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token_space::VocabSpec;

#[derive(Debug, Error, PartialEq)]
pub enum DialogError {
    #[error("no speaker samples")]
    NoSamples,
    #[error("sample {index} has width {got}, expected {expected}")]
    Width { index: usize, got: usize, expected: usize },
    #[error("averaged speaker embedding has zero norm")]
    ZeroNorm,
    #[error("non-finite value in speaker embedding")]
    NonFinite,
    #[error("context needs {needed} positions but only {max} fit; drop {overflow} (oldest turns first: {turns_to_drop} turns)")]
    ContextOverflow {
        needed: usize,
        max: usize,
        overflow: usize,
        turns_to_drop: usize,
    },
    #[error("system turns cannot carry audio")]
    SystemAudio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "frames")]
    pub audio: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_ref: Option<String>,
}

impl Turn {
    pub fn text(role: Role, text: Vec<u32>) -> Self {
        Turn { role, text, audio: None, speaker_ref: None }
    }

    pub fn with_audio(mut self, frames: Vec<Vec<u32>>) -> Self {
        self.audio = Some(frames);
        self
    }

    pub fn validate(&self) -> Result<(), DialogError> {
        if self.role == Role::System && self.audio.is_some() {
            return Err(DialogError::SystemAudio);
        }
        Ok(())
    }
}

/// One line of a dialog transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    #[serde(flatten)]
    pub turn: Turn,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Unit-length speaker vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn normalized(raw: &[f64]) -> Result<Self, DialogError> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(DialogError::NonFinite);
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(DialogError::ZeroNorm);
        }
        Ok(SpeakerEmbedding { vector: raw.iter().map(|x| x / norm).collect() })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Drops assistant speech, keeping everything else.
pub fn compact_history(turns: &[Turn]) -> Vec<Turn> {
    turns
        .iter()
        .map(|t| match t.role {
            Role::Assistant => Turn { audio: None, ..t.clone() },
            _ => t.clone(),
        })
        .collect()
}

/// Mean of the samples, renormalized to unit length.
pub fn average_speaker_embeddings(samples: &[Vec<f64>]) -> Result<SpeakerEmbedding, DialogError> {
    let first = samples.first().ok_or(DialogError::NoSamples)?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for (index, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(DialogError::Width { index, got: s.len(), expected: dim });
        }
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= samples.len() as f64;
    }
    SpeakerEmbedding::normalized(&mean)
}

/// One position of an assembled model input.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextItem {
    Text(u32),
    /// A delay-grid column (pads allowed).
    Audio(Vec<u32>),
    /// Virtual position filled by the projected agent speaker vector.
    AgentSpeaker,
    /// Virtual position filled by the projected user speaker vector.
    UserSpeaker,
    /// Continuous encoder feature routed through the adapter.
    Feature(Vec<f64>),
}

/// The current user query: text tokens, codec frames, or encoder features.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Text(Vec<u32>),
    Audio(Vec<Vec<u32>>),
    Features(Vec<Vec<f64>>),
}

impl Query {
    fn items(&self) -> Vec<ContextItem> {
        match self {
            Query::Text(t) => t.iter().map(|&id| ContextItem::Text(id)).collect(),
            Query::Audio(frames) => frames.iter().cloned().map(ContextItem::Audio).collect(),
            Query::Features(f) => f.iter().cloned().map(ContextItem::Feature).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextConfig {
    pub inject_speakers: bool,
    pub max_seq: usize,
    /// Room to leave after the context for the response.
    pub reserve: usize,
    pub system_prompt: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledContext {
    pub items: Vec<ContextItem>,
    pub agent_slot: Option<usize>,
    pub user_slot: Option<usize>,
}

impl AssembledContext {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn marker(role: Role, vocab: &VocabSpec) -> u32 {
    let m = vocab.role_marker_ids;
    match role {
        Role::User => m.user,
        Role::Assistant => m.assistant,
        Role::System => m.system,
    }
}

fn turn_items(turn: &Turn, vocab: &VocabSpec) -> Vec<ContextItem> {
    let mut items = vec![ContextItem::Text(marker(turn.role, vocab))];
    items.extend(turn.text.iter().map(|&id| ContextItem::Text(id)));
    if let Some(frames) = &turn.audio {
        items.extend(frames.iter().cloned().map(ContextItem::Audio));
    }
    items
}

/// Lays out `[system?][history][user][user spk][query][assistant][agent spk]`.
///
/// History is compacted first. Speaker slots are present only when
/// injection is on; the returned positions tell the model where to write the
/// projected vectors. When the layout does not fit `max_seq - reserve`, the
/// error reports how many positions and oldest turns must go.
pub fn assemble_context(
    history: &[Turn],
    query: &Query,
    vocab: &VocabSpec,
    cfg: ContextConfig,
) -> Result<AssembledContext, DialogError> {
    for t in history {
        t.validate()?;
    }
    let history = compact_history(history);
    let mut items = Vec::new();
    if cfg.system_prompt {
        items.push(ContextItem::Text(vocab.role_marker_ids.system));
    }
    let turn_blocks: Vec<Vec<ContextItem>> = history.iter().map(|t| turn_items(t, vocab)).collect();
    for block in &turn_blocks {
        items.extend(block.iter().cloned());
    }
    items.push(ContextItem::Text(vocab.role_marker_ids.user));
    let user_slot = cfg.inject_speakers.then(|| {
        items.push(ContextItem::UserSpeaker);
        items.len() - 1
    });
    items.extend(query.items());
    items.push(ContextItem::Text(vocab.role_marker_ids.assistant));
    let agent_slot = cfg.inject_speakers.then(|| {
        items.push(ContextItem::AgentSpeaker);
        items.len() - 1
    });

    let budget = cfg.max_seq.saturating_sub(cfg.reserve);
    if items.len() > budget {
        let overflow = items.len() - budget;
        let mut dropped = 0;
        let mut turns_to_drop = 0;
        for block in &turn_blocks {
            if dropped >= overflow {
                break;
            }
            dropped += block.len();
            turns_to_drop += 1;
        }
        return Err(DialogError::ContextOverflow {
            needed: items.len(),
            max: budget,
            overflow,
            turns_to_drop,
        });
    }
    Ok(AssembledContext { items, agent_slot, user_slot })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> VocabSpec {
        VocabSpec::uniform(32, 8, 2)
    }

    fn cfg(inject: bool) -> ContextConfig {
        ContextConfig { inject_speakers: inject, max_seq: 64, reserve: 0, system_prompt: false }
    }

    #[test]
    fn compaction_drops_assistant_audio_only() {
        let user = Turn::text(Role::User, vec![1]).with_audio(vec![vec![1, 2]]);
        let asst = Turn::text(Role::Assistant, vec![2]).with_audio(vec![vec![3, 4]]);
        let out = compact_history(&[user.clone(), asst]);
        assert_eq!(out, vec![user, Turn::text(Role::Assistant, vec![2])]);
        assert_eq!(compact_history(&out), out);
        assert!(compact_history(&[]).is_empty());
    }

    #[test]
    fn skeleton_layout() {
        let v = vocab();
        let m = v.role_marker_ids;
        let ctx = assemble_context(&[], &Query::Text(vec![5]), &v, cfg(true)).unwrap();
        assert_eq!(
            ctx.items,
            vec![
                ContextItem::Text(m.user),
                ContextItem::UserSpeaker,
                ContextItem::Text(5),
                ContextItem::Text(m.assistant),
                ContextItem::AgentSpeaker,
            ]
        );
        assert_eq!(ctx.user_slot, Some(1));
        assert_eq!(ctx.agent_slot, Some(4));

        let plain = assemble_context(&[], &Query::Text(vec![5]), &v, cfg(false)).unwrap();
        assert_eq!(
            plain.items,
            vec![ContextItem::Text(m.user), ContextItem::Text(5), ContextItem::Text(m.assistant)]
        );
        assert_eq!(plain.agent_slot, None);
    }

    #[test]
    fn history_is_compacted_in_context() {
        let v = vocab();
        let hist = vec![
            Turn::text(Role::User, vec![1]),
            Turn::text(Role::Assistant, vec![2]).with_audio(vec![vec![0, 0]; 10]),
        ];
        let ctx = assemble_context(&hist, &Query::Text(vec![3]), &v, cfg(false)).unwrap();
        assert!(!ctx.items.iter().any(|i| matches!(i, ContextItem::Audio(_))));
        assert_eq!(ctx.len(), 2 + 2 + 3);
    }

    #[test]
    fn overflow_reports_amount() {
        let v = vocab();
        let hist: Vec<Turn> = (0..10).map(|i| Turn::text(Role::User, vec![i; 5])).collect();
        let err = assemble_context(
            &hist,
            &Query::Text(vec![1]),
            &v,
            ContextConfig { max_seq: 20, ..cfg(false) },
        )
        .unwrap_err();
        // 10 turns of 6 + 3 = 63 positions
        assert_eq!(
            err,
            DialogError::ContextOverflow { needed: 63, max: 20, overflow: 43, turns_to_drop: 8 }
        );
    }

    #[test]
    fn speaker_averaging() {
        let single = average_speaker_embeddings(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(single.vector(), &[0.6, 0.8]);
        let e = vec![1.0, 2.0, 2.0];
        let twice = average_speaker_embeddings(&[e.clone(), e.clone()]).unwrap();
        assert_eq!(twice, SpeakerEmbedding::normalized(&e).unwrap());
        let diag = average_speaker_embeddings(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((diag.vector()[0] - h).abs() < 1e-15 && (diag.vector()[1] - h).abs() < 1e-15);
        assert!((diag.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn speaker_averaging_errors() {
        assert_eq!(average_speaker_embeddings(&[]), Err(DialogError::NoSamples));
        assert_eq!(
            average_speaker_embeddings(&[vec![1.0], vec![1.0, 2.0]]),
            Err(DialogError::Width { index: 1, got: 2, expected: 1 })
        );
        assert_eq!(
            average_speaker_embeddings(&[vec![1.0], vec![-1.0]]),
            Err(DialogError::ZeroNorm)
        );
    }

    #[test]
    fn averaging_is_permutation_invariant() {
        let samples = vec![vec![0.3, -1.0, 2.0], vec![1.5, 0.25, -0.5], vec![-0.7, 0.9, 0.1]];
        let a = average_speaker_embeddings(&samples).unwrap();
        let mut rev = samples.clone();
        rev.reverse();
        let b = average_speaker_embeddings(&rev).unwrap();
        for (x, y) in a.vector().iter().zip(b.vector()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn transcript_line_fields() {
        let t = Turn {
            role: Role::Assistant,
            text: vec![1, 2],
            audio: Some(vec![vec![3, 4]]),
            speaker_ref: Some("voice-a".into()),
        };
        let line = serde_json::to_string(&TurnRecord { turn: t.clone(), extra: Default::default() }).unwrap();
        assert_eq!(line, r#"{"role":"assistant","text":[1,2],"frames":[[3,4]],"speaker_ref":"voice-a"}"#);
        let back: TurnRecord = serde_json::from_str(r#"{"role":"user","text":[7],"dialog":"d1"}"#).unwrap();
        assert_eq!(back.turn, Turn::text(Role::User, vec![7]));
        assert_eq!(back.extra["dialog"], "d1");
    }
}
