//! Dialog corpora for the toy model: grouping transcript lines into
//! supervised samples, and a seeded synthetic set for overfit runs.
//!
//! A corpus is a transcript file (one turn per line) whose lines carry a
//! `dialog` field. The last turn of each dialog is the assistant response
//! to learn; its `speaker_ref` names the agent voice. Speaker vectors live
//! in a separate file of `{"id", "vector"}` lines.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dialog::{assemble_context, ContextConfig, Query, Role, Turn, TurnRecord};
use crate::model::{resolve_context, Example, ModelError};
use crate::token_space::VocabSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogSample {
    pub id: String,
    pub history: Vec<Turn>,
    /// The current user turn.
    pub query: Turn,
    /// The assistant turn to learn or reproduce.
    pub response: Turn,
}

impl DialogSample {
    pub fn to_records(&self) -> Vec<TurnRecord> {
        self.history
            .iter()
            .chain([&self.query, &self.response])
            .map(|t| {
                let mut extra = serde_json::Map::new();
                extra.insert("dialog".into(), json!(self.id));
                TurnRecord { turn: t.clone(), extra }
            })
            .collect()
    }
}

/// Groups consecutive transcript lines by their `dialog` field. Each dialog
/// must end with a user turn followed by an assistant turn; with
/// `prompts_only` the assistant turn may be missing and is left empty.
pub fn group_dialogs(records: &[TurnRecord], prompts_only: bool) -> Result<Vec<DialogSample>, ModelError> {
    let mut groups: Vec<(String, Vec<Turn>)> = Vec::new();
    for (line, rec) in records.iter().enumerate() {
        let id = rec
            .extra
            .get("dialog")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ModelError::Config(format!("record {}: missing string field `dialog`", line + 1)))?;
        match groups.last_mut() {
            Some((last, turns)) if last == id => turns.push(rec.turn.clone()),
            _ => groups.push((id.to_string(), vec![rec.turn.clone()])),
        }
    }
    groups
        .into_iter()
        .map(|(id, mut turns)| {
            let response = match turns.last() {
                Some(t) if t.role == Role::Assistant => turns.pop(),
                _ if prompts_only => Some(Turn::text(Role::Assistant, Vec::new())),
                _ => None,
            };
            let query = turns.pop().filter(|t| t.role == Role::User);
            match (query, response) {
                (Some(query), Some(response)) => Ok(DialogSample { id, history: turns, query, response }),
                _ => Err(ModelError::Config(format!("dialog {id}: must end with a user turn then an assistant turn"))),
            }
        })
        .collect()
}

pub fn speaker_table(records: &[SpeakerRecord]) -> BTreeMap<String, Vec<f64>> {
    records.iter().map(|r| (r.id.clone(), r.vector.clone())).collect()
}

/// Model-ready example for one dialog. Speaker vectors are looked up only
/// when injection is on.
pub fn build_example(
    sample: &DialogSample,
    speakers: &BTreeMap<String, Vec<f64>>,
    vocab: &VocabSpec,
    cfg: ContextConfig,
) -> Result<Example, ModelError> {
    let query = match &sample.query.audio {
        Some(frames) => Query::Audio(frames.clone()),
        None => Query::Text(sample.query.text.clone()),
    };
    let ctx = assemble_context(&sample.history, &query, vocab, cfg)?;
    let lookup = |turn: &Turn, who: &'static str| -> Result<Option<Vec<f64>>, ModelError> {
        if !cfg.inject_speakers {
            return Ok(None);
        }
        let key = turn.speaker_ref.as_ref().ok_or(ModelError::MissingSpeaker(who))?;
        speakers
            .get(key)
            .cloned()
            .map(Some)
            .ok_or_else(|| ModelError::Config(format!("unknown speaker `{key}`")))
    };
    let agent = lookup(&sample.response, "agent")?;
    let user = lookup(&sample.query, "user")?;
    Ok(Example {
        context: resolve_context(&ctx, agent.as_deref(), user.as_deref())?,
        text: sample.response.text.clone(),
        frames: sample.response.audio.clone().unwrap_or_default(),
    })
}

/// Shape of the synthetic overfit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub prompts: usize,
    pub voices: usize,
    pub query_len: usize,
    pub text_len: usize,
    pub frames: usize,
    /// Every `history_every`-th prompt carries one earlier exchange.
    pub history_every: usize,
    pub speaker_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            prompts: 16,
            voices: 2,
            query_len: 3,
            text_len: 4,
            frames: 8,
            history_every: 4,
            speaker_dim: 8,
            seed: 0,
        }
    }
}

/// Vocabulary of the overfit experiment: 64 text ids, four codebooks of 32.
pub fn overfit_vocab() -> VocabSpec {
    VocabSpec::uniform(64, 32, 4)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Prompts share their text response across voices; the audio differs per
/// voice, so only the agent vector tells the voices apart.
pub fn synthesize(cfg: &SyntheticConfig, vocab: &VocabSpec) -> (Vec<DialogSample>, Vec<SpeakerRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let content = vocab.bos_id; // reserved ids sit above every content id
    let text = |rng: &mut ChaCha8Rng, len: usize| -> Vec<u32> { (0..len).map(|_| rng.random_range(0..content)).collect() };
    let mut speakers: Vec<SpeakerRecord> = (0..cfg.voices)
        .map(|v| SpeakerRecord { id: format!("agent{v}"), vector: unit_vector(&mut rng, cfg.speaker_dim) })
        .collect();
    speakers.push(SpeakerRecord { id: "user0".into(), vector: unit_vector(&mut rng, cfg.speaker_dim) });

    let mut samples = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for p in 0..cfg.prompts {
        let query = loop {
            let q = text(&mut rng, cfg.query_len);
            if seen.insert(q.clone()) {
                break q;
            }
        };
        let reply = text(&mut rng, cfg.text_len);
        let history = if cfg.history_every > 0 && p % cfg.history_every == 0 {
            vec![
                Turn { speaker_ref: Some("user0".into()), ..Turn::text(Role::User, text(&mut rng, 2)) },
                Turn::text(Role::Assistant, text(&mut rng, 2)),
            ]
        } else {
            Vec::new()
        };
        for (v, speaker) in speakers.iter().take(cfg.voices).enumerate() {
            let frames: Vec<Vec<u32>> = (0..cfg.frames)
                .map(|_| (0..vocab.j()).map(|j| rng.random_range(0..vocab.pad(j))).collect())
                .collect();
            samples.push(DialogSample {
                id: format!("p{p}v{v}"),
                history: history.clone(),
                query: Turn { speaker_ref: Some("user0".into()), ..Turn::text(Role::User, query.clone()) },
                response: Turn {
                    speaker_ref: Some(speaker.id.clone()),
                    ..Turn::text(Role::Assistant, reply.clone()).with_audio(frames)
                },
            });
        }
    }
    (samples, speakers)
}
