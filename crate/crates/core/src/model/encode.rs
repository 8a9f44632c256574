//! Turning dialogs into teacher-forced model streams.
//!
//! The response stream interleaves text (closed by the text EOS) with
//! delay-grid columns. Column `k` predicts layer 0 of frame `k` through
//! head 0 and cell `(j, k)` through head `j`. Head 0 predicts the audio end
//! marker at column `T`; the remaining columns only flush delayed layers.

use super::network::{softmax_in_place, ForwardPass, LogitGrads, ModelInput};
use super::params::Parameters;
use super::ModelError;
use crate::delay::apply_delay;
use crate::dialog::{AssembledContext, ContextItem};
use crate::interleaver::{interleave, interleave_streams, InterleaveConfig};
use crate::loss::{hybrid_nll, LossMask};
use crate::token_space::{AudioEosMode, VocabSpec};

/// One supervised dialog: a resolved context and the response to learn.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub context: Vec<ModelInput>,
    /// Response text without EOS.
    pub text: Vec<u32>,
    pub frames: Vec<Vec<u32>>,
}

/// What one input position is trained to predict.
#[derive(Debug, Clone, PartialEq)]
pub enum PosTarget {
    /// Text id on head 0, weight 1.
    Text(u32),
    /// A grid column: optional unified head-0 id and optional ids for heads
    /// `1..J`, each weighted `1/J`.
    Column { head0: Option<u32>, heads: Vec<Option<u32>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub inputs: Vec<ModelInput>,
    pub targets: Vec<Option<PosTarget>>,
    pub ctx_len: usize,
    /// Number of frames in the response.
    pub frames: usize,
    /// Text ids of the response including EOS.
    pub text: Vec<u32>,
    /// Unpadded frames, kept for the reference loss.
    frame_ids: Vec<Vec<u32>>,
    /// Input position predicting the `i`-th text item.
    text_pos: Vec<usize>,
    /// Input position predicting column `k`.
    column_pos: Vec<usize>,
}

/// Head-0 id that closes the audio stream.
pub fn audio_end_id(vocab: &VocabSpec) -> u32 {
    match vocab.audio_eos_mode {
        AudioEosMode::Dedicated => vocab.eos_audio_id,
        AudioEosMode::Inferred => vocab.eos_text_id,
    }
}

/// Number of stream columns for `frames` frames: the delay grid plus enough
/// trailing columns to carry the audio end marker and flush every layer.
pub fn stream_columns(frames: usize, j: usize) -> usize {
    frames + (j - 1).max(1)
}

/// Delay-grid columns padded to `stream_columns`.
pub fn padded_columns(frames: &[Vec<u32>], vocab: &VocabSpec) -> Result<Vec<Vec<u32>>, ModelError> {
    let mut cols = apply_delay(frames, &vocab.pad_audio_id)?.columns();
    cols.resize(stream_columns(frames.len(), vocab.j()), vocab.pad_audio_id.clone());
    Ok(cols)
}

fn column_target(k: usize, frames: &[Vec<u32>], vocab: &VocabSpec) -> PosTarget {
    let t = frames.len();
    let head0 = if k < t {
        Some(vocab.text_size + frames[k][0])
    } else if k == t {
        Some(audio_end_id(vocab))
    } else {
        None
    };
    let heads = (1..vocab.j())
        .map(|j| k.checked_sub(j).filter(|&f| f < t).map(|f| frames[f][j]))
        .collect();
    PosTarget::Column { head0, heads }
}

/// Builds inputs and per-position targets for teacher forcing.
pub fn encode(ex: &Example, vocab: &VocabSpec, cfg: InterleaveConfig) -> Result<Encoded, ModelError> {
    if ex.context.is_empty() {
        return Err(ModelError::Input { pos: 0, msg: "empty context".into() });
    }
    for (pos, &id) in ex.text.iter().enumerate() {
        vocab.check_text(id).map_err(|e| ModelError::Input { pos, msg: e.to_string() })?;
    }
    for frame in &ex.frames {
        vocab.check_token(&crate::token_space::HybridToken::AudioFrame(frame.clone()))?;
        if frame.iter().enumerate().any(|(j, &id)| vocab.is_pad(j, id)) {
            return Err(ModelError::Input { pos: 0, msg: "response frame contains a pad id".into() });
        }
    }
    let mut text = ex.text.clone();
    text.push(vocab.eos_text_id);
    let columns = padded_columns(&ex.frames, vocab)?;

    // (is_text, index) stream, then materialize
    let order = interleave_streams(
        (0..text.len()).map(|i| (true, i)).collect(),
        (0..columns.len()).map(|k| (false, k)).collect(),
        cfg,
    );
    let ctx_len = ex.context.len();
    let mut inputs = ex.context.clone();
    let mut targets = vec![None; ctx_len - 1];
    let mut text_pos = vec![0; text.len()];
    let mut column_pos = vec![0; columns.len()];
    for (r, &(is_text, idx)) in order.iter().enumerate() {
        let pos = ctx_len - 1 + r;
        if is_text {
            text_pos[idx] = pos;
            targets.push(Some(PosTarget::Text(text[idx])));
        } else {
            column_pos[idx] = pos;
            targets.push(Some(column_target(idx, &ex.frames, vocab)));
        }
        if r + 1 < order.len() {
            inputs.push(if is_text {
                ModelInput::Text(text[idx])
            } else {
                ModelInput::Audio(columns[idx].clone())
            });
        }
    }
    debug_assert_eq!(inputs.len(), targets.len());
    Ok(Encoded {
        inputs,
        targets,
        ctx_len,
        frames: ex.frames.len(),
        text,
        frame_ids: ex.frames.clone(),
        text_pos,
        column_pos,
    })
}

impl Encoded {
    /// Scored units: text items (with EOS), frames, and the audio end marker.
    pub fn units(&self) -> usize {
        self.text.len() + self.frames + 1
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Summed loss of one encoded example and, optionally, the logit gradients
/// (scaled by `scale`).
pub fn stream_loss(fp: &ForwardPass, enc: &Encoded, vocab: &VocabSpec, grads: Option<(&mut LogitGrads, f64)>) -> f64 {
    let w = 1.0 / vocab.j() as f64;
    let mut total = 0.0;
    let n0 = vocab.head0_size();
    let mut grads = grads;
    for (pos, target) in enc.targets.iter().enumerate() {
        let Some(target) = target else { continue };
        let mut score = |k: Option<usize>, id: u32, weight: f64| {
            let probs = match k {
                None => fp.head0(pos),
                Some(j) => fp.head(j, pos),
            };
            total -= weight * probs[id as usize].ln();
            if let Some((g, scale)) = grads.as_mut() {
                let (buf, n) = match k {
                    None => (&mut g.head0, n0),
                    Some(j) => {
                        let n = probs.len();
                        (&mut g.heads[j - 1], n)
                    }
                };
                let row = &mut buf[pos * n..(pos + 1) * n];
                for (gi, &p) in row.iter_mut().zip(probs) {
                    *gi += *scale * weight * p;
                }
                row[id as usize] -= *scale * weight;
            }
        };
        match target {
            PosTarget::Text(id) => score(None, *id, 1.0),
            PosTarget::Column { head0, heads } => {
                if let Some(id) = head0 {
                    score(None, *id, w);
                }
                for (k, id) in heads.iter().enumerate() {
                    if let Some(id) = id {
                        score(Some(k + 1), *id, w);
                    }
                }
            }
        }
    }
    total
}

/// The same loss computed a second way: predictions are regrouped per frame
/// and scored by `hybrid_nll` against the plain interleaved response, plus
/// the audio end marker term.
pub fn reference_loss(fp: &ForwardPass, enc: &Encoded, vocab: &VocabSpec, cfg: InterleaveConfig) -> Result<f64, ModelError> {
    let seq = interleave(&enc.text, &enc.frame_ids, cfg);
    let mut ti = 0;
    let mut fi = 0;
    let mut preds = Vec::with_capacity(seq.len());
    for item in &seq.items {
        if item.is_text() {
            preds.push(fp.prediction(enc.text_pos[ti]));
            ti += 1;
        } else {
            let mut p = fp.prediction(enc.column_pos[fi]);
            for j in 1..vocab.j() {
                p.heads[j - 1] = fp.head(j, enc.column_pos[fi + j]).to_vec();
            }
            preds.push(p);
            fi += 1;
        }
    }
    let report = hybrid_nll(&preds, &seq, &LossMask::all(seq.len()), vocab)?;
    let end = fp.head0(enc.column_pos[enc.frames])[audio_end_id(vocab) as usize];
    Ok(report.total - end.ln() / vocab.j() as f64)
}

/// Inserts one speaker position after the last user marker and one after
/// the last assistant marker. With `enabled` false the context is returned
/// unchanged.
pub fn inject_speaker(
    context: &[ModelInput],
    agent: &[f64],
    user: &[f64],
    params: &Parameters,
    enabled: bool,
) -> Result<Vec<ModelInput>, ModelError> {
    if !enabled {
        return Ok(context.to_vec());
    }
    let dim = params.config.speaker_dim;
    for v in [agent, user] {
        if v.len() != dim {
            return Err(ModelError::SpeakerWidth { got: v.len(), expected: dim });
        }
    }
    let markers = params.config.vocab.role_marker_ids;
    let last = |id: u32| {
        context
            .iter()
            .rposition(|x| *x == ModelInput::Text(id))
            .ok_or(ModelError::Input { pos: 0, msg: format!("no role marker {id} in context") })
    };
    let user_at = last(markers.user)?;
    let agent_at = last(markers.assistant)?;
    let mut out = Vec::with_capacity(context.len() + 2);
    for (i, item) in context.iter().enumerate() {
        out.push(item.clone());
        if i == user_at {
            out.push(ModelInput::Speaker(user.to_vec()));
        }
        if i == agent_at {
            out.push(ModelInput::Speaker(agent.to_vec()));
        }
    }
    Ok(out)
}

/// Fills the speaker slots of an assembled context with raw vectors.
pub fn resolve_context(
    ctx: &AssembledContext,
    agent: Option<&[f64]>,
    user: Option<&[f64]>,
) -> Result<Vec<ModelInput>, ModelError> {
    ctx.items
        .iter()
        .map(|item| {
            Ok(match item {
                ContextItem::Text(id) => ModelInput::Text(*id),
                ContextItem::Audio(col) => ModelInput::Audio(col.clone()),
                ContextItem::Feature(f) => ModelInput::Feature(f.clone()),
                ContextItem::AgentSpeaker => ModelInput::Speaker(agent.ok_or(ModelError::MissingSpeaker("agent"))?.to_vec()),
                ContextItem::UserSpeaker => ModelInput::Speaker(user.ok_or(ModelError::MissingSpeaker("user"))?.to_vec()),
            })
        })
        .collect()
}

/// Index of the most probable entry among `allowed`.
pub fn masked_argmax(probs: &[f64], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best = usize::MAX;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        if allowed(i) && p > best_p {
            best = i;
            best_p = p;
        }
    }
    best
}

/// Distribution over `allowed` entries after temperature scaling.
pub fn tempered(probs: &[f64], tau: f64, allowed: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut logits: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if allowed(i) && p > 0.0 { p.ln() / tau } else { f64::NEG_INFINITY })
        .collect();
    softmax_in_place(&mut logits);
    logits
}
