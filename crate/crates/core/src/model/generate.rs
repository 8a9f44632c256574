//! Schedule-driven decoding of hybrid responses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, weighted::WeightedIndex};
use serde_json::json;

use super::encode::{audio_end_id, masked_argmax, stream_columns, tempered};
use super::network::{forward, ModelInput};
use super::params::Parameters;
use super::ModelError;
use crate::delay::{delay_width, invert_delay, DelayGrid};
use crate::interleaver::{check_layout, interleave, modality_at, HybridRecord, InterleaveConfig};
use crate::token_space::{Modality, VocabSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decode {
    Greedy,
    Temperature { tau: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    /// Text tokens before EOS is forced.
    pub max_text: usize,
    /// Frames before the audio end marker is forced.
    pub max_frames: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_text: 64, max_frames: 128 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Response text without EOS.
    pub text: Vec<u32>,
    pub frames: Vec<Vec<u32>>,
    /// Emitted grid columns, including the flush tail.
    pub columns: Vec<Vec<u32>>,
    /// `T`/`A` per emitted stream item.
    pub stream_layout: String,
    /// A limit forced an end marker, or the context filled up.
    pub truncated: bool,
}

impl Generation {
    pub fn to_record(&self, cfg: InterleaveConfig) -> HybridRecord {
        let mut rec = HybridRecord::from_seq(&interleave(&self.text, &self.frames, cfg), cfg);
        rec.extra.insert("truncated".into(), json!(self.truncated));
        rec.extra.insert("columns".into(), json!(self.columns));
        rec.extra.insert("stream_layout".into(), json!(self.stream_layout));
        rec
    }
}

struct Picker {
    decode: Decode,
    rng: ChaCha8Rng,
}

impl Picker {
    fn pick(&mut self, probs: &[f64], allowed: impl Fn(usize) -> bool + Copy) -> usize {
        match self.decode {
            Decode::Greedy => masked_argmax(probs, allowed),
            Decode::Temperature { tau, .. } => {
                let dist = tempered(probs, tau, allowed);
                match WeightedIndex::new(&dist) {
                    Ok(w) => w.sample(&mut self.rng),
                    Err(_) => masked_argmax(probs, allowed),
                }
            }
        }
    }
}

fn text_allowed(vocab: &VocabSpec, id: usize) -> bool {
    let id = id as u32;
    id < vocab.text_size && id != vocab.bos_id && id != vocab.eos_audio_id && !vocab.is_role_marker(id)
}

/// Decodes a response after `context`.
///
/// Each step recomputes the full forward pass. Text steps pick from the
/// text block; audio steps emit one delay-grid column, head 0 choosing a
/// layer-0 id or the audio end marker and head `j` filling layer `j` of
/// frame `k - j`. After the end marker the remaining layers are flushed.
/// Decoding stops once both streams are closed.
pub fn generate(
    params: &Parameters,
    context: &[ModelInput],
    cfg: InterleaveConfig,
    decode: Decode,
    limits: Limits,
) -> Result<Generation, ModelError> {
    if limits.max_text == 0 || limits.max_frames == 0 {
        return Err(ModelError::Limits);
    }
    if let Decode::Temperature { tau, .. } = decode {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(ModelError::Config(format!("temperature must be positive, got {tau}")));
        }
    }
    cfg.validate()?;
    if context.is_empty() {
        return Err(ModelError::Input { pos: 0, msg: "empty context".into() });
    }
    let vocab = &params.config.vocab;
    let j = vocab.j();
    let seed = match decode {
        Decode::Temperature { seed, .. } => seed,
        Decode::Greedy => 0,
    };
    let mut picker = Picker { decode, rng: ChaCha8Rng::seed_from_u64(seed) };
    let end_id = audio_end_id(vocab);
    let text_size = vocab.text_size as usize;

    let mut inputs = context.to_vec();
    let mut text = Vec::new();
    let mut text_done = false;
    let mut columns: Vec<Vec<u32>> = Vec::new();
    let mut end_col: Option<usize> = None;
    let mut audio_done = false;
    let mut truncated = false;
    let mut layout = String::new();

    loop {
        let text_items = text.len() + usize::from(text_done);
        if text_done && audio_done {
            break;
        }
        if inputs.len() > params.config.max_seq {
            truncated = true;
            break;
        }
        let fp = forward(params, &inputs)?;
        let pos = inputs.len() - 1;
        let totals = (text_done.then_some(text_items), audio_done.then_some(columns.len()));
        let item = match modality_at((text_items, columns.len()), cfg, totals) {
            Modality::Text => {
                let id = if text.len() >= limits.max_text {
                    truncated = true;
                    vocab.eos_text_id
                } else {
                    picker.pick(fp.head0(pos), |i| text_allowed(vocab, i)) as u32
                };
                layout.push('T');
                if id == vocab.eos_text_id {
                    text_done = true;
                } else {
                    text.push(id);
                }
                ModelInput::Text(id)
            }
            Modality::Audio => {
                let k = columns.len();
                let mut col = vocab.pad_audio_id.clone();
                if end_col.is_none() {
                    if k >= limits.max_frames {
                        truncated = true;
                        end_col = Some(k);
                    } else {
                        let pad0 = text_size + vocab.pad(0) as usize;
                        let id = picker.pick(fp.head0(pos), |i| {
                            (i >= text_size && i != pad0) || i as u32 == end_id
                        });
                        if id >= text_size {
                            col[0] = (id - text_size) as u32;
                        } else {
                            end_col = Some(k);
                        }
                    }
                }
                let frames_started = end_col.unwrap_or(k + 1);
                for (layer, cell) in col.iter_mut().enumerate().skip(1) {
                    if k >= layer && k - layer < frames_started {
                        let pad = vocab.pad(layer) as usize;
                        *cell = picker.pick(fp.head(layer, pos), |i| i != pad) as u32;
                    }
                }
                columns.push(col.clone());
                layout.push('A');
                if let Some(t) = end_col {
                    if columns.len() == stream_columns(t, j) {
                        audio_done = true;
                    }
                }
                ModelInput::Audio(col)
            }
        };
        if !(text_done && audio_done) {
            inputs.push(item);
        }
    }

    let t = end_col.unwrap_or(0);
    let frames = if audio_done {
        let width = delay_width(t, j);
        invert_delay(&DelayGrid::from_columns(&columns[..width], vocab.pad_audio_id.clone())?)?
    } else {
        // context filled up: keep frames whose every layer was emitted
        let started = end_col.unwrap_or(columns.len());
        (0..started)
            .take_while(|f| f + j - 1 < columns.len())
            .map(|f| (0..j).map(|layer| columns[f + layer][layer]).collect())
            .collect()
    };
    if text_done && audio_done {
        check_layout(layout.chars().map(|c| if c == 'T' { Modality::Text } else { Modality::Audio }), cfg)?;
    }
    Ok(Generation { text, frames, columns, stream_layout: layout, truncated })
}

/// Fraction of reference tokens reproduced in place: text ids plus every
/// codebook cell. Length mismatches count against the score.
pub fn token_accuracy(generated: &Generation, text: &[u32], frames: &[Vec<u32>]) -> f64 {
    let text_hits = generated.text.iter().zip(text).filter(|(a, b)| a == b).count();
    let cell_hits: usize = generated
        .frames
        .iter()
        .zip(frames)
        .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x == y).count())
        .sum();
    let width = frames.first().map_or(0, Vec::len);
    let total = text.len().max(generated.text.len()) + width * frames.len().max(generated.frames.len());
    if total == 0 {
        1.0
    } else {
        (text_hits + cell_hits) as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::encode::{encode, Example};

    fn setup() -> (Parameters, Vec<ModelInput>, InterleaveConfig) {
        let mut cfg = ModelConfig::tiny(VocabSpec::uniform(24, 8, 3));
        cfg.max_seq = 128;
        cfg.init_std = 0.5;
        let v = cfg.vocab.clone();
        let ctx = vec![ModelInput::Text(v.role_marker_ids.user), ModelInput::Text(4), ModelInput::Text(v.role_marker_ids.assistant)];
        (Parameters::init(&cfg), ctx, InterleaveConfig::new(2, 3).unwrap())
    }

    #[test]
    fn greedy_is_deterministic_and_well_formed() {
        let (p, ctx, cfg) = setup();
        let limits = Limits { max_text: 6, max_frames: 9 };
        let a = generate(&p, &ctx, cfg, Decode::Greedy, limits).unwrap();
        let b = generate(&p, &ctx, cfg, Decode::Greedy, limits).unwrap();
        assert_eq!(a, b);
        assert!(a.text.len() <= 6 && a.frames.len() <= 9);
        let rec = a.to_record(cfg);
        rec.to_seq().unwrap();
        check_layout(a.stream_layout.chars().map(|c| if c == 'T' { Modality::Text } else { Modality::Audio }), cfg).unwrap();
    }

    #[test]
    fn temperature_is_seeded() {
        let (p, ctx, cfg) = setup();
        let limits = Limits { max_text: 5, max_frames: 6 };
        let d = |seed| Decode::Temperature { tau: 1.5, seed };
        let a = generate(&p, &ctx, cfg, d(3), limits).unwrap();
        assert_eq!(a, generate(&p, &ctx, cfg, d(3), limits).unwrap());
        assert!(generate(&p, &ctx, cfg, Decode::Temperature { tau: 0.0, seed: 0 }, limits).is_err());
    }

    #[test]
    fn accuracy_counts_cells_and_length() {
        let g = Generation {
            text: vec![1, 2],
            frames: vec![vec![1, 1], vec![2, 2]],
            columns: Vec::new(),
            stream_layout: String::new(),
            truncated: false,
        };
        assert_eq!(token_accuracy(&g, &[1, 2], &[vec![1, 1], vec![2, 2]]), 1.0);
        assert_eq!(token_accuracy(&g, &[1, 3], &[vec![1, 0], vec![2, 2]]), 4.0 / 6.0);
        assert_eq!(token_accuracy(&g, &[1, 2, 3], &[vec![1, 1]]), 4.0 / 7.0);
    }

    #[test]
    fn zero_limits_rejected() {
        let (p, ctx, cfg) = setup();
        assert!(matches!(
            generate(&p, &ctx, cfg, Decode::Greedy, Limits { max_text: 0, max_frames: 1 }),
            Err(ModelError::Limits)
        ));
    }

    #[test]
    fn teacher_forcing_reproduces_greedy_choices() {
        let (p, ctx, cfg) = setup();
        let g = generate(&p, &ctx, cfg, Decode::Greedy, Limits { max_text: 4, max_frames: 5 }).unwrap();
        if g.truncated {
            return;
        }
        let v = &p.config.vocab;
        let enc = encode(&Example { context: ctx.clone(), text: g.text.clone(), frames: g.frames.clone() }, v, cfg).unwrap();
        let fp = forward(&p, &enc.inputs).unwrap();
        for (pos, target) in enc.targets.iter().enumerate() {
            if let Some(crate::model::encode::PosTarget::Column { heads, .. }) = target {
                for (k, id) in heads.iter().enumerate() {
                    if let Some(id) = id {
                        let pad = v.pad(k + 1) as usize;
                        assert_eq!(masked_argmax(fp.head(k + 1, pos), |i| i != pad), *id as usize);
                    }
                }
            }
        }
    }
}
