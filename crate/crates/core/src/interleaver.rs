//! n:m block interleaving of text tokens and audio frames.
//!
//! The layout is `[Y[0..n], Z[0..m], Y[n..2n], Z[m..2m], ...]`. Whichever
//! stream runs out first lets the other one flush its remainder contiguously.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token_space::{HybridToken, Modality};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InterleaveError {
    #[error("block sizes must be at least 1 (got n={n}, m={m})")]
    InvalidRatio { n: usize, m: usize },
    #[error("schedule violation at position {0}")]
    Schedule(usize),
    #[error("record layout: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleaveConfig {
    pub n: usize,
    pub m: usize,
}

impl Default for InterleaveConfig {
    /// 4:12 has no special meaning; training runs should set the ratio.
    fn default() -> Self {
        InterleaveConfig { n: 4, m: 12 }
    }
}

impl InterleaveConfig {
    pub fn new(n: usize, m: usize) -> Result<Self, InterleaveError> {
        let cfg = InterleaveConfig { n, m };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), InterleaveError> {
        if self.n == 0 || self.m == 0 {
            return Err(InterleaveError::InvalidRatio { n: self.n, m: self.m });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HybridSeq {
    pub items: Vec<HybridToken>,
}

impl HybridSeq {
    pub fn new(items: Vec<HybridToken>) -> Self {
        HybridSeq { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let text = self.items.iter().filter(|t| t.is_text()).count();
        (text, self.items.len() - text)
    }

    /// `T`/`A` string of the modality layout.
    pub fn layout(&self) -> String {
        self.items
            .iter()
            .map(|t| if t.is_text() { 'T' } else { 'A' })
            .collect()
    }
}

/// Next modality given how many tokens of each stream were emitted.
///
/// A `None` total means the stream length is not known yet (generation).
/// A known total that has been reached marks that stream exhausted.
pub fn modality_at(
    used: (usize, usize),
    cfg: InterleaveConfig,
    total: (Option<usize>, Option<usize>),
) -> Modality {
    let (text_used, audio_used) = used;
    if total.0.is_some_and(|t| text_used >= t) {
        return Modality::Audio;
    }
    if total.1.is_some_and(|a| audio_used >= a) {
        return Modality::Text;
    }
    // text block k precedes audio block k
    if text_used / cfg.n <= audio_used / cfg.m {
        Modality::Text
    } else {
        Modality::Audio
    }
}

pub fn interleave(text: &[u32], frames: &[Vec<u32>], cfg: InterleaveConfig) -> HybridSeq {
    let text_tokens: Vec<HybridToken> = text.iter().map(|&t| HybridToken::Text(t)).collect();
    let audio_tokens: Vec<HybridToken> = frames.iter().cloned().map(HybridToken::AudioFrame).collect();
    HybridSeq::new(interleave_streams(text_tokens, audio_tokens, cfg))
}

/// Interleaves two streams of any item type following the n:m schedule.
pub fn interleave_streams<T>(text: Vec<T>, audio: Vec<T>, cfg: InterleaveConfig) -> Vec<T> {
    let total = (text.len(), audio.len());
    let mut out = Vec::with_capacity(total.0 + total.1);
    let mut text_iter = text.into_iter();
    let mut audio_iter = audio.into_iter();
    let (mut ti, mut ai) = (0, 0);
    while ti + ai < total.0 + total.1 {
        match modality_at((ti, ai), cfg, (Some(total.0), Some(total.1))) {
            Modality::Text => {
                out.extend(text_iter.next());
                ti += 1;
            }
            Modality::Audio => {
                out.extend(audio_iter.next());
                ai += 1;
            }
        }
    }
    out
}

/// Splits a sequence into its text ids and audio frames, preserving order.
pub fn deinterleave(seq: &HybridSeq) -> (Vec<u32>, Vec<Vec<u32>>) {
    let mut text = Vec::new();
    let mut frames = Vec::new();
    for item in &seq.items {
        match item {
            HybridToken::Text(id) => text.push(*id),
            HybridToken::AudioFrame(ids) => frames.push(ids.clone()),
        }
    }
    (text, frames)
}

/// Checks a modality sequence against the layout `interleave` would produce
/// for the same counts. Returns the first offending position.
pub fn check_layout<I>(modalities: I, cfg: InterleaveConfig) -> Result<(), InterleaveError>
where
    I: IntoIterator<Item = Modality>,
    I::IntoIter: Clone,
{
    let iter = modalities.into_iter();
    let (mut text_total, mut audio_total) = (0, 0);
    for m in iter.clone() {
        match m {
            Modality::Text => text_total += 1,
            Modality::Audio => audio_total += 1,
        }
    }
    let total = (Some(text_total), Some(audio_total));
    let (mut ti, mut ai) = (0, 0);
    for (pos, m) in iter.enumerate() {
        if modality_at((ti, ai), cfg, total) != m {
            return Err(InterleaveError::Schedule(pos));
        }
        match m {
            Modality::Text => ti += 1,
            Modality::Audio => ai += 1,
        }
    }
    Ok(())
}

pub fn check_schedule(seq: &HybridSeq, cfg: InterleaveConfig) -> Result<(), InterleaveError> {
    check_layout(seq.items.iter().map(HybridToken::modality), cfg)
}

/// Line-delimited serialized form of an interleaved sequence.
///
/// `layout` is derived from the other fields and checked on decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridRecord {
    pub text: Vec<u32>,
    pub frames: Vec<Vec<u32>>,
    pub schedule: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl HybridRecord {
    pub fn from_seq(seq: &HybridSeq, cfg: InterleaveConfig) -> Self {
        let (text, frames) = deinterleave(seq);
        HybridRecord {
            text,
            frames,
            schedule: (cfg.n, cfg.m),
            layout: Some(seq.layout()),
            extra: Default::default(),
        }
    }

    pub fn config(&self) -> Result<InterleaveConfig, InterleaveError> {
        InterleaveConfig::new(self.schedule.0, self.schedule.1)
    }

    pub fn to_seq(&self) -> Result<HybridSeq, InterleaveError> {
        let cfg = self.config()?;
        let seq = interleave(&self.text, &self.frames, cfg);
        if let Some(layout) = &self.layout {
            if *layout != seq.layout() {
                let pos = layout
                    .chars()
                    .zip(seq.layout().chars())
                    .position(|(a, b)| a != b)
                    .unwrap_or(layout.len().min(seq.len()));
                return Err(InterleaveError::Record(format!(
                    "layout disagrees with schedule ({}, {}) at position {pos}",
                    cfg.n, cfg.m
                )));
            }
        }
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(i: u32) -> HybridToken {
        HybridToken::Text(i)
    }
    fn f(i: u32) -> HybridToken {
        HybridToken::AudioFrame(vec![i])
    }
    fn frames(n: u32) -> Vec<Vec<u32>> {
        (0..n).map(|i| vec![i]).collect()
    }

    #[test]
    fn two_three_schedule() {
        let cfg = InterleaveConfig::new(2, 3).unwrap();
        let seq = interleave(&[0, 1, 2, 3], &frames(6), cfg);
        assert_eq!(seq.items, vec![t(0), t(1), f(0), f(1), f(2), t(2), t(3), f(3), f(4), f(5)]);
    }

    #[test]
    fn text_exhausted_flushes_audio() {
        let cfg = InterleaveConfig::new(2, 3).unwrap();
        let seq = interleave(&[0], &frames(3), cfg);
        assert_eq!(seq.items, vec![t(0), f(0), f(1), f(2)]);
        let seq = interleave(&[], &frames(2), cfg);
        assert_eq!(seq.items, vec![f(0), f(1)]);
    }

    #[test]
    fn audio_exhausted_flushes_text() {
        let cfg = InterleaveConfig::new(2, 3).unwrap();
        let seq = interleave(&[0, 1, 2, 3, 4], &frames(1), cfg);
        assert_eq!(seq.layout(), "TTATTT");
    }

    #[test]
    fn zero_block_rejected() {
        assert!(InterleaveConfig::new(0, 3).is_err());
        assert!(InterleaveConfig::new(2, 0).is_err());
    }

    #[test]
    fn deinterleave_examples() {
        let seq = HybridSeq::new(vec![t(0), t(1), f(0), f(1), f(2), t(2), t(3), f(3), f(4), f(5)]);
        assert_eq!(deinterleave(&seq), (vec![0, 1, 2, 3], frames(6)));
        assert_eq!(deinterleave(&HybridSeq::default()), (vec![], vec![]));
        assert_eq!(deinterleave(&HybridSeq::new(vec![f(0)])), (vec![], frames(1)));
    }

    #[test]
    fn check_schedule_examples() {
        let cfg = InterleaveConfig::new(2, 3).unwrap();
        let ok = HybridSeq::new(vec![t(0), t(1), f(0), f(1), f(2)]);
        assert_eq!(check_schedule(&ok, cfg), Ok(()));
        let bad = HybridSeq::new(vec![t(0), f(0), t(1)]);
        assert_eq!(check_schedule(&bad, cfg), Err(InterleaveError::Schedule(1)));
        assert_eq!(check_schedule(&HybridSeq::default(), cfg), Ok(()));
    }

    #[test]
    fn modality_at_examples() {
        let cfg = InterleaveConfig::new(2, 3).unwrap();
        assert_eq!(modality_at((0, 0), cfg, (None, None)), Modality::Text);
        assert_eq!(modality_at((2, 0), cfg, (None, None)), Modality::Audio);
        assert_eq!(modality_at((2, 3), cfg, (None, None)), Modality::Text);
        // text ended after one token: audio for ever after
        assert_eq!(modality_at((1, 7), cfg, (Some(1), None)), Modality::Audio);
    }

    #[test]
    fn record_layout_is_checked() {
        let cfg = InterleaveConfig::new(2, 3).unwrap();
        let seq = interleave(&[5, 6, 7], &frames(4), cfg);
        let mut rec = HybridRecord::from_seq(&seq, cfg);
        assert_eq!(rec.to_seq().unwrap(), seq);
        rec.layout = Some("TAT".into());
        assert!(rec.to_seq().is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_and_schedule(
            text in proptest::collection::vec(0u32..1000, 0..64),
            audio in 0u32..64,
            n in 1usize..8,
            m in 1usize..8,
        ) {
            let cfg = InterleaveConfig::new(n, m).unwrap();
            let z = frames(audio);
            let seq = interleave(&text, &z, cfg);
            prop_assert_eq!(seq.len(), text.len() + z.len());
            prop_assert_eq!(check_schedule(&seq, cfg), Ok(()));
            let mut seen = 0;
            for item in &seq.items {
                if let HybridToken::Text(id) = item {
                    prop_assert_eq!(*id, text[seen]);
                    seen += 1;
                }
            }
            prop_assert_eq!(deinterleave(&seq), (text, z));
        }
    }
}
