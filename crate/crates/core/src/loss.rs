//! Hybrid negative log-likelihood.
//!
//! Text positions are scored with ordinary cross-entropy against the unified
//! head-0 distribution. Audio positions are scored with the cross-entropy
//! averaged over the `J` codebooks, where layer 0 is read from the audio
//! block of head 0 and layer `j >= 1` from head `j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interleaver::HybridSeq;
use crate::token_space::{HybridToken, VocabError, VocabSpec};

pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {preds} predictions, {targets} targets, {mask} mask entries")]
    Length { preds: usize, targets: usize, mask: usize },
    #[error("position {pos}: {source}")]
    Target {
        pos: usize,
        #[source]
        source: VocabError,
    },
    #[error("position {pos}: pad target in codebook {codebook} at a scored position")]
    ScoredPad { pos: usize, codebook: usize },
    #[error("position {pos}: {head} distribution sums to {sum}")]
    NotNormalized { pos: usize, head: String, sum: f64 },
    #[error("position {pos}: {head} distribution has {got} entries, expected {expected}")]
    HeadShape {
        pos: usize,
        head: String,
        got: usize,
        expected: usize,
    },
    #[error("position {pos}: content outside any turn")]
    OutsideTurn { pos: usize },
}

/// Output distributions at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPrediction {
    /// Over the unified head-0 vocabulary.
    pub head0: Vec<f64>,
    /// `heads[k]` is the distribution over codebook `k + 1`.
    pub heads: Vec<Vec<f64>>,
}

impl PositionPrediction {
    pub fn check(&self, pos: usize, spec: &VocabSpec) -> Result<(), LossError> {
        check_dist(pos, "head0".into(), &self.head0, spec.head0_size())?;
        if self.heads.len() != spec.j() - 1 {
            return Err(LossError::HeadShape {
                pos,
                head: "auxiliary heads".into(),
                got: self.heads.len(),
                expected: spec.j() - 1,
            });
        }
        for (k, head) in self.heads.iter().enumerate() {
            check_dist(pos, format!("head{}", k + 1), head, spec.codebook_size(k + 1))?;
        }
        Ok(())
    }

    /// Probability that codebook `j` takes `id` (layer 0 via head 0).
    pub fn codebook_prob(&self, spec: &VocabSpec, j: usize, id: u32) -> f64 {
        if j == 0 {
            self.head0[(spec.text_size + id) as usize]
        } else {
            self.heads[j - 1][id as usize]
        }
    }
}

fn check_dist(pos: usize, head: String, dist: &[f64], expected: usize) -> Result<(), LossError> {
    if dist.len() != expected {
        return Err(LossError::HeadShape { pos, head, got: dist.len(), expected });
    }
    let sum: f64 = dist.iter().sum();
    if dist.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(LossError::NotNormalized { pos, head, sum });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LossMask(pub Vec<bool>);

impl LossMask {
    pub fn all(len: usize) -> Self {
        LossMask(vec![true; len])
    }

    pub fn none(len: usize) -> Self {
        LossMask(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scored(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Sum over scored positions.
    pub total: f64,
    /// Unscored positions hold exactly 0.
    pub per_position: Vec<f64>,
    pub scored: usize,
}

impl LossReport {
    pub fn mean(&self) -> f64 {
        if self.scored == 0 {
            0.0
        } else {
            self.total / self.scored as f64
        }
    }
}

/// Loss contribution of one target given its prediction.
pub fn position_nll(
    pos: usize,
    pred: &PositionPrediction,
    target: &HybridToken,
    spec: &VocabSpec,
) -> Result<f64, LossError> {
    spec.check_token(target).map_err(|source| LossError::Target { pos, source })?;
    match target {
        HybridToken::Text(id) => Ok(-pred.head0[*id as usize].ln()),
        HybridToken::AudioFrame(ids) => {
            if let Some(codebook) = ids.iter().enumerate().position(|(j, &id)| spec.is_pad(j, id)) {
                return Err(LossError::ScoredPad { pos, codebook });
            }
            let log_sum: f64 = ids
                .iter()
                .enumerate()
                .map(|(j, &id)| pred.codebook_prob(spec, j, id).ln())
                .sum();
            Ok(-log_sum / spec.j() as f64)
        }
    }
}

pub fn hybrid_nll(
    preds: &[PositionPrediction],
    targets: &HybridSeq,
    mask: &LossMask,
    spec: &VocabSpec,
) -> Result<LossReport, LossError> {
    if preds.len() != targets.len() || mask.len() != targets.len() {
        return Err(LossError::Length {
            preds: preds.len(),
            targets: targets.len(),
            mask: mask.len(),
        });
    }
    let mut per_position = vec![0.0; targets.len()];
    let mut total = 0.0;
    for (pos, ((pred, target), &scored)) in preds.iter().zip(&targets.items).zip(&mask.0).enumerate() {
        pred.check(pos, spec)?;
        if !scored {
            continue;
        }
        let loss = position_nll(pos, pred, target, spec)?;
        per_position[pos] = loss;
        total += loss;
    }
    Ok(LossReport {
        total,
        per_position,
        scored: mask.scored(),
    })
}

/// Scores exactly the assistant-response positions.
///
/// Role markers are text items carrying a role id; content before the first
/// marker (other than BOS) is rejected. Markers, BOS, and all-pad frames
/// are never scored.
pub fn build_response_mask(seq: &HybridSeq, spec: &VocabSpec) -> Result<LossMask, LossError> {
    let markers = spec.role_marker_ids;
    let mut in_assistant: Option<bool> = None;
    let mut mask = Vec::with_capacity(seq.len());
    for (pos, item) in seq.items.iter().enumerate() {
        let scored = match item {
            HybridToken::Text(id) if *id == markers.assistant => {
                in_assistant = Some(true);
                false
            }
            HybridToken::Text(id) if *id == markers.user || *id == markers.system => {
                in_assistant = Some(false);
                false
            }
            HybridToken::Text(id) if *id == spec.bos_id => false,
            HybridToken::AudioFrame(ids)
                if ids.iter().enumerate().all(|(j, &id)| spec.is_pad(j, id)) =>
            {
                false
            }
            _ => in_assistant.ok_or(LossError::OutsideTurn { pos })?,
        };
        mask.push(scored);
    }
    Ok(LossMask(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    fn spec_j(text: u32, cb: u32, j: usize) -> VocabSpec {
        VocabSpec::uniform(text, cb, j)
    }

    #[test]
    fn uniform_text_loss_is_log_vocab() {
        // 100 text + 50 audio-0 ids = 150 unified ids
        let spec = spec_j(100, 50, 1);
        let pred = PositionPrediction { head0: uniform(150), heads: vec![] };
        let seq = HybridSeq::new(vec![HybridToken::Text(3)]);
        let r = hybrid_nll(&[pred], &seq, &LossMask::all(1), &spec).unwrap();
        assert!((r.total - 150f64.ln()).abs() < 1e-12);
        assert!((r.total - 5.0106).abs() < 1e-4);
    }

    #[test]
    fn audio_loss_averages_codebooks() {
        let spec = spec_j(8, 4, 2);
        let mut head0 = vec![0.0; 12];
        head0[8 + 1] = 0.5;
        head0[0] = 0.5;
        let head1 = vec![0.25, 0.25, 0.25, 0.25];
        let pred = PositionPrediction { head0, heads: vec![head1] };
        let seq = HybridSeq::new(vec![HybridToken::AudioFrame(vec![1, 2])]);
        let r = hybrid_nll(&[pred], &seq, &LossMask::all(1), &spec).unwrap();
        let expected = (0.5f64.ln() + 0.25f64.ln()) / -2.0;
        assert!((r.total - expected).abs() < 1e-15);
        assert!((r.total - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn unscored_positions_contribute_zero() {
        let spec = spec_j(8, 4, 1);
        let pred = PositionPrediction { head0: uniform(12), heads: vec![] };
        let seq = HybridSeq::new(vec![HybridToken::Text(1), HybridToken::Text(2)]);
        let r = hybrid_nll(&[pred.clone(), pred], &seq, &LossMask::none(2), &spec).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.per_position, vec![0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let spec = spec_j(8, 4, 2);
        let good = PositionPrediction { head0: uniform(12), heads: vec![uniform(4)] };
        let seq = HybridSeq::new(vec![HybridToken::Text(1)]);
        assert!(matches!(
            hybrid_nll(&[], &seq, &LossMask::all(1), &spec),
            Err(LossError::Length { .. })
        ));
        let bad = HybridSeq::new(vec![HybridToken::Text(8)]);
        assert!(matches!(
            hybrid_nll(std::slice::from_ref(&good), &bad, &LossMask::all(1), &spec),
            Err(LossError::Target { pos: 0, .. })
        ));
        let mut skew = good.clone();
        skew.head0[0] += 1e-6;
        assert!(matches!(
            hybrid_nll(&[skew], &seq, &LossMask::all(1), &spec),
            Err(LossError::NotNormalized { .. })
        ));
        let pad = HybridSeq::new(vec![HybridToken::AudioFrame(vec![1, 3])]);
        assert_eq!(
            hybrid_nll(std::slice::from_ref(&good), &pad, &LossMask::all(1), &spec),
            Err(LossError::ScoredPad { pos: 0, codebook: 1 })
        );
        assert!(hybrid_nll(&[good], &pad, &LossMask::none(1), &spec).is_ok());
    }

    #[test]
    fn raising_correct_probability_lowers_loss() {
        let spec = spec_j(8, 4, 1);
        let seq = HybridSeq::new(vec![HybridToken::Text(2)]);
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let p = k as f64 / 10.0;
            let mut head0 = vec![(1.0 - p) / 11.0; 12];
            head0[2] = p;
            let r = hybrid_nll(&[PositionPrediction { head0, heads: vec![] }], &seq, &LossMask::all(1), &spec)
                .unwrap();
            assert!(r.total <= last);
            last = r.total;
        }
    }

    #[test]
    fn response_mask() {
        let spec = spec_j(16, 4, 2);
        let m = spec.role_marker_ids;
        let t = HybridToken::Text(1);
        let f = HybridToken::AudioFrame(vec![0, 1]);
        let seq = HybridSeq::new(vec![
            HybridToken::Text(m.user),
            t.clone(),
            t.clone(),
            HybridToken::Text(m.assistant),
            t.clone(),
            f.clone(),
            f.clone(),
        ]);
        let mask = build_response_mask(&seq, &spec).unwrap();
        assert_eq!(mask.0, vec![false, false, false, false, true, true, true]);
        // content positions only: [0,0,1,1,1]
        let content: Vec<bool> = [1, 2, 4, 5, 6].iter().map(|&i| mask.0[i]).collect();
        assert_eq!(content, vec![false, false, true, true, true]);

        let user_only = HybridSeq::new(vec![HybridToken::Text(m.user), t.clone(), f.clone()]);
        assert_eq!(build_response_mask(&user_only, &spec).unwrap().scored(), 0);

        let asst = HybridSeq::new(vec![HybridToken::Text(m.assistant), t.clone(), f]);
        assert_eq!(build_response_mask(&asst, &spec).unwrap().0, vec![false, true, true]);

        let stray = HybridSeq::new(vec![t, HybridToken::Text(m.user)]);
        assert_eq!(build_response_mask(&stray, &spec), Err(LossError::OutsideTurn { pos: 0 }));
    }
}
