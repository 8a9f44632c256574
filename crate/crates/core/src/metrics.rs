//! Evaluation primitives: error rates, speaker similarity, and pitch-contour
//! distances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty reference")]
    EmptyReference,
    #[error("empty contour")]
    EmptyContour,
    #[error("zero vector")]
    ZeroVector,
    #[error("width mismatch: {0} vs {1}")]
    Width(usize, usize),
    #[error("need at least 2 voiced values, got {0}")]
    TooFewVoiced(usize),
    #[error("voiced values have zero spread")]
    ZeroSpread,
    #[error("non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditOps {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost Levenshtein distance with one optimal S/I/D decomposition.
///
/// Insertions are symbols present only in `hyp`, deletions only in `reference`.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditOps {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut ops = EditOps { distance: d[n * w + m], ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                ops.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

/// Edit distance over the reference length. May exceed 1.
pub fn error_rate<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(edit_distance(reference, hyp).distance as f64 / reference.len() as f64)
}

/// Word error rate over whitespace-separated words.
pub fn wer(reference: &str, hyp: &str) -> Result<f64, MetricError> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hyp.split_whitespace().collect();
    error_rate(&r, &h)
}

/// Character error rate, ignoring whitespace.
pub fn cer(reference: &str, hyp: &str) -> Result<f64, MetricError> {
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    error_rate(&r, &h)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Width(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// A normalized pitch contour.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour(Vec<f64>);

impl Contour {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(Contour(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Z-scores the voiced values (population standard deviation) and drops the
/// unvoiced ones.
pub fn normalize_contour(raw: &[f64], voiced: &[bool]) -> Result<Contour, MetricError> {
    if raw.len() != voiced.len() {
        return Err(MetricError::Width(raw.len(), voiced.len()));
    }
    let values: Vec<f64> = raw.iter().zip(voiced).filter(|(_, &v)| v).map(|(&x, _)| x).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    if values.len() < 2 {
        return Err(MetricError::TooFewVoiced(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(MetricError::ZeroSpread);
    }
    Contour::new(values.iter().map(|x| (x - mean) / sd).collect())
}

/// Linear interpolation of `values` onto `len` evenly spaced points.
pub fn resample_linear(values: &[f64], len: usize) -> Vec<f64> {
    if values.len() == len {
        return values.to_vec();
    }
    if values.len() == 1 || len == 1 {
        return vec![values[0]; len];
    }
    let scale = (values.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let x = i as f64 * scale;
            let lo = (x.floor() as usize).min(values.len() - 2);
            let frac = x - lo as f64;
            values[lo] * (1.0 - frac) + values[lo + 1] * frac
        })
        .collect()
}

/// Mean squared difference after resampling the shorter contour to the
/// longer one's length.
pub fn contour_mse(a: &Contour, b: &Contour) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyContour);
    }
    let len = a.len().max(b.len());
    let ra = resample_linear(a.values(), len);
    let rb = resample_linear(b.values(), len);
    Ok(ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DtwNormalization {
    /// Raw accumulated cost.
    #[default]
    None,
    /// Accumulated cost divided by the number of cells on the optimal path.
    PathLength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    pub cost: f64,
    /// Cells `(i, j)` from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
}

/// Full DTW with absolute-difference cost and steps (1,0), (0,1), (1,1).
pub fn dtw_alignment(a: &[f64], b: &[f64]) -> Result<DtwAlignment, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyContour);
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let cost = (a[i] - b[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    best = best.min(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    best = best.min(acc[i * m + j - 1]);
                }
                best
            };
            acc[i * m + j] = cost + best;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let mut candidates = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            candidates.push((i - 1, j - 1));
        }
        if i > 0 {
            candidates.push((i - 1, j));
        }
        if j > 0 {
            candidates.push((i, j - 1));
        }
        // first minimum wins, so the diagonal is preferred on ties
        let (pi, pj) = candidates
            .into_iter()
            .fold(None, |best: Option<(usize, usize)>, c| match best {
                Some(b) if acc[b.0 * m + b.1] <= acc[c.0 * m + c.1] => Some(b),
                _ => Some(c),
            })
            .unwrap();
        i = pi;
        j = pj;
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwAlignment { cost: acc[n * m - 1], path })
}

pub fn dtw_distance(a: &Contour, b: &Contour, norm: DtwNormalization) -> Result<f64, MetricError> {
    let alignment = dtw_alignment(a.values(), b.values())?;
    Ok(match norm {
        DtwNormalization::None => alignment.cost,
        DtwNormalization::PathLength => alignment.cost / alignment.path.len() as f64,
    })
}

/// One line of a paired metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum MetricRecord {
    Wer { reference: String, hypothesis: String },
    Cer { reference: String, hypothesis: String },
    SpeakerSim { a: Vec<f64>, b: Vec<f64> },
    /// Raw pitch contours; unvoiced frames are marked in the optional masks
    /// (all voiced when absent).
    PitchMse {
        a: Vec<f64>,
        b: Vec<f64>,
        #[serde(default)]
        a_voiced: Option<Vec<bool>>,
        #[serde(default)]
        b_voiced: Option<Vec<bool>>,
    },
    PitchDtw {
        a: Vec<f64>,
        b: Vec<f64>,
        #[serde(default)]
        a_voiced: Option<Vec<bool>>,
        #[serde(default)]
        b_voiced: Option<Vec<bool>>,
    },
}

impl MetricRecord {
    pub fn name(&self) -> &'static str {
        match self {
            MetricRecord::Wer { .. } => "wer",
            MetricRecord::Cer { .. } => "cer",
            MetricRecord::SpeakerSim { .. } => "speaker_sim",
            MetricRecord::PitchMse { .. } => "pitch_mse",
            MetricRecord::PitchDtw { .. } => "pitch_dtw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: &'static str,
    pub value: f64,
    pub count: usize,
}

fn normalized(raw: &[f64], voiced: &Option<Vec<bool>>) -> Result<Contour, MetricError> {
    match voiced {
        Some(mask) => normalize_contour(raw, mask),
        None => normalize_contour(raw, &vec![true; raw.len()]),
    }
}

/// Aggregates records per metric, in first-seen order.
///
/// WER and CER are corpus-level: total edits over total reference length.
/// The other metrics are means over records. Pitch contours are z-scored
/// before comparison; DTW is unnormalized unless `dtw` says otherwise.
pub fn metric_report(records: &[MetricRecord], dtw: DtwNormalization) -> Result<Vec<ReportRow>, MetricError> {
    // name -> (numerator, denominator, count)
    let mut acc: Vec<(&'static str, f64, f64, usize)> = Vec::new();
    for rec in records {
        let (num, den) = match rec {
            MetricRecord::Wer { reference, hypothesis } => {
                let r: Vec<&str> = reference.split_whitespace().collect();
                let h: Vec<&str> = hypothesis.split_whitespace().collect();
                if r.is_empty() {
                    return Err(MetricError::EmptyReference);
                }
                (edit_distance(&r, &h).distance as f64, r.len() as f64)
            }
            MetricRecord::Cer { reference, hypothesis } => {
                let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
                let h: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
                if r.is_empty() {
                    return Err(MetricError::EmptyReference);
                }
                (edit_distance(&r, &h).distance as f64, r.len() as f64)
            }
            MetricRecord::SpeakerSim { a, b } => (cosine_similarity(a, b)?, 1.0),
            MetricRecord::PitchMse { a, b, a_voiced, b_voiced } => {
                (contour_mse(&normalized(a, a_voiced)?, &normalized(b, b_voiced)?)?, 1.0)
            }
            MetricRecord::PitchDtw { a, b, a_voiced, b_voiced } => {
                (dtw_distance(&normalized(a, a_voiced)?, &normalized(b, b_voiced)?, dtw)?, 1.0)
            }
        };
        let name = rec.name();
        match acc.iter_mut().find(|e| e.0 == name) {
            Some(e) => {
                e.1 += num;
                e.2 += den;
                e.3 += 1;
            }
            None => acc.push((name, num, den, 1)),
        }
    }
    Ok(acc
        .into_iter()
        .map(|(metric, num, den, count)| ReportRow { metric, value: num / den, count })
        .collect())
}

/// Tab-separated `metric value count` table with a header line.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut out = String::from("metric\tvalue\tcount\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.6}\t{}\n", r.metric, r.value, r.count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[f64]) -> Contour {
        Contour::new(v.to_vec()).unwrap()
    }

    #[test]
    fn edit_distance_examples() {
        let a: Vec<char> = "kitten".chars().collect();
        let b: Vec<char> = "sitting".chars().collect();
        let ops = edit_distance(&a, &b);
        assert_eq!(ops.distance, 3);
        assert_eq!(ops.substitutions + ops.insertions + ops.deletions, 3);
        assert_eq!(ops.insertions, 1);
        assert_eq!(edit_distance(&a, &a), EditOps::default());
        let empty: Vec<char> = vec![];
        assert_eq!(
            edit_distance(&a, &empty),
            EditOps { distance: 6, substitutions: 0, insertions: 0, deletions: 6 }
        );
        assert_eq!(edit_distance(&empty, &a).insertions, 6);
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer("a b c d", "a b c d"), Ok(0.0));
        assert_eq!(wer("a b c d", "a x c d"), Ok(0.25));
        assert_eq!(wer("", "a"), Err(MetricError::EmptyReference));
        assert_eq!(wer("a", "b c d"), Ok(3.0));
        assert_eq!(cer("ab c", "abd"), Ok(1.0 / 3.0));
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), Ok(0.0));
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0], &[1.0]), Err(MetricError::ZeroVector));
        assert_eq!(cosine_similarity(&[1.0], &[1.0, 2.0]), Err(MetricError::Width(1, 2)));
    }

    #[test]
    fn contour_normalization() {
        assert_eq!(normalize_contour(&[100.0, 200.0], &[true, true]).unwrap(), c(&[-1.0, 1.0]));
        assert_eq!(normalize_contour(&[5.0, 5.0, 5.0], &[true; 3]), Err(MetricError::ZeroSpread));
        assert_eq!(normalize_contour(&[1.0, 2.0], &[false, false]), Err(MetricError::TooFewVoiced(0)));
        let z = normalize_contour(&[0.0, 120.0, 0.0, 180.0, 150.0], &[false, true, false, true, true]).unwrap();
        assert_eq!(z.len(), 3);
        let mean = z.values().iter().sum::<f64>() / 3.0;
        let sd = (z.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(contour_mse(&c(&[1.0, 2.0]), &c(&[1.0, 2.0])), Ok(0.0));
        assert_eq!(contour_mse(&c(&[0.0, 0.0]), &c(&[1.0, 1.0])), Ok(1.0));
        assert_eq!(resample_linear(&[0.0, 1.0], 4), vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        // [0,1/3,2/3,1] vs [0,1,1,1]: (0 + 4/9 + 1/9 + 0) / 4
        let mse = contour_mse(&c(&[0.0, 1.0]), &c(&[0.0, 1.0, 1.0, 1.0])).unwrap();
        assert!((mse - 5.0 / 36.0).abs() < 1e-15);
        assert_eq!(contour_mse(&c(&[]), &c(&[1.0])), Err(MetricError::EmptyContour));
    }

    #[test]
    fn dtw_examples() {
        let n = DtwNormalization::None;
        assert_eq!(dtw_distance(&c(&[1.0, 2.0, 3.0]), &c(&[1.0, 2.0, 3.0]), n), Ok(0.0));
        assert_eq!(dtw_distance(&c(&[0.0, 1.0, 2.0]), &c(&[0.0, 2.0]), n), Ok(1.0));
        assert_eq!(dtw_distance(&c(&[1.5]), &c(&[-0.5]), n), Ok(2.0));
        assert_eq!(dtw_distance(&c(&[]), &c(&[1.0]), n), Err(MetricError::EmptyContour));
        let a = dtw_alignment(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap();
        assert_eq!(a.path.first(), Some(&(0, 0)));
        assert_eq!(a.path.last(), Some(&(2, 1)));
        let normed = dtw_distance(&c(&[0.0, 1.0, 2.0]), &c(&[0.0, 2.0]), DtwNormalization::PathLength).unwrap();
        assert_eq!(normed, 1.0 / a.path.len() as f64);
    }

    #[test]
    fn dtw_path_cost_matches_reported_cost() {
        let a = [0.2, 1.7, -0.4, 2.2, 0.9];
        let b = [1.0, -0.3, 0.8];
        let al = dtw_alignment(&a, &b).unwrap();
        let along: f64 = al.path.iter().map(|&(i, j)| (a[i] - b[j]).abs()).sum();
        assert!((along - al.cost).abs() < 1e-12);
        for w in al.path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!((di, dj), (1, 0) | (0, 1) | (1, 1)));
        }
    }

    #[test]
    fn report_aggregates_per_metric() {
        let recs = vec![
            MetricRecord::Wer { reference: "a b c d".into(), hypothesis: "a x c".into() },
            MetricRecord::Wer { reference: "e f".into(), hypothesis: "e f".into() },
            MetricRecord::SpeakerSim { a: vec![1.0, 0.0], b: vec![0.0, 1.0] },
        ];
        let rows = metric_report(&recs, DtwNormalization::None).unwrap();
        assert_eq!(rows[0], ReportRow { metric: "wer", value: 2.0 / 6.0, count: 2 });
        assert_eq!(rows[1].metric, "speaker_sim");
        assert_eq!(rows[1].value, 0.0);
        assert!(format_report(&rows).starts_with("metric\tvalue\tcount\nwer\t0.333333\t2\n"));
    }

    #[test]
    fn metric_record_schema() {
        let rec: MetricRecord = serde_json::from_str(r#"{"metric":"pitch_dtw","a":[1,2,3],"b":[1,3]}"#).unwrap();
        assert_eq!(rec.name(), "pitch_dtw");
    }
}
