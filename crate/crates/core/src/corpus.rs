//! Line-delimited record files and fixed-capacity sequence packing.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PACK_CAPACITY: usize = 10_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("records longer than capacity {capacity}: {}", offenders.iter().map(|(id, len)| format!("{id} ({len})")).collect::<Vec<_>>().join(", "))]
    TooLong {
        capacity: usize,
        offenders: Vec<(String, usize)>,
    },
    #[error("capacity must be at least 1")]
    ZeroCapacity,
}

impl CorpusError {
    pub fn is_io(&self) -> bool {
        matches!(self, CorpusError::Io { .. })
    }
}

/// Reads one JSON record per non-blank line.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_records(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io { path: path.display().to_string(), source },
        other => other,
    })
}

pub fn parse_records<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: String::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Schema {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_records_to(&mut w, records).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_records_to<T: Serialize, W: Write>(w: &mut W, records: &[T]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A record to be packed: an id and its token length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: String,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackSegment {
    pub record: String,
    /// Token span `[start, end)` inside the pack.
    pub start: usize,
    pub end: usize,
    /// Distinct within a pack, starting at 0.
    pub segment: u32,
}

/// One fixed-capacity training sequence. Serializes as a pack-manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub capacity: usize,
    pub segments: Vec<PackSegment>,
    pub fill: usize,
}

impl PackedSequence {
    fn new(capacity: usize) -> Self {
        PackedSequence { capacity, segments: Vec::new(), fill: 0 }
    }

    fn push(&mut self, item: &PackItem) {
        let segment = self.segments.len() as u32;
        self.segments.push(PackSegment {
            record: item.id.clone(),
            start: self.fill,
            end: self.fill + item.length,
            segment,
        });
        self.fill += item.length;
    }

    /// Segment id of every position; `None` marks padding after `fill`.
    pub fn position_segments(&self) -> Vec<Option<u32>> {
        let mut ids = vec![None; self.capacity];
        for s in &self.segments {
            for slot in &mut ids[s.start..s.end] {
                *slot = Some(s.segment);
            }
        }
        ids
    }

    /// Block-diagonal causal mask: query `i` may attend to key `j` only inside
    /// its own segment and only backwards.
    pub fn attention_mask(&self) -> Vec<Vec<bool>> {
        let seg = self.position_segments();
        (0..self.capacity)
            .map(|i| {
                (0..self.capacity)
                    .map(|j| j <= i && seg[i].is_some() && seg[i] == seg[j])
                    .collect()
            })
            .collect()
    }

    /// Position index restarted at each segment start.
    pub fn position_ids(&self) -> Vec<usize> {
        let mut pos = vec![0; self.capacity];
        for s in &self.segments {
            for (k, p) in pos[s.start..s.end].iter_mut().enumerate() {
                *p = k;
            }
        }
        pos
    }
}

/// Greedy packing in input order: a record joins the open pack while it fits,
/// otherwise a new pack is opened. Records longer than `capacity` are
/// rejected up front, all listed in one error.
pub fn pack_sequences(items: &[PackItem], capacity: usize) -> Result<Vec<PackedSequence>, CorpusError> {
    if capacity == 0 {
        return Err(CorpusError::ZeroCapacity);
    }
    let offenders: Vec<(String, usize)> = items
        .iter()
        .filter(|i| i.length > capacity)
        .map(|i| (i.id.clone(), i.length))
        .collect();
    if !offenders.is_empty() {
        return Err(CorpusError::TooLong { capacity, offenders });
    }
    let mut packs: Vec<PackedSequence> = Vec::new();
    for item in items {
        match packs.last_mut() {
            Some(p) if p.fill + item.length <= capacity => p.push(item),
            _ => {
                let mut p = PackedSequence::new(capacity);
                p.push(item);
                packs.push(p);
            }
        }
    }
    Ok(packs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn items(lengths: &[usize]) -> Vec<PackItem> {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &length)| PackItem { id: format!("r{i}"), length })
            .collect()
    }

    #[test]
    fn greedy_fixture() {
        let packs = pack_sequences(&items(&[4000, 3000, 5000]), 10_000).unwrap();
        assert_eq!(packs.len(), 2);
        let ids: Vec<Vec<&str>> = packs
            .iter()
            .map(|p| p.segments.iter().map(|s| s.record.as_str()).collect())
            .collect();
        assert_eq!(ids, vec![vec!["r0", "r1"], vec!["r2"]]);
        assert_eq!(packs[0].fill, 7000);
        assert_eq!(packs[0].segments[1].start, 4000);
    }

    #[test]
    fn exact_capacity_is_one_full_pack() {
        let packs = pack_sequences(&items(&[10]), 10).unwrap();
        assert_eq!(packs.len(), 1);
        assert_eq!(packs[0].fill, 10);
    }

    #[test]
    fn overlong_record_named() {
        let err = pack_sequences(&items(&[3, 11, 12]), 10).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("r1 (11)") && msg.contains("r2 (12)"), "{msg}");
    }

    #[test]
    fn masks_isolate_segments() {
        let packs = pack_sequences(&items(&[2, 2]), 5).unwrap();
        let p = &packs[0];
        assert_eq!(p.position_segments(), vec![Some(0), Some(0), Some(1), Some(1), None]);
        assert_eq!(p.position_ids(), vec![0, 1, 0, 1, 0]);
        let mask = p.attention_mask();
        assert!(mask[1][0]);
        assert!(!mask[2][1]);
        assert!(mask[3][2]);
        assert!(!mask[4][4]);
    }

    #[test]
    fn empty_input_is_empty_list() {
        let recs: Vec<PackItem> = parse_records(Cursor::new("")).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"length\":1}\n{\"id\":\"b\",\"length\":2}\n{\"id\":\"c\",\"len";
        let err = parse_records::<PackItem, _>(Cursor::new(text)).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { line: 3, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn packing_invariants(lengths in proptest::collection::vec(1usize..=100, 0..60), cap in 100usize..300) {
            let input = items(&lengths);
            let packs = pack_sequences(&input, cap).unwrap();
            let again = pack_sequences(&input, cap).unwrap();
            prop_assert_eq!(&packs, &again);
            let placed: Vec<&str> = packs.iter().flat_map(|p| p.segments.iter().map(|s| s.record.as_str())).collect();
            let expected: Vec<&str> = input.iter().map(|i| i.id.as_str()).collect();
            prop_assert_eq!(placed, expected);
            prop_assert_eq!(packs.iter().map(|p| p.fill).sum::<usize>(), lengths.iter().sum::<usize>());
            for p in &packs {
                prop_assert!(p.fill <= p.capacity);
            }
        }
    }
}
