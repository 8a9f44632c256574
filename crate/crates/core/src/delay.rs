//! Per-codebook delay pattern.
//!
//! Layer `j` is shifted right by `j` steps, so one decoding step emits one
//! token per layer, each from a different frame:
//!
//! ```text
//!   step    0  1  2  3
//!   j=0    a0 a1  P  P
//!   j=1     P b0 b1  P
//!   j=2     P  P c0 c1
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DelayError {
    #[error("frame {frame} has {got} entries, expected {expected}")]
    FrameArity { frame: usize, got: usize, expected: usize },
    #[error("pad in row {row} at column {col}, inside the token window")]
    PadInWindow { row: usize, col: usize },
    #[error("non-pad token in row {row} at column {col}, outside the token window")]
    TokenOutsideWindow { row: usize, col: usize },
    #[error("grid width {width} is not consistent with {codebooks} codebooks")]
    Width { width: usize, codebooks: usize },
    #[error("row {row} has length {got}, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("column {0} not yet fully emitted")]
    ColumnPending(usize),
    #[error("expected {expected} pad ids, got {got}")]
    PadArity { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayGrid {
    /// `J` rows of width `T + J - 1` (0 when `T == 0`).
    pub rows: Vec<Vec<u32>>,
    /// Original frame count.
    pub frames: usize,
    pub pad_audio_id: Vec<u32>,
}

impl DelayGrid {
    pub fn codebooks(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn column(&self, step: usize) -> Result<Vec<u32>, DelayError> {
        delayed_column(step, &self.rows)
    }

    pub fn columns(&self) -> Vec<Vec<u32>> {
        (0..self.width())
            .map(|c| self.rows.iter().map(|r| r[c]).collect())
            .collect()
    }

    pub fn pad_count(&self) -> usize {
        self.rows
            .iter()
            .zip(&self.pad_audio_id)
            .map(|(row, &pad)| row.iter().filter(|&&x| x == pad).count())
            .sum()
    }

    /// Builds a grid from columns as produced during generation.
    pub fn from_columns(columns: &[Vec<u32>], pad_audio_id: Vec<u32>) -> Result<Self, DelayError> {
        let j = pad_audio_id.len();
        let mut rows = vec![Vec::with_capacity(columns.len()); j];
        for (c, col) in columns.iter().enumerate() {
            if col.len() != j {
                return Err(DelayError::FrameArity { frame: c, got: col.len(), expected: j });
            }
            for (row, &id) in rows.iter_mut().zip(col) {
                row.push(id);
            }
        }
        let width = columns.len();
        let frames = if width == 0 { 0 } else { (width + 1).saturating_sub(j) };
        Ok(DelayGrid { rows, frames, pad_audio_id })
    }
}

pub fn delay_width(frames: usize, codebooks: usize) -> usize {
    if frames == 0 {
        0
    } else {
        frames + codebooks - 1
    }
}

pub fn apply_delay(frames: &[Vec<u32>], pad_audio_id: &[u32]) -> Result<DelayGrid, DelayError> {
    let j = pad_audio_id.len();
    let t = frames.len();
    let width = delay_width(t, j);
    let mut rows: Vec<Vec<u32>> = pad_audio_id.iter().map(|&p| vec![p; width]).collect();
    for (ti, frame) in frames.iter().enumerate() {
        if frame.len() != j {
            return Err(DelayError::FrameArity { frame: ti, got: frame.len(), expected: j });
        }
        for (layer, &id) in frame.iter().enumerate() {
            rows[layer][ti + layer] = id;
        }
    }
    Ok(DelayGrid {
        rows,
        frames: t,
        pad_audio_id: pad_audio_id.to_vec(),
    })
}

pub fn invert_delay(grid: &DelayGrid) -> Result<Vec<Vec<u32>>, DelayError> {
    let j = grid.pad_audio_id.len();
    if grid.rows.len() != j {
        return Err(DelayError::PadArity { got: j, expected: grid.rows.len() });
    }
    let width = grid.width();
    for (r, row) in grid.rows.iter().enumerate() {
        if row.len() != width {
            return Err(DelayError::Ragged { row: r, got: row.len(), expected: width });
        }
    }
    if width == 0 {
        return Ok(Vec::new());
    }
    if width < j {
        return Err(DelayError::Width { width, codebooks: j });
    }
    let t = width + 1 - j;
    for (layer, row) in grid.rows.iter().enumerate() {
        let pad = grid.pad_audio_id[layer];
        for (col, &id) in row.iter().enumerate() {
            let inside = col >= layer && col < layer + t;
            if inside && id == pad {
                return Err(DelayError::PadInWindow { row: layer, col });
            }
            if !inside && id != pad {
                return Err(DelayError::TokenOutsideWindow { row: layer, col });
            }
        }
    }
    Ok((0..t)
        .map(|ti| (0..j).map(|layer| grid.rows[layer][ti + layer]).collect())
        .collect())
}

/// Column `step` of a possibly partially emitted grid: the unit fed back
/// as the next input during generation.
pub fn delayed_column(step: usize, rows: &[Vec<u32>]) -> Result<Vec<u32>, DelayError> {
    rows.iter()
        .map(|row| row.get(step).copied().ok_or(DelayError::ColumnPending(step)))
        .collect()
}
