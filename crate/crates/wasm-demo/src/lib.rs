//! Browser bindings for three toolkit operations. Each returns a JSON string
//! so the page can render it without extra glue.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hybrid_core::delay::{apply_delay, invert_delay};
use hybrid_core::interleaver::{check_schedule, interleave, InterleaveConfig};
use hybrid_core::metrics::dtw_alignment;

/// Upper bound on stream lengths accepted from the page.
pub const MAX_ITEMS: usize = 512;

#[derive(Debug, Serialize, PartialEq)]
pub struct LayoutItem {
    pub kind: char,
    /// Position within its own stream.
    pub index: usize,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct LayoutView {
    pub layout: String,
    pub items: Vec<LayoutItem>,
}

/// Order in which `text_len` tokens and `frames` audio frames are emitted
/// under an `n:m` schedule.
pub fn layout_view(text_len: usize, frames: usize, n: usize, m: usize) -> Result<LayoutView, String> {
    if text_len > MAX_ITEMS || frames > MAX_ITEMS {
        return Err(format!("at most {MAX_ITEMS} items per stream"));
    }
    let cfg = InterleaveConfig::new(n, m).map_err(|e| e.to_string())?;
    let text: Vec<u32> = (0..text_len as u32).collect();
    let audio: Vec<Vec<u32>> = (0..frames as u32).map(|f| vec![f]).collect();
    let seq = interleave(&text, &audio, cfg);
    check_schedule(&seq, cfg).map_err(|e| e.to_string())?;
    let items = seq
        .items
        .iter()
        .map(|tok| match tok {
            hybrid_core::HybridToken::Text(i) => LayoutItem { kind: 'T', index: *i as usize },
            hybrid_core::HybridToken::AudioFrame(f) => LayoutItem { kind: 'A', index: f[0] as usize },
        })
        .collect();
    Ok(LayoutView { layout: seq.layout(), items })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct GridView {
    /// `rows[j][c]` is the frame whose layer `j` sits in column `c`, or null
    /// for padding.
    pub rows: Vec<Vec<Option<usize>>>,
    pub width: usize,
    pub pad_count: usize,
    pub inverts: bool,
}

/// Delay grid of `frames` frames over `codebooks` layers, labelled by frame.
pub fn grid_view(frames: usize, codebooks: usize) -> Result<GridView, String> {
    if frames > MAX_ITEMS || codebooks == 0 || codebooks > 16 {
        return Err(format!("need 1..=16 codebooks and at most {MAX_ITEMS} frames"));
    }
    let pad = u32::MAX;
    let seq: Vec<Vec<u32>> = (0..frames as u32).map(|f| vec![f; codebooks]).collect();
    let grid = apply_delay(&seq, &vec![pad; codebooks]).map_err(|e| e.to_string())?;
    let inverts = invert_delay(&grid).map_err(|e| e.to_string())? == seq;
    Ok(GridView {
        rows: grid
            .rows
            .iter()
            .map(|row| row.iter().map(|&id| (id != pad).then_some(id as usize)).collect())
            .collect(),
        width: grid.width(),
        pad_count: grid.pad_count(),
        inverts,
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct AlignmentView {
    pub cost: f64,
    pub normalized: f64,
    pub path: Vec<(usize, usize)>,
    /// Local cost `|a_i - b_j|`.
    pub local: Vec<Vec<f64>>,
}

fn parse_contour(text: &str) -> Result<Vec<f64>, String> {
    text.split([',', ' ', '\n', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`")))
        .collect()
}

/// DTW alignment of two comma- or space-separated contours.
pub fn alignment_view(a: &str, b: &str) -> Result<AlignmentView, String> {
    let (a, b) = (parse_contour(a)?, parse_contour(b)?);
    if a.len() > MAX_ITEMS || b.len() > MAX_ITEMS {
        return Err(format!("at most {MAX_ITEMS} values per contour"));
    }
    let al = dtw_alignment(&a, &b).map_err(|e| e.to_string())?;
    Ok(AlignmentView {
        cost: al.cost,
        normalized: al.cost / al.path.len() as f64,
        local: a.iter().map(|x| b.iter().map(|y| (x - y).abs()).collect()).collect(),
        path: al.path,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn interleave_layout(text_len: usize, frames: usize, n: usize, m: usize) -> Result<String, JsError> {
    to_js(layout_view(text_len, frames, n, m))
}

#[wasm_bindgen]
pub fn delay_grid(frames: usize, codebooks: usize) -> Result<String, JsError> {
    to_js(grid_view(frames, codebooks))
}

#[wasm_bindgen]
pub fn dtw_align(a: &str, b: &str) -> Result<String, JsError> {
    to_js(alignment_view(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_follows_schedule() {
        let v = layout_view(3, 5, 1, 2).unwrap();
        assert_eq!(v.layout, "TAATAATA");
        assert_eq!(v.items[1], LayoutItem { kind: 'A', index: 0 });
        assert!(layout_view(1, 1, 0, 1).is_err());
        assert!(layout_view(MAX_ITEMS + 1, 0, 1, 1).is_err());
    }

    #[test]
    fn grid_marks_pads() {
        let g = grid_view(3, 3).unwrap();
        assert_eq!(g.width, 5);
        assert_eq!(g.pad_count, 6);
        assert_eq!(g.rows[2], vec![None, None, Some(0), Some(1), Some(2)]);
        assert!(g.inverts);
        assert_eq!(grid_view(0, 4).unwrap().width, 0);
        assert!(grid_view(2, 0).is_err());
    }

    #[test]
    fn alignment_reports_cost_and_path() {
        let v = alignment_view("0, 1, 2", "0 2").unwrap();
        assert_eq!(v.cost, 1.0);
        assert_eq!(v.path.first(), Some(&(0, 0)));
        assert_eq!(v.path.last(), Some(&(2, 1)));
        assert_eq!(v.local.len(), 3);
        assert!(alignment_view("1, x", "1").is_err());
        assert!(alignment_view("", "1").is_err());
    }
}
