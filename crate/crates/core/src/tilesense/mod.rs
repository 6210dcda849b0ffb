//! Regional feature prediction.
//!
//! Frames are partitioned into a uniform tile grid (default 9x15); a tile is
//! *important* when FAST corners fall inside it. Ground-truth labels come
//! from the detector in [`fast`]; the online predictor in [`predictor`]
//! learns to reproduce them from cheap per-tile statistics, following the
//! sampled-frame buffer workflow in [`stream`].

pub mod fast;
pub mod predictor;
pub mod stream;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fast::{fast_corners, Corner};
pub use predictor::{predict_tiles, tile_features, TilePredictor, FEATURE_DIM};
pub use stream::{SynthSpec, SynthStream, TileStream, TileStreamConfig};

/// Default tile grid shape.
pub const DEFAULT_ROWS: usize = 9;
pub const DEFAULT_COLS: usize = 15;

/// A grayscale video frame, row-major intensities in 0..=255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub index: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, index: usize) -> Result<Self> {
        if width < 16 || height < 16 {
            return Err(Error::validation(format!(
                "frame must be at least 16x16, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::validation(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            index,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Intensity with coordinates clamped to the frame, for border kernels.
    #[inline]
    pub(crate) fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }
}

/// One tile's pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// A uniform partition of a frame into `rows x cols` rectangles.
///
/// Tile sizes are `floor(dim / count)`; the division remainder goes to the
/// last row/column, so the rectangles are disjoint and cover the frame
/// exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    rows: usize,
    cols: usize,
    width: usize,
    height: usize,
    base_w: usize,
    base_h: usize,
    bounds: Vec<TileRect>,
}

/// Partitions a `width x height` frame into a [`TileGrid`].
pub fn partition_tiles(width: usize, height: usize, rows: usize, cols: usize) -> Result<TileGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::argument("rows and cols must be >= 1"));
    }
    if rows > height || cols > width {
        return Err(Error::argument(format!(
            "cannot split {width}x{height} into {rows}x{cols} tiles"
        )));
    }
    let base_h = height / rows;
    let base_w = width / cols;
    let mut bounds = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = r * base_h;
        let h = if r + 1 == rows { height - y } else { base_h };
        for c in 0..cols {
            let x = c * base_w;
            let w = if c + 1 == cols { width - x } else { base_w };
            bounds.push(TileRect { x, y, w, h });
        }
    }
    Ok(TileGrid {
        rows,
        cols,
        width,
        height,
        base_w,
        base_h,
        bounds,
    })
}

impl TileGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tile_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn bounds(&self) -> &[TileRect] {
        &self.bounds
    }

    pub fn rect(&self, row: usize, col: usize) -> TileRect {
        self.bounds[row * self.cols + col]
    }

    /// Tile holding pixel (x, y).
    pub fn tile_of(&self, x: usize, y: usize) -> (usize, usize) {
        let r = (y / self.base_h).min(self.rows - 1);
        let c = (x / self.base_w).min(self.cols - 1);
        (r, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Oracle,
    Predicted,
}

/// Per-frame grid of binary tile-importance labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileReport {
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
    pub source: ReportSource,
}

impl TileReport {
    pub fn new(rows: usize, cols: usize, labels: Vec<u8>, source: ReportSource) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::validation(format!(
                "label count {} does not match {rows}x{cols}",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::validation("labels must be binary"));
        }
        Ok(TileReport {
            rows,
            cols,
            labels,
            source,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.cols + col]
    }

    pub fn count_important(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Fraction of important tiles, the scalar state summary.
    pub fn important_fraction(&self) -> f64 {
        self.count_important() as f64 / self.labels.len() as f64
    }

    /// CSV rows in the export schema `frame_index,row,col,label,source`.
    pub fn csv_rows(&self, frame_index: usize) -> String {
        let mut out = String::new();
        let source = match self.source {
            ReportSource::Oracle => "oracle",
            ReportSource::Predicted => "predicted",
        };
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    frame_index,
                    r,
                    c,
                    self.label(r, c),
                    source
                ));
            }
        }
        out
    }
}

/// Header of the tile-report export schema.
pub const REPORT_CSV_HEADER: &str = "frame_index,row,col,label,source";

/// FAST detector and labeling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Intensity delta for the segment test.
    pub threshold: u8,
    /// Required contiguous arc length on the 16-pixel circle (FAST-9).
    pub arc_length: usize,
    /// Minimum corners inside a tile for an important label.
    pub min_corners: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            threshold: 20,
            arc_length: 9,
            min_corners: 1,
        }
    }
}

/// Ground-truth tile importance: label 1 iff at least `min_corners` FAST
/// corners fall inside the tile.
pub fn oracle_labels(frame: &Frame, grid: &TileGrid, params: &DetectorParams) -> Result<TileReport> {
    let corners = fast_corners(frame, params.threshold, params.arc_length)?;
    oracle_from_corners(&corners, grid, params.min_corners)
}

/// Labels from an already-computed corner list (lets callers share one
/// detector pass between client and edge roles).
pub fn oracle_from_corners(
    corners: &[Corner],
    grid: &TileGrid,
    min_corners: usize,
) -> Result<TileReport> {
    let mut counts = vec![0usize; grid.tile_count()];
    for corner in corners {
        let (r, c) = grid.tile_of(corner.x, corner.y);
        counts[r * grid.cols() + c] += 1;
    }
    let labels = counts
        .iter()
        .map(|&n| u8::from(n >= min_corners.max(1)))
        .collect();
    TileReport::new(grid.rows(), grid.cols(), labels, ReportSource::Oracle)
}
