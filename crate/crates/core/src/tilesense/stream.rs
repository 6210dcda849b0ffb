//! Buffered online-learning workflow and frame sources.
//!
//! Every frame gets a predicted report. Every `sample_interval`-th frame is
//! additionally run through the FAST oracle and stored in the local buffer;
//! when the buffer reaches its capacity of sampled frames, one bounded
//! training pass updates the predictor and the buffer empties. Reports for
//! intermediate frames reuse the latest sampled frame's prediction, riding
//! the temporal correlation of consecutive frames. Inference for a frame
//! always happens before any training triggered by that frame, so a report
//! never depends on future data.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

use super::fast::Corner;
use super::predictor::{sobel_maps, tile_features, TilePredictor, TrainBounds, FEATURE_DIM};
use super::{
    fast_corners, oracle_from_corners, partition_tiles, DetectorParams, Frame, TileGrid,
    TileReport, DEFAULT_COLS, DEFAULT_ROWS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileStreamConfig {
    pub rows: usize,
    pub cols: usize,
    /// Every `sample_interval`-th frame is sampled into the buffer.
    pub sample_interval: usize,
    /// Sampled frames held before a training pass fires.
    pub buffer_capacity: usize,
    pub detector: DetectorParams,
    pub bounds: TrainBounds,
    pub seed: u64,
}

impl Default for TileStreamConfig {
    fn default() -> Self {
        TileStreamConfig {
            rows: DEFAULT_ROWS,
            cols: DEFAULT_COLS,
            sample_interval: 4,
            buffer_capacity: 4,
            detector: DetectorParams::default(),
            bounds: TrainBounds::default(),
            seed: 0,
        }
    }
}

/// Outcome of feeding one frame through the stream.
#[derive(Debug, Clone)]
pub struct StreamStep {
    pub report: TileReport,
    /// Oracle labels, present on sampled frames only.
    pub oracle: Option<TileReport>,
    pub sampled: bool,
    /// True when this frame completed a buffer and triggered training.
    pub trained: bool,
}

/// Single-owner online prediction stream: predictor + sampled-frame buffer.
pub struct TileStream {
    config: TileStreamConfig,
    grid: Option<TileGrid>,
    predictor: TilePredictor,
    buffer: Vec<(Frame, TileReport)>,
    last_report: Option<TileReport>,
    last_index: Option<usize>,
    shuffle_rng: ChaCha8Rng,
    train_passes: usize,
    last_losses: Vec<f64>,
}

impl TileStream {
    pub fn new(config: TileStreamConfig) -> Result<Self> {
        if config.sample_interval == 0 || config.buffer_capacity == 0 {
            return Err(Error::argument(
                "sample_interval and buffer_capacity must be >= 1",
            ));
        }
        Ok(TileStream {
            predictor: TilePredictor::new(config.seed),
            shuffle_rng: rng::rng(config.seed, Stream::Shuffle, 7),
            config,
            grid: None,
            buffer: Vec::new(),
            last_report: None,
            last_index: None,
            train_passes: 0,
            last_losses: Vec::new(),
        })
    }

    pub fn grid(&self) -> Option<&TileGrid> {
        self.grid.as_ref()
    }

    pub fn predictor(&self) -> &TilePredictor {
        &self.predictor
    }

    pub fn train_passes(&self) -> usize {
        self.train_passes
    }

    /// Per-epoch losses of the most recent training pass.
    pub fn last_losses(&self) -> &[f64] {
        &self.last_losses
    }

    /// Feeds one frame; detector runs internally on sampled frames.
    pub fn step(&mut self, frame: &Frame) -> Result<StreamStep> {
        let sampled = frame.index % self.config.sample_interval == 0;
        let corners = if sampled {
            Some(fast_corners(
                frame,
                self.config.detector.threshold,
                self.config.detector.arc_length,
            )?)
        } else {
            None
        };
        self.step_inner(frame, corners.as_deref())
    }

    /// Variant that reuses an already-computed corner list for the oracle
    /// (the environments detect once per frame for both client and edge
    /// roles).
    pub fn step_with_corners(&mut self, frame: &Frame, corners: &[Corner]) -> Result<StreamStep> {
        self.step_inner(frame, Some(corners))
    }

    fn step_inner(&mut self, frame: &Frame, corners: Option<&[Corner]>) -> Result<StreamStep> {
        if let Some(last) = self.last_index {
            if frame.index <= last {
                return Err(Error::state(format!(
                    "frame index must increase monotonically: {} after {last}",
                    frame.index
                )));
            }
        }
        self.last_index = Some(frame.index);

        let grid = match &self.grid {
            Some(g) => {
                if g.width() != frame.width() || g.height() != frame.height() {
                    return Err(Error::state("frame dimensions changed mid-stream"));
                }
                g.clone()
            }
            None => {
                let g = partition_tiles(
                    frame.width(),
                    frame.height(),
                    self.config.rows,
                    self.config.cols,
                )?;
                self.grid = Some(g.clone());
                g
            }
        };

        let sampled = frame.index % self.config.sample_interval == 0;
        let mut trained = false;
        let mut oracle = None;

        let report = if sampled || self.last_report.is_none() {
            super::predict_tiles(&self.predictor, frame, &grid)?
        } else {
            self.last_report.clone().unwrap()
        };

        if sampled {
            let corner_list = match corners {
                Some(c) => c.to_vec(),
                None => fast_corners(
                    frame,
                    self.config.detector.threshold,
                    self.config.detector.arc_length,
                )?,
            };
            let oracle_report =
                oracle_from_corners(&corner_list, &grid, self.config.detector.min_corners)?;
            self.buffer.push((frame.clone(), oracle_report.clone()));
            oracle = Some(oracle_report);

            if self.buffer.len() >= self.config.buffer_capacity {
                self.train_on_buffer(&grid);
                trained = true;
            }
        }

        self.last_report = Some(report.clone());
        Ok(StreamStep {
            report,
            oracle,
            sampled,
            trained,
        })
    }

    fn train_on_buffer(&mut self, grid: &TileGrid) {
        let mut samples: Vec<([f64; FEATURE_DIM], u8)> =
            Vec::with_capacity(self.buffer.len() * grid.tile_count());
        for (frame, oracle) in &self.buffer {
            let sobel = sobel_maps(frame);
            for (i, rect) in grid.bounds().iter().enumerate() {
                samples.push((tile_features(frame, rect, &sobel), oracle.labels()[i]));
            }
        }
        self.last_losses =
            self.predictor
                .train_pass(&samples, &self.config.bounds, &mut self.shuffle_rng);
        self.train_passes += 1;
        self.buffer.clear();
    }
}

/// Seeded synthetic frame source with a controllable importance structure.
///
/// Important tiles receive a few bright blobs (which the FAST detector fires
/// on reliably); the rest of the frame is near-constant background. The
/// important-tile mask is fixed within a drift epoch and resampled (together
/// with the blob brightness regime) every `drift_period` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub rows: usize,
    pub cols: usize,
    /// Per-tile probability of being important within an epoch.
    pub important_prob: f64,
    /// Bright blobs stamped into each important tile.
    pub blob_count: usize,
    /// Blob brightness per drift epoch, cycled.
    pub blob_brightness: Vec<u8>,
    /// Uniform background noise amplitude.
    pub background_noise: u8,
    /// Frames per drift epoch; `None` keeps the structure static.
    pub drift_period: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 120,
            height: 72,
            rows: DEFAULT_ROWS,
            cols: DEFAULT_COLS,
            important_prob: 0.5,
            blob_count: 2,
            blob_brightness: vec![235],
            background_noise: 4,
            drift_period: None,
            seed: 0,
        }
    }
}

pub struct SynthStream {
    spec: SynthSpec,
    grid: TileGrid,
}

impl SynthStream {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        if spec.blob_brightness.is_empty() {
            return Err(Error::argument("blob_brightness must not be empty"));
        }
        let grid = partition_tiles(spec.width, spec.height, spec.rows, spec.cols)?;
        // Blobs must fit outside the FAST border-exclusion band even in
        // frame-edge tiles, which needs a minimum tile size.
        if grid.bounds().iter().any(|r| r.w < 6 || r.h < 6) {
            return Err(Error::argument("synthetic tiles must be at least 6x6"));
        }
        Ok(SynthStream { spec, grid })
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    fn epoch(&self, index: usize) -> usize {
        match self.spec.drift_period {
            Some(p) if p > 0 => index / p,
            _ => 0,
        }
    }

    /// The important-tile mask of a drift epoch.
    pub fn mask(&self, epoch: usize) -> Vec<bool> {
        let mut r = rng::rng(self.spec.seed, Stream::FrameGen, 1_000_000 + epoch as u64);
        (0..self.grid.tile_count())
            .map(|_| r.gen::<f64>() < self.spec.important_prob)
            .collect()
    }

    /// Pure function of (seed, index): the same frame is regenerated on
    /// every call.
    pub fn frame(&self, index: usize) -> Frame {
        let spec = &self.spec;
        let epoch = self.epoch(index);
        let mask = self.mask(epoch);
        let brightness = spec.blob_brightness[epoch % spec.blob_brightness.len()];
        let mut r = rng::rng(spec.seed, Stream::FrameGen, index as u64);
        let noise = spec.background_noise as i32;
        let mut pixels = vec![0u8; spec.width * spec.height];
        for p in pixels.iter_mut() {
            let v = 128 + if noise > 0 {
                r.gen_range(-noise..=noise)
            } else {
                0
            };
            *p = v as u8;
        }
        for (i, rect) in self.grid.bounds().iter().enumerate() {
            if !mask[i] {
                continue;
            }
            for _ in 0..spec.blob_count {
                // 2x2 blob kept inside the tile and clear of the detector's
                // 3-pixel frame border so its corners are always detectable.
                let lo_x = (rect.x + 1).max(3);
                let hi_x = (rect.x + rect.w - 3).min(spec.width - 5);
                let lo_y = (rect.y + 1).max(3);
                let hi_y = (rect.y + rect.h - 3).min(spec.height - 5);
                let bx = r.gen_range(lo_x..=hi_x.max(lo_x));
                let by = r.gen_range(lo_y..=hi_y.max(lo_y));
                for dy in 0..2 {
                    for dx in 0..2 {
                        pixels[(by + dy) * spec.width + (bx + dx)] = brightness;
                    }
                }
            }
        }
        Frame::new(spec.width, spec.height, pixels, index).expect("spec validated at build")
    }
}

/// Reads a binary (P5) PGM file with maxval 255.
pub fn read_pgm(path: impl AsRef<Path>, index: usize) -> Result<Frame> {
    let path = path.as_ref();
    let data = std::fs::read(path)?;
    let display = path.display().to_string();
    let mut pos = 0;
    let mut token = |data: &[u8]| -> Result<String> {
        // Skip whitespace and comment lines.
        while pos < data.len() {
            let b = data[pos];
            if b == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format {
                path: display.clone(),
                line: 0,
                reason: "truncated header".to_string(),
            });
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };

    let magic = token(&data)?;
    if magic != "P5" {
        return Err(Error::Format {
            path: path.display().to_string(),
            line: 1,
            reason: format!("expected P5 magic, got {magic}"),
        });
    }
    let width: usize = token(&data)?
        .parse()
        .map_err(|e| Error::validation(format!("bad PGM width: {e}")))?;
    let height: usize = token(&data)?
        .parse()
        .map_err(|e| Error::validation(format!("bad PGM height: {e}")))?;
    let maxval: usize = token(&data)?
        .parse()
        .map_err(|e| Error::validation(format!("bad PGM maxval: {e}")))?;
    if maxval != 255 {
        return Err(Error::validation(format!(
            "only maxval 255 PGM supported, got {maxval}"
        )));
    }
    pos += 1; // single whitespace after maxval
    if data.len() < pos + width * height {
        return Err(Error::validation(format!(
            "PGM payload truncated: need {} bytes, have {}",
            width * height,
            data.len().saturating_sub(pos)
        )));
    }
    Frame::new(width, height, data[pos..pos + width * height].to_vec(), index)
}

/// Writes a frame as binary (P5) PGM.
pub fn write_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let mut data = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    data.extend_from_slice(frame.pixels());
    std::fs::write(path, data)?;
    Ok(())
}

/// Lists `*.pgm` files in a directory ordered by the numeric value of their
/// file stem (frame index order).
pub fn list_frame_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir.as_ref())? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let index: u64 = stem.parse().map_err(|_| {
            Error::validation(format!(
                "frame file names must be numeric indices, got {}",
                path.display()
            ))
        })?;
        entries.push((index, path));
    }
    entries.sort_by_key(|(i, _)| *i);
    Ok(entries.into_iter().map(|(_, p)| p).collect())
}
