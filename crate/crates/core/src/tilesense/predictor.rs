//! Online tile-importance classifier.
//!
//! Each tile is summarized by five statistics — mean intensity, intensity
//! standard deviation, mean absolute horizontal and vertical Sobel response,
//! and the fraction of pixels over a fixed Sobel-magnitude threshold — and
//! classified by a one-hidden-layer network trained online with per-sample
//! SGD on the cross-entropy loss.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::neural::{Mlp, MlpGrads, OutputKind};

use super::{Frame, ReportSource, TileGrid, TileReport};

/// Per-tile feature vector length.
pub const FEATURE_DIM: usize = 5;
/// Hidden width of the classifier.
pub const HIDDEN_UNITS: usize = 16;
/// Intensity std is normalized by a typical textured-tile deviation rather
/// than its theoretical maximum, keeping the feature discriminative at the
/// small SGD learning rate.
const STD_SCALE: f64 = 64.0;
/// Mean |Sobel| responses are normalized by this reference.
const SOBEL_SCALE: f64 = 128.0;
/// A pixel counts as an edge pixel when its Sobel magnitude exceeds this.
const EDGE_MAGNITUDE_THRESHOLD: f64 = 200.0;
/// Edge fraction is stretched by this gain.
const EDGE_GAIN: f64 = 3.0;
/// Probabilities are clamped away from {0, 1} inside the loss.
const PROB_EPS: f64 = 1e-12;

/// Horizontal and vertical Sobel responses for a whole frame, shared by all
/// tiles of that frame.
pub struct SobelMaps {
    gx: Vec<f64>,
    gy: Vec<f64>,
    width: usize,
}

/// 3x3 Sobel with border clamping.
pub fn sobel_maps(frame: &Frame) -> SobelMaps {
    let (w, h) = (frame.width(), frame.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| frame.get_clamped(x + dx, y + dy) as f64;
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let idx = y as usize * w + x as usize;
            gx[idx] = sx;
            gy[idx] = sy;
        }
    }
    SobelMaps { gx, gy, width: w }
}

/// The five normalized statistics of one tile.
pub fn tile_features(
    frame: &Frame,
    rect: &super::TileRect,
    sobel: &SobelMaps,
) -> [f64; FEATURE_DIM] {
    let n = (rect.w * rect.h) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut abs_gx = 0.0;
    let mut abs_gy = 0.0;
    let mut edges = 0.0;
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            let v = frame.get(x, y) as f64;
            sum += v;
            sum_sq += v * v;
            let idx = y * sobel.width + x;
            let (gx, gy) = (sobel.gx[idx], sobel.gy[idx]);
            abs_gx += gx.abs();
            abs_gy += gy.abs();
            if (gx * gx + gy * gy).sqrt() > EDGE_MAGNITUDE_THRESHOLD {
                edges += 1.0;
            }
        }
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    [
        mean / 255.0,
        var.sqrt() / STD_SCALE,
        abs_gx / n / SOBEL_SCALE,
        abs_gy / n / SOBEL_SCALE,
        edges / n * EDGE_GAIN,
    ]
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Bounds of one training pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainBounds {
    pub max_epochs: usize,
    /// Early-stop threshold on the mean cross-entropy over the batch.
    pub min_loss: f64,
    pub lr: f64,
}

impl Default for TrainBounds {
    fn default() -> Self {
        TrainBounds {
            max_epochs: 5,
            min_loss: 0.05,
            lr: 1e-3,
        }
    }
}

/// One-hidden-layer classifier over tile feature vectors.
#[derive(Debug, Clone)]
pub struct TilePredictor {
    net: Mlp,
}

impl TilePredictor {
    pub fn new(seed: u64) -> Self {
        TilePredictor {
            net: Mlp::new(&[FEATURE_DIM, HIDDEN_UNITS, 1], OutputKind::Linear, seed)
                .expect("fixed dims are valid"),
        }
    }

    /// A predictor with all-zero weights; outputs probability exactly 0.5.
    pub fn zeroed() -> Self {
        let mut p = TilePredictor::new(0);
        let zeros = vec![0.0; p.net.param_count()];
        p.net.set_params(&zeros).unwrap();
        p
    }

    pub fn predict_prob(&self, features: &[f64]) -> f64 {
        let logit = self.net.forward(features).expect("feature dim fixed")[0];
        sigmoid(logit)
    }

    /// Probability thresholded into a binary label. Exactly 0.5 resolves to
    /// 1: losing features is costlier than extra bits.
    pub fn predict_label(&self, features: &[f64]) -> u8 {
        u8::from(self.predict_prob(features) >= 0.5)
    }

    /// One bounded training pass of per-sample SGD over the batch, epochs
    /// capped and stopped early once the mean cross-entropy falls below
    /// `bounds.min_loss`. Returns the post-epoch mean losses.
    pub fn train_pass(
        &mut self,
        samples: &[([f64; FEATURE_DIM], u8)],
        bounds: &TrainBounds,
        shuffle_rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let mut losses = Vec::with_capacity(bounds.max_epochs);
        if samples.is_empty() {
            return losses;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..bounds.max_epochs {
            order.shuffle(shuffle_rng);
            for &i in &order {
                let (features, label) = &samples[i];
                let cache = self.net.forward_cached(features).expect("feature dim fixed");
                let p = sigmoid(cache.output()[0]);
                // dCE/dlogit = p - y
                let grad = self.net.backprop(&cache, &[p - f64::from(*label)]);
                let mut delta = grad;
                delta.scale(bounds.lr);
                self.apply(&delta);
            }
            let loss = self.mean_loss(samples);
            losses.push(loss);
            if loss <= bounds.min_loss {
                break;
            }
        }
        losses
    }

    fn apply(&mut self, delta: &MlpGrads) {
        self.net.apply_update(delta);
    }

    /// Mean cross-entropy over a labeled batch.
    pub fn mean_loss(&self, samples: &[([f64; FEATURE_DIM], u8)]) -> f64 {
        let mut total = 0.0;
        for (features, label) in samples {
            let p = self
                .predict_prob(features)
                .clamp(PROB_EPS, 1.0 - PROB_EPS);
            total -= if *label == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        total / samples.len() as f64
    }
}

/// Predicted tile report for a whole frame.
pub fn predict_tiles(model: &TilePredictor, frame: &Frame, grid: &TileGrid) -> Result<TileReport> {
    let sobel = sobel_maps(frame);
    let labels = grid
        .bounds()
        .iter()
        .map(|rect| model.predict_label(&tile_features(frame, rect, &sobel)))
        .collect();
    TileReport::new(grid.rows(), grid.cols(), labels, ReportSource::Predicted)
}
