//! Surrogate compression model and the QoE objective.
//!
//! Real video encoding is out of scope; the rate model keeps the monotone
//! trade-off an adaptation agent must learn: transmitted size halves per +6
//! QP (the standard codec rule of thumb) and scales with the pixel count,
//! i.e. quadratically in the resolution factor. Tiles declared unimportant
//! are always encoded at a coarser floor configuration; the agent's action
//! sets the quality of important tiles only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tilesense::TileReport;

/// The five resolution scale factors, in action-index order.
pub const RES_OPTIONS: [f64; 5] = [1.0, 0.9, 0.8, 0.7, 0.6];
/// The five quantization parameters, in action-index order.
pub const QP_OPTIONS: [u32; 5] = [20, 24, 28, 32, 36];
/// Number of ⟨res, QP⟩ combinations in the action space.
pub const ACTION_COUNT: usize = RES_OPTIONS.len() * QP_OPTIONS.len();

/// A ⟨resolution, QP⟩ compression configuration.
///
/// The action space is the Cartesian product of [`RES_OPTIONS`] and
/// [`QP_OPTIONS`]; the index mapping is `index = 5 * res_rank + qp_rank`,
/// so index 0 is (1.0, 20) and index 24 is (0.6, 36). [`ConfigAction::new`]
/// and [`ConfigAction::from_index`] enforce menu membership; the rate
/// formula itself is defined for any positive `res` and `qp >= 20`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigAction {
    pub res: f64,
    pub qp: u32,
}

impl ConfigAction {
    /// The identity configuration (no downscaling, finest quantization).
    pub const IDENTITY: ConfigAction = ConfigAction { res: 1.0, qp: 20 };
    /// The coarsest pair, used as the default floor for unimportant tiles.
    pub const COARSEST: ConfigAction = ConfigAction { res: 0.6, qp: 36 };

    pub fn new(res: f64, qp: u32) -> Result<Self> {
        if !RES_OPTIONS.contains(&res) {
            return Err(Error::argument(format!(
                "res {res} not in {RES_OPTIONS:?}"
            )));
        }
        if !QP_OPTIONS.contains(&qp) {
            return Err(Error::argument(format!("qp {qp} not in {QP_OPTIONS:?}")));
        }
        Ok(ConfigAction { res, qp })
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= ACTION_COUNT {
            return Err(Error::argument(format!(
                "action index {index} out of range 0..{ACTION_COUNT}"
            )));
        }
        Ok(ConfigAction {
            res: RES_OPTIONS[index / QP_OPTIONS.len()],
            qp: QP_OPTIONS[index % QP_OPTIONS.len()],
        })
    }

    pub fn index(&self) -> usize {
        let res_rank = RES_OPTIONS
            .iter()
            .position(|&r| r == self.res)
            .expect("res outside menu has no index");
        let qp_rank = QP_OPTIONS
            .iter()
            .position(|&q| q == self.qp)
            .expect("qp outside menu has no index");
        res_rank * QP_OPTIONS.len() + qp_rank
    }

    /// Fraction of the raw byte share that survives this configuration:
    /// `res^2 * 2^(-(qp - 20) / 6)`.
    pub fn rate_factor(&self) -> f64 {
        self.res * self.res * 2f64.powf(-((self.qp as f64 - 20.0) / 6.0))
    }
}

/// Weights of the QoE objective; at least one must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl QoeWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 {
            return Err(Error::argument("QoE weights must be non-negative"));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Err(Error::argument("QoE weights must not both be zero"));
        }
        Ok(QoeWeights { alpha, beta })
    }
}

impl Default for QoeWeights {
    fn default() -> Self {
        QoeWeights {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Transmitted bytes after compressing a frame under `action` for important
/// tiles and `floor_action` for the rest.
///
/// Each tile holds a uniform share of the raw frame size. The floor must be
/// at least as coarse as the action on both knobs.
pub fn data_size(
    frame_raw_size: f64,
    importance: &TileReport,
    action: &ConfigAction,
    floor_action: &ConfigAction,
) -> Result<f64> {
    if frame_raw_size <= 0.0 {
        return Err(Error::argument("frame_raw_size must be > 0"));
    }
    if floor_action.qp < action.qp || floor_action.res > action.res {
        return Err(Error::argument(format!(
            "floor ({}, {}) must be at least as coarse as action ({}, {})",
            floor_action.res, floor_action.qp, action.res, action.qp
        )));
    }
    let tiles = importance.labels().len();
    let share = frame_raw_size / tiles as f64;
    let action_factor = action.rate_factor();
    let floor_factor = floor_action.rate_factor();
    let important = importance.count_important();
    let unimportant = tiles - important;
    Ok(share * (important as f64 * action_factor + unimportant as f64 * floor_factor))
}

/// SLAM-performance proxy: label agreement between a predicted and an oracle
/// report, `1 - hamming / tiles`.
pub fn slam_perf(predicted: &TileReport, oracle: &TileReport) -> Result<f64> {
    if predicted.rows() != oracle.rows() || predicted.cols() != oracle.cols() {
        return Err(Error::argument(format!(
            "report dimensions differ: {}x{} vs {}x{}",
            predicted.rows(),
            predicted.cols(),
            oracle.rows(),
            oracle.cols()
        )));
    }
    let total = predicted.labels().len();
    let mismatches = predicted
        .labels()
        .iter()
        .zip(oracle.labels())
        .filter(|(a, b)| a != b)
        .count();
    Ok(1.0 - mismatches as f64 / total as f64)
}

/// QoE over an episode: `alpha * sum(P_i) - beta * sum(8 * Q_i / B_i)`,
/// with sizes in bytes and bandwidths in bits/second.
pub fn qoe(perf: &[f64], sizes: &[f64], bandwidths: &[f64], weights: &QoeWeights) -> Result<f64> {
    if perf.len() != sizes.len() || sizes.len() != bandwidths.len() {
        return Err(Error::argument(format!(
            "sequence lengths differ: {} perf, {} sizes, {} bandwidths",
            perf.len(),
            sizes.len(),
            bandwidths.len()
        )));
    }
    if let Some(b) = bandwidths.iter().find(|b| **b <= 0.0) {
        return Err(Error::argument(format!("bandwidth must be > 0, got {b}")));
    }
    let perf_sum: f64 = perf.iter().sum();
    let tx_sum: f64 = sizes
        .iter()
        .zip(bandwidths)
        .map(|(q, b)| 8.0 * q / b)
        .sum();
    Ok(weights.alpha * perf_sum - weights.beta * tx_sum)
}
