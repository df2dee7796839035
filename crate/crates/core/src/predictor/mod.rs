//! Elevation predictors used inside the closed coding loop.

pub mod network;
mod train;
mod weights;

pub use train::{make_sample, train, TrainConfig, TrainReport, TrainingSample};
pub use weights::{load_weights, save_weights, LstmWeights};

use crate::error::{Error, Result};
use network::{Shape, Workspace, FEATURES};

/// Scale applied to the network head: one output unit is one degree of
/// correction on top of the previous reconstructed elevation.
pub const OUTPUT_SCALE_DEG: f64 = 1.0;
pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_HIDDEN: usize = 64;

/// A decoder-side reconstructed sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Reconstructed {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub laser_id: u32,
}

/// Everything a predictor may look at when predicting point `n` of a tree.
#[derive(Debug, Clone, Copy)]
pub struct PredictorContext<'a> {
    /// Reconstructed points `1..n` of the tree, oldest first. Never empty.
    pub history: &'a [Reconstructed],
    /// Reconstructed radius of the current point.
    pub r: f64,
    /// Reconstructed azimuth of the current point.
    pub phi: f64,
    pub laser_id: u32,
    /// Number of lasers used to normalize laser ids.
    pub laser_count: usize,
}

impl PredictorContext<'_> {
    pub fn previous_theta(&self) -> f64 {
        self.history.last().map_or(0.0, |p| p.theta)
    }

    /// Normalized features of the last `window` history entries, oldest
    /// first, front-padded by repeating the earliest entry.
    pub fn window_features(&self, window: usize) -> Vec<f32> {
        let start = self.history.len().saturating_sub(window);
        let recent = &self.history[start..];
        let pad = window - recent.len();
        let first = recent.first().copied().unwrap_or_default();
        std::iter::repeat_n(first, pad)
            .chain(recent.iter().copied())
            .flat_map(|p| normalize(p.r, p.theta, p.phi, p.laser_id, self.laser_count))
            .collect()
    }

    pub fn current_features(&self) -> [f32; FEATURES] {
        normalize(self.r, self.previous_theta(), self.phi, self.laser_id, self.laser_count)
    }
}

/// Fixed affine normalization: `r/100`, `theta/90`, `phi/180`, `laser/(N-1)`.
pub fn normalize(r: f64, theta: f64, phi: f64, laser_id: u32, laser_count: usize) -> [f32; FEATURES] {
    let laser = if laser_count > 1 { f64::from(laser_id) / (laser_count - 1) as f64 } else { 0.0 };
    [(r / 100.0) as f32, (theta / 90.0) as f32, (phi / 180.0) as f32, laser as f32]
}

pub trait ElevationPredictor: Send + Sync {
    fn predict(&self, ctx: &PredictorContext<'_>) -> Result<f64>;

    /// Checksum of the weight file backing this predictor, if any.
    fn weight_checksum(&self) -> Option<u64> {
        None
    }
}

/// Predicts the previous reconstructed elevation.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeltaPredictor;

impl ElevationPredictor for DeltaPredictor {
    fn predict(&self, ctx: &PredictorContext<'_>) -> Result<f64> {
        Ok(ctx.previous_theta())
    }
}

#[derive(Debug, Clone)]
pub struct LstmPredictor {
    weights: LstmWeights,
    checksum: u64,
}

impl LstmPredictor {
    pub fn new(weights: LstmWeights) -> Result<Self> {
        weights.validate()?;
        let checksum = weights.checksum();
        Ok(Self { weights, checksum })
    }

    pub fn weights(&self) -> &LstmWeights {
        &self.weights
    }
}

impl ElevationPredictor for LstmPredictor {
    fn predict(&self, ctx: &PredictorContext<'_>) -> Result<f64> {
        let w = &self.weights;
        let window = usize::from(w.window);
        let shape = Shape::new(usize::from(w.hidden));
        let mut ws = Workspace::<f32>::new(shape, window);
        let out = network::forward(shape, &w.params, &ctx.window_features(window), ctx.current_features(), &mut ws);
        let theta = ctx.previous_theta() + f64::from(out) * OUTPUT_SCALE_DEG;
        if !theta.is_finite() {
            return Err(Error::Predictor(format!("network produced {out}")));
        }
        Ok(theta)
    }

    fn weight_checksum(&self) -> Option<u64> {
        Some(self.checksum)
    }
}

/// Mean squared difference in deg².
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid("prediction and target lengths differ"));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predictions.len() as f64)
}
