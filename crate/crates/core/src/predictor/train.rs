use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::network::{self, Shape, Workspace, FEATURES};
use super::{LstmWeights, PredictorContext, DEFAULT_HIDDEN, DEFAULT_WINDOW, OUTPUT_SCALE_DEG};
use crate::error::{Error, Result};

/// Samples per gradient-accumulation chunk. Chunks are summed in index order,
/// so results do not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch learning-rate multiplier.
    pub decay: f64,
    pub window: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            decay: 0.99,
            window: DEFAULT_WINDOW,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0
            && self.batch_size > 0
            && self.window > 0
            && self.hidden > 0
            && self.learning_rate > 0.0
            && self.decay > 0.0;
        if !positive {
            return Err(Error::config("training parameters must be positive"));
        }
        if self.window > usize::from(u16::MAX) || self.hidden > usize::from(u16::MAX) {
            return Err(Error::config("window and hidden size must fit in 16 bits"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// `window x 4` normalized features, oldest first.
    pub inputs: Vec<f32>,
    pub current: [f32; FEATURES],
    pub prev_theta: f64,
    pub target: f64,
}

pub fn make_sample(ctx: &PredictorContext<'_>, window: usize, target: f64) -> TrainingSample {
    TrainingSample {
        inputs: ctx.window_features(window),
        current: ctx.current_features(),
        prev_theta: ctx.previous_theta(),
        target,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared error (deg²) seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean squared error of the delta predictor on the same samples.
    pub delta_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn to_f64<const N: usize>(v: [f32; N]) -> [f64; N] {
    v.map(f64::from)
}

/// Accumulated gradient and squared error of one chunk.
fn chunk_gradient(shape: Shape, params: &[f64], chunk: &[&TrainingSample], window: usize, scale: f64) -> (Vec<f64>, f64) {
    let mut grads = vec![0.0; params.len()];
    let mut ws = Workspace::<f64>::new(shape, window);
    let mut sq = 0.0;
    for s in chunk {
        let inputs: Vec<f64> = s.inputs.iter().map(|&x| f64::from(x)).collect();
        let out = network::forward(shape, params, &inputs, to_f64(s.current), &mut ws);
        let err = s.prev_theta + out * OUTPUT_SCALE_DEG - s.target;
        sq += err * err;
        network::backward(shape, params, &ws, 2.0 * err * OUTPUT_SCALE_DEG * scale, &mut grads);
    }
    (grads, sq)
}

/// Fits LSTM weights to minimize the squared elevation error with Adam.
pub fn train(samples: &[TrainingSample], cfg: &TrainConfig, seed: u64) -> Result<(LstmWeights, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(bad) = samples.iter().find(|s| s.inputs.len() != cfg.window * FEATURES) {
        return Err(Error::config(format!(
            "sample window holds {} values, configured window needs {}",
            bad.inputs.len(),
            cfg.window * FEATURES
        )));
    }
    let shape = Shape::new(cfg.hidden);
    let init = LstmWeights::random(cfg.hidden as u16, cfg.window as u16, seed);
    let mut params: Vec<f64> = init.params.iter().map(|&p| f64::from(p)).collect();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    let delta_loss =
        samples.iter().map(|s| (s.prev_theta - s.target).powi(2)).sum::<f64>() / samples.len() as f64;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_sq = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let members: Vec<&TrainingSample> = batch.iter().map(|&i| &samples[i]).collect();
            let scale = 1.0 / members.len() as f64;
            let parts: Vec<(Vec<f64>, f64)> = members
                .par_chunks(CHUNK)
                .map(|c| chunk_gradient(shape, &params, c, cfg.window, scale))
                .collect();
            let mut grads = vec![0.0; params.len()];
            for (g, sq) in &parts {
                for (a, b) in grads.iter_mut().zip(g) {
                    *a += b;
                }
                total_sq += sq;
            }
            adam.update(&mut params, &grads, lr);
        }
        let loss = total_sq / samples.len() as f64;
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence(format!("loss became {loss} in epoch {epoch}")));
        }
        epoch_losses.push(loss);
        lr *= cfg.decay;
    }

    let weights = LstmWeights {
        hidden: cfg.hidden as u16,
        window: cfg.window as u16,
        params: params.iter().map(|&p| p as f32).collect(),
    };
    weights.validate().map_err(|e| Error::Divergence(e.to_string()))?;
    Ok((weights, TrainReport { epoch_losses, delta_loss }))
}
