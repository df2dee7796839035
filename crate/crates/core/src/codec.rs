//! Whole-cloud encode/decode: tree construction, azimuth-resolution
//! estimation and dispatch to the high-rate or low-rate coder.

use crate::container::{Bitstream, Mode};
use crate::error::{Error, Result};
use crate::geometry::{estimate_angular_resolution, LaserCalibration, PointCloud, SphericalPoint};
use crate::highrate::{self, DecodedTree, HighRateConfig, QpVector};
use crate::lowrate::{self, LowRateConfig, RdConfig};
use crate::predictor::{make_sample, DeltaPredictor, ElevationPredictor, PredictorContext, TrainingSample};
use crate::predtree::{build_trees_calibrated, build_trees_threshold, TreeSet, DEFAULT_THRESHOLD_DEG};

/// Azimuth resolution written for clouds too small to estimate one.
pub const FALLBACK_PHI_AR_DEG: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodingMode {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub mode: CodingMode,
    /// In low mode `q_r` must be 0 and `rd` supplies the radius step.
    pub qp: QpVector,
    pub rd: Option<RdConfig>,
    pub phi_ar: Option<f64>,
    pub skip_bias: bool,
    pub threshold_deg: f64,
}

impl EncodeOptions {
    pub fn high(qp: QpVector) -> Self {
        Self { mode: CodingMode::High, qp, rd: None, phi_ar: None, skip_bias: true, threshold_deg: DEFAULT_THRESHOLD_DEG }
    }

    pub fn low(qp: QpVector, rd: RdConfig) -> Self {
        Self { mode: CodingMode::Low, rd: Some(rd), ..Self::high(qp) }
    }
}

pub fn build_trees(cloud: &PointCloud, calib: Option<&LaserCalibration>, threshold_deg: f64) -> Result<TreeSet> {
    match calib {
        Some(c) => build_trees_calibrated(cloud, c),
        None => build_trees_threshold(cloud, threshold_deg),
    }
}

/// Uses `given` when present, otherwise estimates from the trees. Clouds with
/// no consecutive same-laser pair fall back to [`FALLBACK_PHI_AR_DEG`].
pub fn resolve_phi_ar(trees: &TreeSet, given: Option<f64>) -> Result<f64> {
    if let Some(v) = given {
        return Ok(v);
    }
    match estimate_angular_resolution(&trees.azimuth_groups()) {
        Ok(v) => Ok(v),
        Err(Error::Estimation(_)) if trees.trees.iter().all(|t| t.len() < 2) => Ok(FALLBACK_PHI_AR_DEG),
        Err(e) => Err(e),
    }
}

/// Encodes prepared trees and returns the encoder-side reconstruction.
pub fn encode_trees(
    trees: &TreeSet,
    opts: &EncodeOptions,
    predictor: &dyn ElevationPredictor,
) -> Result<(Bitstream, Vec<DecodedTree>)> {
    let phi_ar = resolve_phi_ar(trees, opts.phi_ar)?;
    match opts.mode {
        CodingMode::High => {
            let cfg = HighRateConfig { qp: opts.qp, phi_ar, skip_bias: opts.skip_bias };
            highrate::encode_cloud_high_with_reconstruction(trees, &cfg, predictor)
        }
        CodingMode::Low => {
            if predictor.weight_checksum().is_some() {
                return Err(Error::config("low mode uses the delta elevation predictor"));
            }
            let rd = opts.rd.ok_or_else(|| Error::config("low mode needs a radius step"))?;
            let cfg = LowRateConfig { qp: opts.qp, phi_ar, skip_bias: opts.skip_bias, rd };
            lowrate::encode_cloud_low_with_reconstruction(trees, &cfg)
        }
    }
}

pub struct Encoded {
    pub bitstream: Bitstream,
    pub trees: TreeSet,
    pub reconstruction: Vec<DecodedTree>,
}

pub fn encode(
    cloud: &PointCloud,
    calib: Option<&LaserCalibration>,
    opts: &EncodeOptions,
    predictor: &dyn ElevationPredictor,
) -> Result<Encoded> {
    let trees = build_trees(cloud, calib, opts.threshold_deg)?;
    let (bitstream, reconstruction) = encode_trees(&trees, opts, predictor)?;
    Ok(Encoded { bitstream, trees, reconstruction })
}

pub fn decode_spherical(bs: &Bitstream, predictor: &dyn ElevationPredictor) -> Result<Vec<DecodedTree>> {
    match bs.mode {
        Mode::Low => lowrate::decode_spherical_low(bs),
        Mode::High | Mode::HighLstm => highrate::decode_spherical_high(bs, predictor),
    }
}

/// Decodes to Cartesian points in tree order.
pub fn decode(bs: &Bitstream, predictor: &dyn ElevationPredictor) -> Result<PointCloud> {
    highrate::to_cloud(bs, &decode_spherical(bs, predictor)?)
}

/// Pairs every coded point with its decoded counterpart, tree by tree.
pub fn paired_points<'a>(
    trees: &'a TreeSet,
    decoded: &'a [DecodedTree],
) -> Result<Vec<(&'a SphericalPoint, SphericalPoint)>> {
    let kept: Vec<_> = trees.trees.iter().filter(|t| !t.is_empty()).collect();
    if kept.len() != decoded.len() {
        return Err(Error::invalid(format!("{} trees coded, {} decoded", kept.len(), decoded.len())));
    }
    let mut out = Vec::with_capacity(trees.point_count());
    for (t, d) in kept.iter().zip(decoded) {
        if t.len() != d.points.len() {
            return Err(Error::invalid("decoded tree length differs from the original"));
        }
        out.extend(t.points.iter().zip(&d.points).map(|(o, p)| {
            (o, SphericalPoint { r: p.r, phi: p.phi, theta: p.theta, laser_id: d.laser_id })
        }));
    }
    Ok(out)
}

/// Mean squared Cartesian distance between each point and its reconstruction.
pub fn paired_mse(trees: &TreeSet, decoded: &[DecodedTree]) -> Result<f64> {
    let pairs = paired_points(trees, decoded)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let calib = trees.calibration.as_ref();
    let mut sum = 0.0;
    for (o, d) in &pairs {
        let a = crate::geometry::spherical_to_cartesian(**o, calib)?;
        let b = crate::geometry::spherical_to_cartesian(*d, calib)?;
        sum += a.distance_squared(&b);
    }
    Ok(sum / pairs.len() as f64)
}

/// Closed-loop training samples: windows come from the reconstruction, the
/// target is the original elevation.
pub fn training_samples(
    trees: &TreeSet,
    decoded: &[DecodedTree],
    window: usize,
) -> Result<Vec<TrainingSample>> {
    let kept: Vec<_> = trees.trees.iter().filter(|t| !t.is_empty()).collect();
    if kept.len() != decoded.len() {
        return Err(Error::invalid("reconstruction does not match the trees"));
    }
    let laser_count = trees.laser_count();
    let mut out = Vec::new();
    for (t, d) in kept.iter().zip(decoded) {
        for n in 1..d.points.len() {
            let ctx = PredictorContext {
                history: &d.points[..n],
                r: d.points[n].r,
                phi: d.points[n].phi,
                laser_id: d.laser_id,
                laser_count,
            };
            out.push(make_sample(&ctx, window, t.points[n].theta));
        }
    }
    Ok(out)
}

/// Training samples from a delta-predictor encode of `cloud` at `opts`.
pub fn cloud_training_samples(
    cloud: &PointCloud,
    calib: Option<&LaserCalibration>,
    opts: &EncodeOptions,
    window: usize,
) -> Result<Vec<TrainingSample>> {
    let enc = encode(cloud, calib, opts, &DeltaPredictor)?;
    training_samples(&enc.trees, &enc.reconstruction, window)
}
