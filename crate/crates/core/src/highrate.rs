//! High-rate coding: azimuths as integer multiples of a unit angle plus a
//! bias, radii by closed-loop differential coding, elevations by closed-loop
//! prediction residuals.

use rayon::prelude::*;

use crate::container::{Bitstream, Mode, TreeRecord};
use crate::entropy::{decode_int, encode_int, IntContexts, RangeDecoder, RangeEncoder, MAX_MAGNITUDE};
use crate::error::{Error, Result};
use crate::geometry::{spherical_to_cartesian, PointCloud, SphericalPoint, MAX_ELEVATION_DEG};
use crate::predictor::{ElevationPredictor, PredictorContext, Reconstructed};
use crate::predtree::{PredictiveTree, TreeSet};

pub const Q_PHI_MAX: u16 = 16;
pub const Q_MAX: u16 = 256;

/// Quantization parameters: `q_delta` and `q_theta` in steps per degree,
/// `q_phi` divides the angular resolution, `q_r` in steps per meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QpVector {
    pub q_delta: u16,
    pub q_phi: u16,
    pub q_theta: u16,
    pub q_r: u16,
}

impl QpVector {
    pub const fn new(q_delta: u16, q_phi: u16, q_theta: u16, q_r: u16) -> Self {
        Self { q_delta, q_phi, q_theta, q_r }
    }

    /// Checks the ranges; `q_r` must be 0 in low mode and in `1..=256` otherwise.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        let in_range = |q: u16, max: u16| (1..=max).contains(&q);
        let radius_ok = match mode {
            Mode::Low => self.q_r == 0,
            Mode::High | Mode::HighLstm => in_range(self.q_r, Q_MAX),
        };
        if !(in_range(self.q_delta, Q_MAX) && in_range(self.q_phi, Q_PHI_MAX) && in_range(self.q_theta, Q_MAX) && radius_ok)
        {
            return Err(Error::config(format!("quantization parameters {self:?} out of range for {mode:?} mode")));
        }
        Ok(())
    }

    pub fn phi_unit(&self, phi_ar: f64) -> f64 {
        phi_ar / f64::from(self.q_phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighRateConfig {
    pub qp: QpVector,
    /// Angular resolution in degrees.
    pub phi_ar: f64,
    /// Leave azimuth biases uncoded.
    pub skip_bias: bool,
}

impl HighRateConfig {
    pub fn new(qp: QpVector, phi_ar: f64) -> Self {
        Self { qp, phi_ar, skip_bias: true }
    }
}

/// Rounds half away from zero into a codable integer.
pub(crate) fn quantize(x: f64) -> Result<i64> {
    let k = x.round();
    if !k.is_finite() || k.abs() >= MAX_MAGNITUDE as f64 {
        return Err(Error::invalid(format!("quantized value {x} out of codable range")));
    }
    Ok(k as i64)
}

/// Azimuth coding parameters shared by both modes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AzimuthCoding {
    pub unit: f64,
    /// Slope advance of one firing, in units.
    pub advance: i64,
    pub q_delta: f64,
    pub skip_bias: bool,
}

impl AzimuthCoding {
    pub fn new(qp: QpVector, phi_ar: f64, skip_bias: bool) -> Result<Self> {
        if !(phi_ar.is_finite() && phi_ar > 0.0) {
            return Err(Error::invalid(format!("angular resolution {phi_ar} must be positive")));
        }
        Ok(Self { unit: qp.phi_unit(phi_ar), advance: i64::from(qp.q_phi), q_delta: f64::from(qp.q_delta), skip_bias })
    }

    fn slope(&self, phi: f64) -> Result<i64> {
        quantize(phi / self.unit)
    }

    /// Codes `phis[1..]`; `phis[0]` is the root and is reconstructed exactly.
    /// Slope deltas are coded relative to one firing advance.
    pub fn encode(&self, phis: &[f64]) -> Result<(Vec<u8>, Vec<u8>, Vec<f64>)> {
        let (mut slopes, mut biases) = (RangeEncoder::new(), RangeEncoder::new());
        let (mut sctx, mut bctx) = (IntContexts::new(), IntContexts::new());
        let mut recon = Vec::with_capacity(phis.len());
        let Some(&root) = phis.first() else {
            return Ok((Vec::new(), Vec::new(), recon));
        };
        recon.push(root);
        let mut prev = self.slope(root)?;
        for &phi in &phis[1..] {
            let s = self.slope(phi)?;
            encode_int(&mut slopes, &mut sctx, s - prev - self.advance)?;
            prev = s;
            let base = self.unit * s as f64;
            let phi_bar = if self.skip_bias {
                base
            } else {
                let d = quantize((phi - base) * self.q_delta)?;
                encode_int(&mut biases, &mut bctx, d)?;
                base + d as f64 / self.q_delta
            };
            recon.push(phi_bar);
        }
        Ok((slopes.finish().bytes, biases.finish().bytes, recon))
    }

    pub fn decode(&self, slopes: &[u8], biases: &[u8], root: f64, count: usize) -> Result<Vec<f64>> {
        let mut sdec = RangeDecoder::new(slopes)?;
        let mut bdec = RangeDecoder::new(biases)?;
        let (mut sctx, mut bctx) = (IntContexts::new(), IntContexts::new());
        let mut recon = Vec::with_capacity(count);
        recon.push(root);
        let mut prev = self.slope(root)?;
        for _ in 1..count {
            let s = prev
                .checked_add(decode_int(&mut sdec, &mut sctx)?)
                .and_then(|s| s.checked_add(self.advance))
                .ok_or_else(|| Error::corrupt("slope overflow"))?;
            prev = s;
            let base = self.unit * s as f64;
            let phi_bar = if self.skip_bias {
                base
            } else {
                base + decode_int(&mut bdec, &mut bctx)? as f64 / self.q_delta
            };
            recon.push(phi_bar);
        }
        sdec.finish()?;
        bdec.finish()?;
        Ok(recon)
    }
}

/// Closed-loop differential radius coding of `radii[1..]`.
pub(crate) fn encode_radius(radii: &[f64], q_r: f64) -> Result<(Vec<u8>, Vec<f64>)> {
    let mut enc = RangeEncoder::new();
    let mut ctx = IntContexts::new();
    let mut recon = Vec::with_capacity(radii.len());
    for (n, &r) in radii.iter().enumerate() {
        if n == 0 {
            recon.push(r);
            continue;
        }
        let pred = recon[n - 1];
        let k = quantize((r - pred) * q_r)?;
        encode_int(&mut enc, &mut ctx, k)?;
        recon.push(pred + k as f64 / q_r);
    }
    Ok((enc.finish().bytes, recon))
}

pub(crate) fn decode_radius(bytes: &[u8], root: f64, count: usize, q_r: f64) -> Result<Vec<f64>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut ctx = IntContexts::new();
    let mut recon = Vec::with_capacity(count);
    recon.push(root);
    for n in 1..count {
        let k = decode_int(&mut dec, &mut ctx)?;
        recon.push(recon[n - 1] + k as f64 / q_r);
    }
    dec.finish()?;
    Ok(recon)
}

/// Inputs shared by the elevation encoder and decoder for one tree.
pub(crate) struct ElevationCoding<'a> {
    pub predictor: &'a dyn ElevationPredictor,
    pub q_theta: f64,
    pub laser_id: u32,
    pub laser_count: usize,
}

impl ElevationCoding<'_> {
    fn predict(&self, history: &[Reconstructed], r: f64, phi: f64) -> Result<f64> {
        let ctx = PredictorContext { history, r, phi, laser_id: self.laser_id, laser_count: self.laser_count };
        let pred = self.predictor.predict(&ctx)?;
        if !pred.is_finite() {
            return Err(Error::Predictor(format!("non-finite prediction {pred}")));
        }
        Ok(pred)
    }

    fn reconstruct(&self, pred: f64, k: i64) -> f64 {
        (pred + k as f64 / self.q_theta).clamp(-MAX_ELEVATION_DEG, MAX_ELEVATION_DEG)
    }

    /// Codes `thetas[1..]` against predictions from the reconstructed history;
    /// `radii` and `phis` are the reconstructed values.
    pub fn encode(&self, thetas: &[f64], radii: &[f64], phis: &[f64]) -> Result<(Vec<u8>, Vec<Reconstructed>)> {
        let mut enc = RangeEncoder::new();
        let mut ctx = IntContexts::new();
        let mut history = Vec::with_capacity(thetas.len());
        for (n, &theta) in thetas.iter().enumerate() {
            let theta_bar = if n == 0 {
                theta
            } else {
                let pred = self.predict(&history, radii[n], phis[n])?;
                let k = quantize((theta - pred) * self.q_theta)?;
                encode_int(&mut enc, &mut ctx, k)?;
                self.reconstruct(pred, k)
            };
            history.push(Reconstructed { r: radii[n], theta: theta_bar, phi: phis[n], laser_id: self.laser_id });
        }
        Ok((enc.finish().bytes, history))
    }

    pub fn decode(&self, bytes: &[u8], root: f64, radii: &[f64], phis: &[f64]) -> Result<Vec<Reconstructed>> {
        let mut dec = RangeDecoder::new(bytes)?;
        let mut ctx = IntContexts::new();
        let mut history = Vec::with_capacity(radii.len());
        for n in 0..radii.len() {
            let theta_bar = if n == 0 {
                root
            } else {
                let pred = self.predict(&history, radii[n], phis[n])?;
                self.reconstruct(pred, decode_int(&mut dec, &mut ctx)?)
            };
            history.push(Reconstructed { r: radii[n], theta: theta_bar, phi: phis[n], laser_id: self.laser_id });
        }
        dec.finish()?;
        Ok(history)
    }
}

/// One decoded tree, in tree order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTree {
    pub laser_id: u32,
    pub points: Vec<Reconstructed>,
}

pub(crate) fn laser_u16(tree: &PredictiveTree) -> Result<u16> {
    u16::try_from(tree.laser_id).map_err(|_| Error::invalid(format!("laser id {} exceeds 65535", tree.laser_id)))
}

pub(crate) fn tree_count(tree: &PredictiveTree) -> Result<u32> {
    u32::try_from(tree.len()).map_err(|_| Error::invalid("tree too large"))
}

fn columns(points: &[SphericalPoint]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        points.iter().map(|p| p.r).collect(),
        points.iter().map(|p| p.theta).collect(),
        points.iter().map(|p| p.phi).collect(),
    )
}

fn encode_tree(
    tree: &PredictiveTree,
    cfg: &HighRateConfig,
    predictor: &dyn ElevationPredictor,
    laser_count: usize,
) -> Result<(TreeRecord, Vec<Reconstructed>)> {
    let (radii, thetas, phis) = columns(&tree.points);
    let az = AzimuthCoding::new(cfg.qp, cfg.phi_ar, cfg.skip_bias)?;
    let (slopes, biases, phi_bar) = az.encode(&phis)?;
    let (radii_bytes, r_bar) = encode_radius(&radii, f64::from(cfg.qp.q_r))?;
    let el = ElevationCoding { predictor, q_theta: f64::from(cfg.qp.q_theta), laser_id: tree.laser_id, laser_count };
    let (elevations, recon) = el.encode(&thetas, &r_bar, &phi_bar)?;
    let record = TreeRecord {
        laser_id: laser_u16(tree)?,
        count: tree_count(tree)?,
        root: [radii[0], thetas[0], phis[0]],
        slopes,
        biases,
        radii: radii_bytes,
        elevations,
    };
    Ok((record, recon))
}

fn check_inputs(trees: &TreeSet, cfg: &HighRateConfig, mode: Mode) -> Result<()> {
    cfg.qp.validate(mode)?;
    if !(cfg.phi_ar.is_finite() && cfg.phi_ar > 0.0) {
        return Err(Error::invalid(format!("angular resolution {} must be positive", cfg.phi_ar)));
    }
    if let Some(p) = trees.trees.iter().flat_map(|t| &t.points).find(|p| !(p.r.is_finite() && p.theta.is_finite() && p.phi.is_finite())) {
        return Err(Error::invalid(format!("non-finite point {p:?}")));
    }
    Ok(())
}

/// Encodes and also returns the encoder-side reconstruction of every tree.
pub fn encode_cloud_high_with_reconstruction(
    trees: &TreeSet,
    cfg: &HighRateConfig,
    predictor: &dyn ElevationPredictor,
) -> Result<(Bitstream, Vec<DecodedTree>)> {
    let mode = if predictor.weight_checksum().is_some() { Mode::HighLstm } else { Mode::High };
    check_inputs(trees, cfg, mode)?;
    let laser_count = trees.laser_count();
    let coded: Vec<(TreeRecord, Vec<Reconstructed>)> = trees
        .trees
        .par_iter()
        .filter(|t| !t.is_empty())
        .map(|t| encode_tree(t, cfg, predictor, laser_count))
        .collect::<Result<_>>()?;
    let (records, recon): (Vec<_>, Vec<_>) = coded.into_iter().unzip();
    let decoded = records
        .iter()
        .zip(recon)
        .map(|(rec, points)| DecodedTree { laser_id: u32::from(rec.laser_id), points })
        .collect();
    let bs = Bitstream {
        mode,
        qp: cfg.qp,
        skip_bias: cfg.skip_bias,
        radius_step: 0.0,
        phi_ar: cfg.phi_ar,
        calibration: trees.calibration.clone(),
        weight_checksum: predictor.weight_checksum().unwrap_or(0),
        trees: records,
        matrices: None,
    };
    Ok((bs, decoded))
}

pub fn encode_cloud_high(trees: &TreeSet, cfg: &HighRateConfig, predictor: &dyn ElevationPredictor) -> Result<Bitstream> {
    Ok(encode_cloud_high_with_reconstruction(trees, cfg, predictor)?.0)
}

/// Ensures `predictor` is the one the bitstream was encoded with.
pub(crate) fn check_predictor(bs: &Bitstream, predictor: &dyn ElevationPredictor) -> Result<()> {
    match (bs.mode, predictor.weight_checksum()) {
        (Mode::HighLstm, None) => Err(Error::config("bitstream needs the LSTM weight file")),
        (Mode::HighLstm, Some(found)) if found != bs.weight_checksum => {
            Err(Error::ChecksumMismatch { expected: bs.weight_checksum, found })
        }
        (Mode::High | Mode::Low, Some(_)) => Err(Error::config("bitstream was coded without LSTM weights")),
        _ => Ok(()),
    }
}

/// Decodes to spherical coordinates, tree by tree.
pub fn decode_spherical_high(bs: &Bitstream, predictor: &dyn ElevationPredictor) -> Result<Vec<DecodedTree>> {
    if bs.mode == Mode::Low {
        return Err(Error::format("low-mode bitstream passed to the high-rate decoder"));
    }
    check_predictor(bs, predictor)?;
    let az = AzimuthCoding::new(bs.qp, bs.phi_ar, bs.skip_bias)?;
    let laser_count = bs.laser_count();
    let q_r = f64::from(bs.qp.q_r);
    bs.trees
        .par_iter()
        .map(|rec| {
            let count = rec.count as usize;
            let [r0, theta0, phi0] = rec.root;
            let phi_bar = az.decode(&rec.slopes, &rec.biases, phi0, count)?;
            let r_bar = decode_radius(&rec.radii, r0, count, q_r)?;
            let el = ElevationCoding {
                predictor,
                q_theta: f64::from(bs.qp.q_theta),
                laser_id: u32::from(rec.laser_id),
                laser_count,
            };
            let points = el.decode(&rec.elevations, theta0, &r_bar, &phi_bar)?;
            Ok(DecodedTree { laser_id: u32::from(rec.laser_id), points })
        })
        .collect()
}

/// Converts decoded trees to Cartesian points, laser by laser.
pub fn to_cloud(bs: &Bitstream, trees: &[DecodedTree]) -> Result<PointCloud> {
    let calib = bs.calibration.as_ref();
    let mut points = Vec::with_capacity(bs.point_count());
    let mut ids = Vec::with_capacity(bs.point_count());
    for t in trees {
        for p in &t.points {
            let s = SphericalPoint { r: p.r, phi: p.phi, theta: p.theta, laser_id: t.laser_id };
            points.push(spherical_to_cartesian(s, calib).map_err(|e| Error::corrupt(e.to_string()))?);
            ids.push(t.laser_id);
        }
    }
    Ok(PointCloud { points, laser_ids: Some(ids) })
}

pub fn decode_cloud_high(bs: &Bitstream, predictor: &dyn ElevationPredictor) -> Result<PointCloud> {
    to_cloud(bs, &decode_spherical_high(bs, predictor)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CartesianPoint;
    use crate::predictor::{DeltaPredictor, LstmPredictor, LstmWeights};
    use crate::predtree::build_trees_threshold;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SLACK: f64 = 1e-9;

    fn az(q_phi: u16, q_delta: u16, skip: bool, phi_ar: f64) -> AzimuthCoding {
        AzimuthCoding::new(QpVector::new(q_delta, q_phi, 1, 1), phi_ar, skip).unwrap()
    }

    fn decode_ints_of(bytes: &[u8], n: usize) -> Vec<i64> {
        crate::entropy::decode_ints(bytes, n).unwrap()
    }

    #[test]
    fn regular_sweep_slopes() {
        let phis: Vec<f64> = (0..100).map(|n| n as f64 * 0.2).collect();
        let a = az(1, 1, false, 0.2);
        let (slopes, biases, recon) = a.encode(&phis).unwrap();
        assert!(decode_ints_of(&slopes, 99).iter().all(|&d| d + a.advance == 1));
        assert!(decode_ints_of(&biases, 99).iter().all(|&d| d == 0));
        assert_eq!(a.decode(&slopes, &biases, phis[0], 100).unwrap(), recon);

        let a = az(2, 1, false, 0.2);
        let (slopes, biases, recon) = a.encode(&phis).unwrap();
        assert!(decode_ints_of(&slopes, 99).iter().all(|&d| d + a.advance == 2));
        assert_eq!(a.decode(&slopes, &biases, phis[0], 100).unwrap(), recon);
    }

    #[test]
    fn jittered_sweep_bias_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phis: Vec<f64> = (0..5000).map(|n| -179.0 + n as f64 * 0.07 + rng.random_range(-0.03..0.03)).collect();
        let a = az(3, 256, false, 0.2);
        let (slopes, biases, recon) = a.encode(&phis).unwrap();
        for (p, r) in phis.iter().zip(&recon) {
            assert!((p - r).abs() <= 1.0 / 512.0 + SLACK);
        }
        assert_eq!(a.decode(&slopes, &biases, phis[0], phis.len()).unwrap(), recon);

        let a = az(3, 1, true, 0.2);
        let (slopes, biases, recon) = a.encode(&phis).unwrap();
        assert!(biases.is_empty());
        for (p, r) in phis.iter().zip(&recon) {
            assert!((p - r).abs() <= a.unit / 2.0 + SLACK);
        }
        assert_eq!(a.decode(&slopes, &biases, phis[0], phis.len()).unwrap(), recon);
    }

    #[test]
    fn radius_closed_loop_bounds() {
        let constant = vec![12.5; 50];
        let (bytes, recon) = encode_radius(&constant, 12.0).unwrap();
        assert_eq!(recon, constant);
        assert!(decode_ints_of(&bytes, 49).iter().all(|&k| k == 0));

        let ramp: Vec<f64> = (0..2000).map(|n| n as f64 * 0.37).collect();
        let (bytes, recon) = encode_radius(&ramp, 28.0).unwrap();
        for (r, rb) in ramp.iter().zip(&recon) {
            assert!((r - rb).abs() <= 1.0 / 56.0 + SLACK);
        }
        assert_eq!(decode_radius(&bytes, ramp[0], ramp.len(), 28.0).unwrap(), recon);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noisy: Vec<f64> = (0..5000).map(|_| rng.random_range(1.0..120.0)).collect();
        let (_, recon) = encode_radius(&noisy, 12.0).unwrap();
        let worst = noisy.iter().zip(&recon).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.0 / 24.0 + SLACK, "{worst}");
    }

    #[test]
    fn elevation_constant_laser_has_zero_residuals() {
        let el = ElevationCoding { predictor: &DeltaPredictor, q_theta: 21.0, laser_id: 0, laser_count: 1 };
        let thetas = vec![-3.5; 40];
        let radii = vec![10.0; 40];
        let phis: Vec<f64> = (0..40).map(|n| n as f64).collect();
        let (bytes, recon) = el.encode(&thetas, &radii, &phis).unwrap();
        assert!(decode_ints_of(&bytes, 39).iter().all(|&k| k == 0));
        assert!(recon.iter().all(|p| p.theta == -3.5));
    }

    fn scan(n_lasers: usize, per_laser: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for l in 0..n_lasers {
            let elev = -15.0 + 30.0 * l as f64 / n_lasers as f64;
            for k in 0..per_laser {
                let phi = (-179.9 + 359.8 * k as f64 / per_laser as f64 + rng.random_range(-0.01..0.01)).to_radians();
                let r = rng.random_range(5.0..80.0);
                let theta = (elev + rng.random_range(-0.05..0.05)).to_radians();
                pts.push(CartesianPoint::new(r * phi.cos(), r * phi.sin(), r * theta.tan()));
            }
        }
        PointCloud::new(pts)
    }

    fn max_errors(trees: &TreeSet, decoded: &[DecodedTree]) -> (f64, f64, f64) {
        let mut worst = (0.0f64, 0.0f64, 0.0f64);
        for (t, d) in trees.trees.iter().zip(decoded) {
            assert_eq!(t.laser_id, d.laser_id);
            for (p, q) in t.points.iter().zip(&d.points) {
                worst.0 = worst.0.max((p.r - q.r).abs());
                worst.1 = worst.1.max((p.theta - q.theta).abs());
                worst.2 = worst.2.max((p.phi - q.phi).abs());
            }
        }
        worst
    }

    #[test]
    fn full_pipeline_bounds_and_encoder_decoder_agreement() {
        let cloud = scan(8, 400, 3);
        let trees = build_trees_threshold(&cloud, 180.0).unwrap();
        for (qp, skip) in [(QpVector::new(1, 2, 2, 12), true), (QpVector::new(256, 8, 21, 130), false)] {
            let cfg = HighRateConfig { qp, phi_ar: 0.9, skip_bias: skip };
            let (bs, enc_side) = encode_cloud_high_with_reconstruction(&trees, &cfg, &DeltaPredictor).unwrap();
            let bs = Bitstream::from_bytes(&bs.to_bytes()).unwrap();
            let dec_side = decode_spherical_high(&bs, &DeltaPredictor).unwrap();
            assert_eq!(enc_side, dec_side);
            let (er, et, ep) = max_errors(&trees, &dec_side);
            let unit = qp.phi_unit(0.9);
            let phi_bound = if skip { unit / 2.0 } else { 1.0 / (2.0 * f64::from(qp.q_delta)) };
            assert!(er <= 1.0 / (2.0 * f64::from(qp.q_r)) + SLACK, "{er}");
            assert!(et <= 1.0 / (2.0 * f64::from(qp.q_theta)) + SLACK, "{et}");
            assert!(ep <= phi_bound + SLACK, "{ep}");
            assert_eq!(decode_cloud_high(&bs, &DeltaPredictor).unwrap().len(), cloud.len());
        }
    }

    #[test]
    fn near_lossless_three_points() {
        let cloud = PointCloud::new(vec![
            CartesianPoint::new(10.0, 1.0, -0.5),
            CartesianPoint::new(-40.0, 30.0, 2.0),
            CartesianPoint::new(70.0, -70.0, 1.0),
        ]);
        let trees = build_trees_threshold(&cloud, 180.0).unwrap();
        let cfg = HighRateConfig { qp: QpVector::new(256, 16, 256, 256), phi_ar: 0.2, skip_bias: false };
        let bs = encode_cloud_high(&trees, &cfg, &DeltaPredictor).unwrap();
        let out = decode_cloud_high(&Bitstream::from_bytes(&bs.to_bytes()).unwrap(), &DeltaPredictor).unwrap();
        let original = crate::predtree::flatten(&trees).unwrap();
        for (a, b) in original.iter().zip(out.iter()) {
            assert!(a.distance(b) < 0.01, "{a:?} {b:?}");
        }
    }

    #[test]
    fn empty_cloud_round_trip() {
        let trees = build_trees_threshold(&PointCloud::default(), 180.0).unwrap();
        let cfg = HighRateConfig::new(QpVector::new(1, 2, 2, 12), 0.2);
        let bs = encode_cloud_high(&trees, &cfg, &DeltaPredictor).unwrap();
        assert!(bs.trees.is_empty());
        let back = Bitstream::from_bytes(&bs.to_bytes()).unwrap();
        assert!(decode_cloud_high(&back, &DeltaPredictor).unwrap().is_empty());
    }

    #[test]
    fn lstm_mode_checks_weights() {
        let cloud = scan(4, 60, 5);
        let trees = build_trees_threshold(&cloud, 180.0).unwrap();
        let lstm = LstmPredictor::new(LstmWeights::random(4, 6, 1)).unwrap();
        let cfg = HighRateConfig::new(QpVector::new(1, 2, 8, 40), 6.0);
        let (bs, enc_side) = encode_cloud_high_with_reconstruction(&trees, &cfg, &lstm).unwrap();
        assert_eq!(bs.mode, Mode::HighLstm);
        assert_eq!(decode_spherical_high(&bs, &lstm).unwrap(), enc_side);
        let other = LstmPredictor::new(LstmWeights::random(4, 6, 2)).unwrap();
        assert!(matches!(decode_spherical_high(&bs, &other), Err(Error::ChecksumMismatch { .. })));
        assert!(matches!(decode_spherical_high(&bs, &DeltaPredictor), Err(Error::Config(_))));
    }

    #[test]
    fn qp_validation() {
        assert!(QpVector::new(1, 16, 256, 256).validate(Mode::High).is_ok());
        assert!(QpVector::new(1, 17, 1, 1).validate(Mode::High).is_err());
        assert!(QpVector::new(1, 1, 1, 0).validate(Mode::High).is_err());
        assert!(QpVector::new(1, 1, 1, 0).validate(Mode::Low).is_ok());
        assert!(QpVector::new(0, 1, 1, 1).validate(Mode::High).is_err());
        assert_eq!(quantize(2.5).unwrap(), 3);
        assert_eq!(quantize(-2.5).unwrap(), -3);
        assert!(quantize(f64::NAN).is_err());
    }
}
