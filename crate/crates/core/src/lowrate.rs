//! Low-rate coding: azimuths as in the high-rate mode, elevations with the
//! delta predictor, and radii gathered into 256x256 matrices that are
//! uniformly quantized and coded with per-row Laplace models.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::container::{Bitstream, MatrixRecord, MatrixSection, Mode, TreeRecord};
use crate::entropy::{
    decode_int, decode_laplace, encode_int, encode_laplace, fit_laplace, laplace_bits, nearest_scale_index,
    scale_from_index, BinaryContext, IntContexts, LaplaceParams, RangeDecoder, RangeEncoder, MAX_MAGNITUDE, SCALE_LEVELS,
};
use crate::error::{Error, Result};
use crate::highrate::{
    check_predictor, laser_u16, quantize, to_cloud, tree_count, AzimuthCoding, DecodedTree, ElevationCoding, QpVector,
};
use crate::geometry::PointCloud;
use crate::predictor::DeltaPredictor;
use crate::predtree::TreeSet;

pub const MATRIX_SIDE: usize = 256;
pub const MATRIX_CELLS: usize = MATRIX_SIDE * MATRIX_SIDE;
/// Scale level modelling side information in rate estimates.
const SIDE_SCALE_INDEX: u8 = 20;
/// Grid shifts available to a row, in fractions of the step.
const GRID_SHIFTS: i64 = 8;
/// Largest row offset applied to local scale levels.
const MAX_OFFSET: i64 = 16;

/// Radii in row-major order; cells at or past `fill` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusMatrix {
    pub cells: Vec<f64>,
    pub fill: usize,
    /// `(tree index, point index)` of each filled cell.
    pub provenance: Vec<(u32, u32)>,
}

impl RadiusMatrix {
    pub fn filled(&self) -> &[f64] {
        &self.cells[..self.fill]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdConfig {
    pub lambda: f64,
    /// Radius quantization step in meters.
    pub step: f64,
}

impl RdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0 && self.step.is_finite() && self.step > 0.0) {
            return Err(Error::config(format!("lambda and step must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Concatenates tree radii laser by laser, in tree order, into matrices.
pub fn arrange_radius_matrices(trees: &TreeSet) -> Vec<RadiusMatrix> {
    let radii: Vec<Vec<f64>> = trees.trees.iter().map(|t| t.points.iter().map(|p| p.r).collect()).collect();
    arrange(&radii)
}

fn arrange(radii: &[Vec<f64>]) -> Vec<RadiusMatrix> {
    let flat: Vec<(f64, (u32, u32))> = radii
        .iter()
        .enumerate()
        .flat_map(|(t, rs)| rs.iter().enumerate().map(move |(k, &r)| (r, (t as u32, k as u32))))
        .collect();
    flat.chunks(MATRIX_CELLS)
        .map(|chunk| {
            let mut cells = vec![0.0; MATRIX_CELLS];
            for (c, (r, _)) in cells.iter_mut().zip(chunk) {
                *c = *r;
            }
            RadiusMatrix { cells, fill: chunk.len(), provenance: chunk.iter().map(|(_, p)| *p).collect() }
        })
        .collect()
}

/// Splits the filled cells back into per-tree sequences of the given lengths.
pub fn split_radius_matrices(matrices: &[RadiusMatrix], tree_lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut flat = matrices.iter().flat_map(|m| m.filled().iter().copied());
    let out: Vec<Vec<f64>> = tree_lengths.iter().map(|&n| flat.by_ref().take(n).collect()).collect();
    if out.iter().zip(tree_lengths).any(|(v, &n)| v.len() != n) || flat.next().is_some() {
        return Err(Error::corrupt("radius matrices do not match tree sizes"));
    }
    Ok(out)
}

/// Mean squared error over the filled cells of `a`.
pub fn matrix_distortion(a: &RadiusMatrix, b: &RadiusMatrix) -> f64 {
    if a.fill == 0 {
        return 0.0;
    }
    let sum: f64 = a.filled().iter().zip(&b.cells).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.fill as f64
}

pub fn rd_loss(rate_bits_per_point: f64, distortion: f64, lambda: f64) -> f64 {
    rate_bits_per_point + lambda * distortion
}

/// One entropy-coded integer together with the model it is coded under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodedSymbol {
    pub value: i64,
    pub params: LaplaceParams,
}

/// Model code length of `symbols` in bits per point.
pub fn rate_estimate(symbols: &[CodedSymbol], point_count: usize) -> f64 {
    if point_count == 0 {
        return 0.0;
    }
    symbols.iter().map(|s| laplace_bits(s.value as f64, s.params, 1.0)).sum::<f64>() / point_count as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowPredictor {
    Left,
    Above,
}

#[derive(Debug, Clone, Copy, Default)]
struct RowModel {
    mu: i64,
    /// Added to every local scale level of the row.
    offset: i64,
}

fn side_params() -> LaplaceParams {
    LaplaceParams { mu: 0.0, b: scale_from_index(SIDE_SCALE_INDEX) }
}

/// Level of reconstruction `r_bar` on the grid shifted by `shift`.
fn level_on(r_bar: f64, step: f64, shift: i64) -> i64 {
    ((r_bar - grid_origin(step, shift)) / step).round() as i64
}

fn grid_origin(step: f64, shift: i64) -> f64 {
    step * shift as f64 / GRID_SHIFTS as f64
}

fn prediction(recon: &[f64], i: usize, pred: RowPredictor, step: f64, shift: i64) -> i64 {
    match pred {
        RowPredictor::Left if i == 0 => 0,
        RowPredictor::Left => level_on(recon[i - 1], step, shift),
        RowPredictor::Above => level_on(recon[i - MATRIX_SIDE], step, shift),
    }
}

/// Scale level suggested by the coded magnitudes around cell `i`: two raster
/// predecessors and the three cells above.
fn local_scale(mag: impl Fn(usize) -> u64, i: usize) -> i64 {
    let col = i % MATRIX_SIDE;
    let mut neighbours = [None; 5];
    neighbours[0] = i.checked_sub(1);
    neighbours[1] = i.checked_sub(2);
    if i >= MATRIX_SIDE {
        neighbours[2] = Some(i - MATRIX_SIDE);
        neighbours[3] = (col > 0).then(|| i - MATRIX_SIDE - 1);
        neighbours[4] = (col + 1 < MATRIX_SIDE).then(|| i - MATRIX_SIDE + 1);
    }
    let (sum, n) = neighbours.iter().flatten().fold((0u64, 0u32), |(s, n), &j| (s + mag(j), n + 1));
    i64::from(nearest_scale_index((sum as f64 + 0.25) / (f64::from(n) + 0.5)))
}

fn cell_scale(local: i64, offset: i64) -> u8 {
    (local + offset).clamp(0, SCALE_LEVELS as i64 - 1) as u8
}

/// Largest magnitude coded by the Laplace table at level `idx`; larger
/// residuals take the escape path.
fn core_width(idx: u8) -> i64 {
    ((6.0 * scale_from_index(idx)).ceil() as i64).max(1)
}

/// Model cost of `v` at scale level `idx`, tabulated for small magnitudes.
/// Escaped values are charged as the first magnitude past the core.
fn cell_bits(v: i64, idx: u8) -> f64 {
    const TABLED: usize = 64;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let params = |idx: u8| LaplaceParams { mu: 0.0, b: scale_from_index(idx) };
    let m = v.unsigned_abs().min(core_width(idx) as u64 + 1) as usize;
    if m >= TABLED {
        return laplace_bits(m as f64, params(idx), 1.0);
    }
    let table = TABLE.get_or_init(|| {
        (0..SCALE_LEVELS)
            .flat_map(|k| (0..TABLED).map(move |m| laplace_bits(m as f64, params(k as u8), 1.0)))
            .collect()
    });
    table[usize::from(idx) * TABLED + m]
}

const ESCAPE_CONTEXTS: usize = 16;

/// Adaptive models for residuals outside the Laplace core.
#[derive(Default)]
struct EscapeContexts {
    flag: [BinaryContext; ESCAPE_CONTEXTS],
    value: IntContexts,
}

impl EscapeContexts {
    fn flag(&mut self, local: i64) -> &mut BinaryContext {
        &mut self.flag[(local.max(0) as usize / 2).min(ESCAPE_CONTEXTS - 1)]
    }

    fn encode(&mut self, enc: &mut RangeEncoder, d: i64, local: i64, idx: u8) -> Result<()> {
        let core = core_width(idx);
        let escaped = d.abs() > core;
        enc.encode_bit(self.flag(local), escaped);
        if escaped {
            encode_int(enc, &mut self.value, d - d.signum() * core)
        } else {
            encode_laplace(enc, d, idx)
        }
    }

    fn decode(&mut self, dec: &mut RangeDecoder<'_>, local: i64, idx: u8) -> Result<i64> {
        let core = core_width(idx);
        if !dec.decode_bit(self.flag(local))? {
            let d = decode_laplace(dec, idx)?;
            if d.abs() > core {
                return Err(Error::corrupt("radius residual outside the Laplace core"));
            }
            return Ok(d);
        }
        let e = decode_int(dec, &mut self.value)?;
        if e == 0 {
            return Err(Error::corrupt("empty escaped radius residual"));
        }
        Ok(e + e.signum() * core)
    }
}

/// Candidate coding of one row: model, local levels and cost in bits.
struct RowFit {
    model: RowModel,
    local: Vec<i64>,
    bits: f64,
}

/// Median location, then the offset with the lowest model cost given the
/// local levels implied by `mags` and the row itself.
fn fit_row(res: &[i64], mags: &[u64], start: usize) -> RowFit {
    let values: Vec<f64> = res.iter().map(|&v| v as f64).collect();
    let mu = fit_laplace(&values).mu.round() as i64;
    let row: Vec<u64> = res.iter().map(|&e| (e - mu).unsigned_abs()).collect();
    let mag = |j: usize| if j < start { mags[j] } else { row[j - start] };
    let local: Vec<i64> = (start..start + res.len()).map(|i| local_scale(mag, i)).collect();
    let mut best = RowFit { model: RowModel { mu, offset: 0 }, local: Vec::new(), bits: f64::INFINITY };
    for offset in -MAX_OFFSET..=MAX_OFFSET {
        let bits: f64 = res.iter().zip(&local).map(|(&e, &l)| cell_bits(e - mu, cell_scale(l, offset))).sum();
        if bits < best.bits {
            best.model.offset = offset;
            best.bits = bits;
        }
    }
    best.local = local;
    best
}

/// Adaptive contexts for per-row side information.
#[derive(Default)]
struct SideContexts {
    predictor: BinaryContext,
    shift: IntContexts,
    mu: IntContexts,
    offset: IntContexts,
}

struct MatrixCoding {
    payload: Vec<u8>,
    recon: Vec<f64>,
    symbols: Vec<CodedSymbol>,
}

/// Cheapest (predictor, grid shift) for the row `start..end`.
fn choose_row(values: &[f64], recon: &[f64], mags: &[u64], start: usize, end: usize, step: f64) -> Result<RowChoice> {
    let mut best: Option<RowChoice> = None;
    let preds: &[RowPredictor] =
        if start >= MATRIX_SIDE { &[RowPredictor::Left, RowPredictor::Above] } else { &[RowPredictor::Left] };
    for shift in 0..GRID_SHIFTS {
        let levels: Vec<i64> = values[start..end]
            .iter()
            .map(|&r| quantize((r - grid_origin(step, shift)) / step))
            .collect::<Result<_>>()?;
        for &pred in preds {
            // Within the row, predictions come from the row's own levels.
            let res: Vec<i64> = (start..end)
                .map(|i| {
                    let p = match pred {
                        RowPredictor::Left if i > start => levels[i - start - 1],
                        _ => prediction(recon, i, pred, step, shift),
                    };
                    levels[i - start] - p
                })
                .collect();
            let fit = fit_row(&res, mags, start);
            if best.as_ref().is_none_or(|b| fit.bits < b.fit.bits) {
                best = Some(RowChoice { pred, shift, levels: levels.clone(), res, fit });
            }
        }
    }
    Ok(best.expect("at least one candidate"))
}

struct RowChoice {
    pred: RowPredictor,
    shift: i64,
    levels: Vec<i64>,
    res: Vec<i64>,
    fit: RowFit,
}

fn encode_matrix(values: &[f64], step: f64) -> Result<MatrixCoding> {
    let mut enc = RangeEncoder::new();
    let mut side = SideContexts::default();
    let mut escapes = EscapeContexts::default();
    let mut symbols = Vec::with_capacity(values.len() + 4 * values.len() / MATRIX_SIDE + 4);
    let mut mags: Vec<u64> = Vec::with_capacity(values.len());
    let mut recon: Vec<f64> = Vec::with_capacity(values.len());
    let (mut prev, mut prev_shift) = (RowModel::default(), 0);
    for start in (0..values.len()).step_by(MATRIX_SIDE) {
        let end = (start + MATRIX_SIDE).min(values.len());
        let c = choose_row(values, &recon, &mags, start, end, step)?;
        if start >= MATRIX_SIDE {
            enc.encode_bit(&mut side.predictor, c.pred == RowPredictor::Above);
        }
        let m = c.fit.model;
        let deltas = [c.shift - prev_shift, m.mu - prev.mu, m.offset - prev.offset];
        encode_int(&mut enc, &mut side.shift, deltas[0])?;
        encode_int(&mut enc, &mut side.mu, deltas[1])?;
        encode_int(&mut enc, &mut side.offset, deltas[2])?;
        symbols.extend(deltas.map(|value| CodedSymbol { value, params: side_params() }));
        for (&e, &l) in c.res.iter().zip(&c.fit.local) {
            let idx = cell_scale(l, m.offset);
            escapes.encode(&mut enc, e - m.mu, l, idx)?;
            symbols.push(CodedSymbol { value: e, params: LaplaceParams { mu: m.mu as f64, b: scale_from_index(idx) } });
            mags.push((e - m.mu).unsigned_abs());
        }
        let origin = grid_origin(step, c.shift);
        recon.extend(c.levels.iter().map(|&k| origin + k as f64 * step));
        (prev, prev_shift) = (m, c.shift);
    }
    Ok(MatrixCoding { payload: enc.finish().bytes, recon, symbols })
}

fn decode_matrix(payload: &[u8], fill: usize, step: f64) -> Result<Vec<f64>> {
    let mut dec = RangeDecoder::new(payload)?;
    let mut side = SideContexts::default();
    let mut escapes = EscapeContexts::default();
    let mut mags: Vec<u64> = Vec::with_capacity(fill);
    let mut recon: Vec<f64> = Vec::with_capacity(fill);
    let (mut prev, mut prev_shift) = (RowModel::default(), 0);
    for start in (0..fill).step_by(MATRIX_SIDE) {
        let end = (start + MATRIX_SIDE).min(fill);
        let above = start >= MATRIX_SIDE && dec.decode_bit(&mut side.predictor)?;
        let pred = if above { RowPredictor::Above } else { RowPredictor::Left };
        let shift = prev_shift + decode_int(&mut dec, &mut side.shift)?;
        if !(0..GRID_SHIFTS).contains(&shift) {
            return Err(Error::corrupt("row grid shift out of range"));
        }
        let mu = prev.mu + decode_int(&mut dec, &mut side.mu)?;
        let offset = prev.offset + decode_int(&mut dec, &mut side.offset)?;
        if offset.abs() > MAX_OFFSET {
            return Err(Error::corrupt("row scale offset out of range"));
        }
        let origin = grid_origin(step, shift);
        let mut last = 0i64;
        for i in start..end {
            let p = match pred {
                RowPredictor::Left if i > start => last,
                _ => prediction(&recon, i, pred, step, shift),
            };
            let local = local_scale(|j| mags[j], i);
            let d = escapes.decode(&mut dec, local, cell_scale(local, offset))?;
            mags.push(d.unsigned_abs());
            let k = d
                .checked_add(mu)
                .and_then(|e| p.checked_add(e))
                .filter(|k| k.abs() < MAX_MAGNITUDE as i64)
                .ok_or_else(|| Error::corrupt("radius level overflow"))?;
            recon.push(origin + k as f64 * step);
            last = k;
        }
        (prev, prev_shift) = (RowModel { mu, offset }, shift);
    }
    dec.finish()?;
    Ok(recon)
}

/// Coded matrices, their reconstructions and the model rate in bits.
#[derive(Debug, Clone)]
pub struct LowRateRadius {
    pub records: Vec<MatrixRecord>,
    pub reconstructed: Vec<RadiusMatrix>,
    pub symbols: Vec<CodedSymbol>,
}

pub fn encode_radius_lowrate(matrices: &[RadiusMatrix], cfg: &RdConfig) -> Result<LowRateRadius> {
    cfg.validate()?;
    let coded: Vec<MatrixCoding> =
        matrices.par_iter().map(|m| encode_matrix(m.filled(), cfg.step)).collect::<Result<_>>()?;
    let mut out = LowRateRadius { records: Vec::new(), reconstructed: Vec::new(), symbols: Vec::new() };
    for (m, c) in matrices.iter().zip(coded) {
        let mut cells = vec![0.0; MATRIX_CELLS];
        cells[..m.fill].copy_from_slice(&c.recon);
        out.records.push(MatrixRecord { fill: m.fill as u32, payload: c.payload });
        out.reconstructed.push(RadiusMatrix { cells, fill: m.fill, provenance: m.provenance.clone() });
        out.symbols.extend(c.symbols);
    }
    Ok(out)
}

pub fn decode_radius_lowrate(section: &MatrixSection) -> Result<Vec<RadiusMatrix>> {
    section
        .matrices
        .par_iter()
        .map(|rec| {
            let fill = rec.fill as usize;
            if fill > MATRIX_CELLS {
                return Err(Error::corrupt(format!("matrix fill {fill} exceeds capacity")));
            }
            let mut cells = vec![0.0; MATRIX_CELLS];
            cells[..fill].copy_from_slice(&decode_matrix(&rec.payload, fill, section.step)?);
            Ok(RadiusMatrix { cells, fill, provenance: Vec::new() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowRateConfig {
    /// `q_r` must be 0.
    pub qp: QpVector,
    pub phi_ar: f64,
    pub skip_bias: bool,
    pub rd: RdConfig,
}

/// Encodes and also returns the encoder-side reconstruction of every tree.
pub fn encode_cloud_low_with_reconstruction(trees: &TreeSet, cfg: &LowRateConfig) -> Result<(Bitstream, Vec<DecodedTree>)> {
    cfg.qp.validate(Mode::Low)?;
    cfg.rd.validate()?;
    let az = AzimuthCoding::new(cfg.qp, cfg.phi_ar, cfg.skip_bias)?;
    if let Some(p) = trees.trees.iter().flat_map(|t| &t.points).find(|p| !(p.r.is_finite() && p.theta.is_finite() && p.phi.is_finite())) {
        return Err(Error::invalid(format!("non-finite point {p:?}")));
    }
    let kept: Vec<_> = trees.trees.iter().filter(|t| !t.is_empty()).collect();
    let radii: Vec<Vec<f64>> = kept.iter().map(|t| t.points.iter().map(|p| p.r).collect()).collect();
    let radius = encode_radius_lowrate(&arrange(&radii), &cfg.rd)?;
    let lengths: Vec<usize> = kept.iter().map(|t| t.len()).collect();
    let r_bars = split_radius_matrices(&radius.reconstructed, &lengths)?;
    let laser_count = trees.laser_count();
    let q_theta = f64::from(cfg.qp.q_theta);

    let coded: Vec<(TreeRecord, DecodedTree)> = kept
        .par_iter()
        .zip(r_bars.par_iter())
        .map(|(tree, r_bar)| {
            let phis: Vec<f64> = tree.points.iter().map(|p| p.phi).collect();
            let thetas: Vec<f64> = tree.points.iter().map(|p| p.theta).collect();
            let (slopes, biases, phi_bar) = az.encode(&phis)?;
            let el = ElevationCoding { predictor: &DeltaPredictor, q_theta, laser_id: tree.laser_id, laser_count };
            let (elevations, points) = el.encode(&thetas, r_bar, &phi_bar)?;
            let record = TreeRecord {
                laser_id: laser_u16(tree)?,
                count: tree_count(tree)?,
                root: [r_bar[0], thetas[0], phis[0]],
                slopes,
                biases,
                radii: Vec::new(),
                elevations,
            };
            Ok((record, DecodedTree { laser_id: tree.laser_id, points }))
        })
        .collect::<Result<_>>()?;
    let (records, decoded): (Vec<_>, Vec<_>) = coded.into_iter().unzip();
    let bs = Bitstream {
        mode: Mode::Low,
        qp: cfg.qp,
        skip_bias: cfg.skip_bias,
        radius_step: cfg.rd.step,
        phi_ar: cfg.phi_ar,
        calibration: trees.calibration.clone(),
        weight_checksum: 0,
        trees: records,
        matrices: Some(MatrixSection { step: cfg.rd.step, matrices: radius.records }),
    };
    Ok((bs, decoded))
}

pub fn encode_cloud_low(trees: &TreeSet, cfg: &LowRateConfig) -> Result<Bitstream> {
    Ok(encode_cloud_low_with_reconstruction(trees, cfg)?.0)
}

pub fn decode_spherical_low(bs: &Bitstream) -> Result<Vec<DecodedTree>> {
    if bs.mode != Mode::Low {
        return Err(Error::format("high-mode bitstream passed to the low-rate decoder"));
    }
    check_predictor(bs, &DeltaPredictor)?;
    let section = bs.matrices.as_ref().ok_or_else(|| Error::corrupt("low-mode bitstream lacks radius matrices"))?;
    if section.step != bs.radius_step {
        return Err(Error::corrupt("matrix step differs from header step"));
    }
    let matrices = decode_radius_lowrate(section)?;
    let lengths: Vec<usize> = bs.trees.iter().map(|t| t.count as usize).collect();
    let r_bars = split_radius_matrices(&matrices, &lengths)?;
    let az = AzimuthCoding::new(bs.qp, bs.phi_ar, bs.skip_bias)?;
    let laser_count = bs.laser_count();
    let q_theta = f64::from(bs.qp.q_theta);
    bs.trees
        .par_iter()
        .zip(r_bars.par_iter())
        .map(|(rec, r_bar)| {
            let [_, theta0, phi0] = rec.root;
            let phi_bar = az.decode(&rec.slopes, &rec.biases, phi0, rec.count as usize)?;
            let laser_id = u32::from(rec.laser_id);
            let el = ElevationCoding { predictor: &DeltaPredictor, q_theta, laser_id, laser_count };
            let points = el.decode(&rec.elevations, theta0, r_bar, &phi_bar)?;
            Ok(DecodedTree { laser_id, points })
        })
        .collect()
}

pub fn decode_cloud_low(bs: &Bitstream) -> Result<PointCloud> {
    to_cloud(bs, &decode_spherical_low(bs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CartesianPoint;
    use crate::highrate::{encode_cloud_high, HighRateConfig};
    use crate::predtree::build_trees_threshold;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(values: Vec<f64>) -> RadiusMatrix {
        arrange(&[values]).remove(0)
    }

    #[test]
    fn arrangement_sizes() {
        let m = arrange(&[vec![1.0; 65_536]]);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].fill, 65_536);
        let m = arrange(&[vec![1.0; 30_000], vec![2.0; 40_000]]);
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].fill, 70_000 - 65_536);
        assert_eq!(m[1].cells[m[1].fill], 0.0);
        assert_eq!(m[0].provenance[30_000], (1, 0));
    }

    #[test]
    fn arrangement_inverts_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trees: Vec<Vec<f64>> =
            (0..7).map(|_| (0..rng.random_range(1..30_000)).map(|_| rng.random_range(0.0..100.0)).collect()).collect();
        let m = arrange(&trees);
        let lengths: Vec<usize> = trees.iter().map(Vec::len).collect();
        assert_eq!(split_radius_matrices(&m, &lengths).unwrap(), trees);
        for mat in &m {
            for (k, &(t, i)) in mat.provenance.iter().enumerate() {
                assert_eq!(mat.cells[k], trees[t as usize][i as usize]);
            }
        }
        assert!(split_radius_matrices(&m, &lengths[1..]).is_err());
    }

    #[test]
    fn distortion_and_loss() {
        let a = matrix(vec![3.0; 65_536]);
        assert_eq!(matrix_distortion(&a, &a), 0.0);
        let mut b = a.clone();
        b.cells[17] += 0.5;
        assert_eq!(matrix_distortion(&a, &b), 0.25 / 65_536.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = matrix((0..5000).map(|_| rng.random_range(0.0..50.0)).collect());
        let mut y = x.clone();
        y.cells.iter_mut().for_each(|c| *c += rng.random_range(-1.0..1.0));
        let mut naive = 0.0;
        for i in 0..x.fill {
            let d = x.cells[i] - y.cells[i];
            naive += d * d;
        }
        assert!((matrix_distortion(&x, &y) - naive / x.fill as f64).abs() < 1e-12);

        assert_eq!(rd_loss(1.0, 0.0, 0.6), 1.0);
        assert!((rd_loss(2.0, 0.1, 2.2) - 2.22).abs() < 1e-12);
    }

    #[test]
    fn quantization_bound_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = matrix((0..70_000).map(|_| rng.random_range(1.0..90.0)).collect());
        let cfg = RdConfig { lambda: 0.6, step: 0.5 };
        let coded = encode_radius_lowrate(std::slice::from_ref(&m), &cfg).unwrap();
        for (a, b) in m.filled().iter().zip(&coded.reconstructed[0].cells) {
            assert!((a - b).abs() <= 0.25 + 1e-12);
        }
        let section = MatrixSection { step: 0.5, matrices: coded.records };
        let back = decode_radius_lowrate(&section).unwrap();
        assert_eq!(back[0].cells, coded.reconstructed[0].cells);
    }

    #[test]
    fn constant_and_smooth_matrices_are_cheap() {
        let cfg = RdConfig { lambda: 0.6, step: 0.1 };
        let constant = encode_radius_lowrate(&[matrix(vec![20.0; 65_536])], &cfg).unwrap();
        assert!(constant.records[0].payload.len() < 200, "{}", constant.records[0].payload.len());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let smooth: Vec<f64> = (0..65_536).map(|i| 30.0 + 10.0 * (i as f64 / 500.0).sin()).collect();
        let noise: Vec<f64> = (0..65_536).map(|_| rng.random_range(20.0..40.0)).collect();
        let s = encode_radius_lowrate(&[matrix(smooth)], &cfg).unwrap();
        let n = encode_radius_lowrate(&[matrix(noise)], &cfg).unwrap();
        assert!(s.records[0].payload.len() < n.records[0].payload.len());
    }

    #[test]
    fn rate_estimate_tracks_coded_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exp = rand_distr::Exp::new(1.0 / 3.0).unwrap();
        let mut level = 400.0f64;
        let values: Vec<f64> = (0..65_536)
            .map(|_| {
                let step: f64 = rng.sample(exp) - rng.sample(exp);
                level += step.round();
                level * 0.1
            })
            .collect();
        let coded = encode_radius_lowrate(&[matrix(values)], &RdConfig { lambda: 0.6, step: 0.1 }).unwrap();
        let estimate = rate_estimate(&coded.symbols, 65_536) * 65_536.0;
        let actual = 8.0 * coded.records[0].payload.len() as f64;
        assert!((actual / estimate - 1.0).abs() < 0.05, "{actual} vs {estimate}");

        let wide = |b: f64| rate_estimate(&[CodedSymbol { value: 9, params: LaplaceParams { mu: 0.0, b } }], 1);
        assert!(wide(1.0) > wide(2.0));
        assert!(rate_estimate(&[CodedSymbol { value: 0, params: LaplaceParams { mu: 0.0, b: 1e-3 } }], 1) < 1e-6);
    }

    #[test]
    fn smaller_step_lowers_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = matrix((0..20_000).map(|i| 10.0 + (i as f64 * 0.01).sin() * 5.0 + rng.random_range(-0.2..0.2)).collect());
        let mut last = (f64::INFINITY, 0usize);
        for step in [1.0, 0.5, 0.2, 0.1, 0.05] {
            let coded = encode_radius_lowrate(std::slice::from_ref(&m), &RdConfig { lambda: 2.2, step }).unwrap();
            let d = matrix_distortion(&m, &coded.reconstructed[0]);
            let r = coded.records[0].payload.len();
            assert!(d < last.0);
            assert!(r >= last.1);
            last = (d, r);
        }
    }

    fn ring_scan(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for l in 0..16 {
            let elev = (-15.0 + 2.0 * l as f64).to_radians();
            for k in 0..900 {
                let phi = (-179.8 + 0.4 * k as f64).to_radians();
                let r = 8.0 + 0.02 * k as f64 + rng.random_range(-0.05..0.05);
                pts.push(CartesianPoint::new(r * phi.cos(), r * phi.sin(), r * elev.tan()));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn cloud_round_trip_bounds() {
        let cloud = ring_scan(7);
        let trees = build_trees_threshold(&cloud, 180.0).unwrap();
        let cfg = LowRateConfig {
            qp: QpVector::new(1, 1, 2, 0),
            phi_ar: 0.4,
            skip_bias: true,
            rd: RdConfig { lambda: 0.6, step: 0.5 },
        };
        let (bs, enc_side) = encode_cloud_low_with_reconstruction(&trees, &cfg).unwrap();
        let bs = Bitstream::from_bytes(&bs.to_bytes()).unwrap();
        let dec_side = decode_spherical_low(&bs).unwrap();
        assert_eq!(enc_side, dec_side);
        for (t, d) in trees.trees.iter().zip(&dec_side) {
            for (p, q) in t.points.iter().zip(&d.points) {
                assert!((p.r - q.r).abs() <= 0.25 + 1e-9);
                assert!((p.theta - q.theta).abs() <= 0.25 + 1e-9);
                assert!((p.phi - q.phi).abs() <= 0.2 + 1e-9);
            }
        }
        assert!(matches!(crate::highrate::decode_cloud_high(&bs, &DeltaPredictor), Err(Error::Format(_))));
        let high = encode_cloud_high(&trees, &HighRateConfig::new(QpVector::new(1, 1, 2, 2), 0.4), &DeltaPredictor).unwrap();
        assert!(matches!(decode_spherical_low(&high), Err(Error::Format(_))));
    }

    #[test]
    fn fine_three_point_cloud() {
        let cloud = PointCloud::new(vec![
            CartesianPoint::new(3.0, 1.0, -0.5),
            CartesianPoint::new(-4.0, 3.0, 0.2),
            CartesianPoint::new(5.0, -7.0, 1.0),
        ]);
        let trees = build_trees_threshold(&cloud, 180.0).unwrap();
        let cfg = LowRateConfig {
            qp: QpVector::new(256, 16, 256, 0),
            phi_ar: 0.1,
            skip_bias: false,
            rd: RdConfig { lambda: 2.2, step: 0.01 },
        };
        let bs = encode_cloud_low(&trees, &cfg).unwrap();
        let out = decode_cloud_low(&Bitstream::from_bytes(&bs.to_bytes()).unwrap()).unwrap();
        let original = crate::predtree::flatten(&trees).unwrap();
        for (a, b) in original.iter().zip(out.iter()) {
            assert!(a.distance(b) < 0.01);
        }
    }

    #[test]
    fn empty_cloud() {
        let trees = build_trees_threshold(&PointCloud::default(), 180.0).unwrap();
        let cfg = LowRateConfig {
            qp: QpVector::new(1, 1, 1, 0),
            phi_ar: 0.2,
            skip_bias: true,
            rd: RdConfig { lambda: 0.6, step: 0.5 },
        };
        let bs = encode_cloud_low(&trees, &cfg).unwrap();
        assert!(decode_cloud_low(&Bitstream::from_bytes(&bs.to_bytes()).unwrap()).unwrap().is_empty());
    }
}
