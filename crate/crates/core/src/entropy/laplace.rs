//! Discretized Laplace rate model and a static frequency-table coder built
//! from it.

use std::f64::consts::LN_2;
use std::sync::OnceLock;

use super::integer::{decode_bypass_golomb, encode_bypass_golomb};
use super::range::{RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};

pub const MIN_BITS: f64 = 1e-9;
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParams {
    pub mu: f64,
    pub b: f64,
}

/// Code length in bits of the quantization cell `[value - step/2, value + step/2]`
/// under `Laplace(mu, b)`, floored at `MIN_BITS`.
pub fn laplace_bits(value: f64, params: LaplaceParams, step: f64) -> f64 {
    let b = params.b.max(MIN_SCALE);
    let lo = (value - step / 2.0 - params.mu) / b;
    let hi = (value + step / 2.0 - params.mu) / b;
    let log2_mass = if lo >= 0.0 {
        -1.0 - lo / LN_2 + (-(lo - hi).exp_m1()).log2()
    } else if hi <= 0.0 {
        -1.0 + hi / LN_2 + (-(lo - hi).exp_m1()).log2()
    } else {
        (1.0 - 0.5 * (lo.exp() + (-hi).exp())).log2()
    };
    (-log2_mass).max(MIN_BITS)
}

/// Maximum-likelihood Laplace fit: median location and mean absolute
/// deviation from it, floored at `MIN_SCALE`.
pub fn fit_laplace(values: &[f64]) -> LaplaceParams {
    if values.is_empty() {
        return LaplaceParams { mu: 0.0, b: MIN_SCALE };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mu = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let mad = sorted.iter().map(|v| (v - mu).abs()).sum::<f64>() / n as f64;
    LaplaceParams { mu, b: mad.max(MIN_SCALE) }
}

pub const SCALE_LEVELS: usize = 64;
const SCALE_BASE: f64 = 0.0625;
const TOTAL_BITS: u32 = 16;
const TOTAL: u32 = 1 << TOTAL_BITS;
const MAX_HALF_WIDTH: i64 = 4096;

/// Scale of quantized level `index`: `0.0625 * 2^(index/4)`.
pub fn scale_from_index(index: u8) -> f64 {
    SCALE_BASE * (f64::from(index) / 4.0).exp2()
}

/// Nearest scale level to `b` on the log grid.
pub fn nearest_scale_index(b: f64) -> u8 {
    let idx = (4.0 * (b.max(MIN_SCALE) / SCALE_BASE).log2()).round();
    idx.clamp(0.0, (SCALE_LEVELS - 1) as f64) as u8
}

/// Cumulative frequencies over symbols `-L..=L` plus an escape symbol.
#[derive(Debug)]
struct FreqTable {
    half_width: i64,
    cum: Vec<u32>,
}

impl FreqTable {
    fn build(b: f64) -> Self {
        let half_width = ((b * 12.0).ceil() as i64).clamp(2, MAX_HALF_WIDTH);
        let n = (2 * half_width + 2) as usize;
        let avail = f64::from(TOTAL) - n as f64;
        let params = LaplaceParams { mu: 0.0, b };
        let mut freq: Vec<u32> = (-half_width..=half_width)
            .map(|k| 1 + (avail * (-laplace_bits(k as f64, params, 1.0)).exp2()).floor() as u32)
            .collect();
        let tail = (-(half_width as f64 + 0.5) / b).exp();
        freq.push(1 + (avail * tail).floor() as u32);
        let sum: u32 = freq.iter().sum();
        freq[half_width as usize] += TOTAL - sum;
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0);
        let mut acc = 0;
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        Self { half_width, cum }
    }

    fn escape(&self) -> usize {
        (2 * self.half_width + 1) as usize
    }
}

fn table(index: u8) -> &'static FreqTable {
    static TABLES: [OnceLock<FreqTable>; SCALE_LEVELS] = [const { OnceLock::new() }; SCALE_LEVELS];
    TABLES[index as usize].get_or_init(|| FreqTable::build(scale_from_index(index)))
}

/// Codes `value` with a zero-centred discretized Laplace of scale level
/// `scale_index`; values outside the table escape to bypass exp-Golomb.
pub fn encode_laplace(enc: &mut RangeEncoder, value: i64, scale_index: u8) -> Result<()> {
    if scale_index as usize >= SCALE_LEVELS {
        return Err(Error::invalid(format!("scale index {scale_index} out of range")));
    }
    let t = table(scale_index);
    let sym = if value.abs() <= t.half_width { (value + t.half_width) as usize } else { t.escape() };
    enc.encode_freq(t.cum[sym], t.cum[sym + 1] - t.cum[sym], TOTAL_BITS);
    if sym == t.escape() {
        encode_bypass_golomb(enc, value.unsigned_abs() - t.half_width as u64 - 1);
        enc.encode_bypass(value < 0);
    }
    Ok(())
}

pub fn decode_laplace(dec: &mut RangeDecoder<'_>, scale_index: u8) -> Result<i64> {
    if scale_index as usize >= SCALE_LEVELS {
        return Err(Error::corrupt(format!("scale index {scale_index} out of range")));
    }
    let t = table(scale_index);
    let target = dec.peek_freq(TOTAL_BITS)?;
    let sym = t.cum.partition_point(|&c| c <= target) - 1;
    dec.consume_freq(t.cum[sym], t.cum[sym + 1] - t.cum[sym], TOTAL_BITS)?;
    if sym != t.escape() {
        return Ok(sym as i64 - t.half_width);
    }
    let extra = decode_bypass_golomb(dec)?;
    let magnitude = i64::try_from(extra)
        .ok()
        .and_then(|e| e.checked_add(t.half_width + 1))
        .ok_or_else(|| Error::corrupt("escaped value overflows"))?;
    Ok(if dec.decode_bypass()? { -magnitude } else { magnitude })
}
