//! Signed integers as order-0 exponential-Golomb bins: the first
//! `CONTEXT_BINS` prefix bins are context coded, everything else bypassed.

use super::range::{BinaryContext, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};

pub const CONTEXT_BINS: usize = 16;
/// Exclusive bound on coded magnitudes.
pub const MAX_MAGNITUDE: u64 = 1 << 31;

#[derive(Debug, Clone, Default)]
pub struct IntContexts {
    prefix: [BinaryContext; CONTEXT_BINS],
    sign: BinaryContext,
}

impl IntContexts {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn encode_int(enc: &mut RangeEncoder, ctx: &mut IntContexts, value: i64) -> Result<()> {
    let magnitude = value.unsigned_abs();
    if magnitude >= MAX_MAGNITUDE {
        return Err(Error::invalid(format!("integer {value} too large to code")));
    }
    let v = magnitude + 1;
    let nbits = 63 - v.leading_zeros();
    for k in 0..=nbits as usize {
        let stop = k == nbits as usize;
        match ctx.prefix.get_mut(k) {
            Some(c) => enc.encode_bit(c, stop),
            None => enc.encode_bypass(stop),
        }
    }
    enc.encode_bypass_bits(v, nbits);
    if magnitude != 0 {
        enc.encode_bit(&mut ctx.sign, value < 0);
    }
    Ok(())
}

pub fn decode_int(dec: &mut RangeDecoder<'_>, ctx: &mut IntContexts) -> Result<i64> {
    let mut nbits = 0u32;
    loop {
        let stop = match ctx.prefix.get_mut(nbits as usize) {
            Some(c) => dec.decode_bit(c)?,
            None => dec.decode_bypass()?,
        };
        if stop {
            break;
        }
        nbits += 1;
        if nbits > 31 {
            return Err(Error::corrupt("exp-Golomb prefix too long"));
        }
    }
    let v = (1u64 << nbits) | dec.decode_bypass_bits(nbits)?;
    let magnitude = (v - 1) as i64;
    if magnitude != 0 && dec.decode_bit(&mut ctx.sign)? {
        Ok(-magnitude)
    } else {
        Ok(magnitude)
    }
}

/// Unsigned exp-Golomb with all bins bypassed, used for escapes.
pub(crate) fn encode_bypass_golomb(enc: &mut RangeEncoder, magnitude: u64) {
    let v = magnitude + 1;
    let nbits = 63 - v.leading_zeros();
    for _ in 0..nbits {
        enc.encode_bypass(false);
    }
    enc.encode_bypass(true);
    enc.encode_bypass_bits(v, nbits);
}

pub(crate) fn decode_bypass_golomb(dec: &mut RangeDecoder<'_>) -> Result<u64> {
    let mut nbits = 0u32;
    while !dec.decode_bypass()? {
        nbits += 1;
        if nbits > 62 {
            return Err(Error::corrupt("escape code too long"));
        }
    }
    Ok(((1u64 << nbits) | dec.decode_bypass_bits(nbits)?) - 1)
}
