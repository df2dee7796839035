//! Binary range coder with carry propagation (32-bit range, renormalized
//! below 2^24) and adaptive probability contexts.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const PROB_BITS: u32 = 16;
const STATE_BITS: u32 = 24;
const STATE_ONE: i64 = 1 << STATE_BITS;
const STATE_MIN: i64 = STATE_ONE / 512;
const STATE_MAX: i64 = STATE_ONE - STATE_MIN;
/// Adaptation windows of the fast and slow estimates. Once a context has seen
/// this many bits, each estimate is an exponential average with rate 1/window.
const FAST_WINDOW: i64 = 16;
const SLOW_WINDOW: i64 = 2048;
/// Decay shift of the running squared-error scores.
const SCORE_SHIFT: u32 = 10;

/// Adaptive estimate of the probability that the next bit is 1.
///
/// Keeps a fast and a slow running mean, each with a prior weight of one
/// half-count, and codes with whichever has the lower recent squared error.
/// Drifting sources follow the fast estimate; stationary ones settle on the
/// slow one and code close to their entropy. Integer arithmetic only, so
/// encoder and decoder agree on every platform. The probability stays inside
/// `[1/512, 511/512]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryContext {
    fast: i64,
    slow: i64,
    fast_score: i64,
    slow_score: i64,
    count: i64,
}

impl Default for BinaryContext {
    fn default() -> Self {
        Self::new()
    }
}

impl BinaryContext {
    pub const fn new() -> Self {
        Self { fast: STATE_ONE / 2, slow: STATE_ONE / 2, fast_score: 0, slow_score: 0, count: 0 }
    }

    fn state(&self) -> i64 {
        if self.slow_score < self.fast_score {
            self.slow
        } else {
            self.fast
        }
    }

    pub fn p1(&self) -> f64 {
        self.state() as f64 / STATE_ONE as f64
    }

    fn p1_fixed(&self) -> u32 {
        (self.state() >> (STATE_BITS - PROB_BITS)) as u32
    }

    fn update(&mut self, bit: bool) {
        let target = if bit { STATE_ONE } else { 0 };
        let score = |score: i64, state: i64| {
            let e = (target - state) >> 8;
            score + e * e - (score >> SCORE_SHIFT)
        };
        self.fast_score = score(self.fast_score, self.fast);
        self.slow_score = score(self.slow_score, self.slow);
        let count = self.count;
        let step = |state: i64, window: i64| (state + (target - state) / (count + 2).min(window)).clamp(STATE_MIN, STATE_MAX);
        self.fast = step(self.fast, FAST_WINDOW);
        self.slow = step(self.slow, SLOW_WINDOW);
        if self.count + 2 < SLOW_WINDOW {
            self.count += 1;
        }
    }
}

/// An encoded stream. Empty when no symbol was coded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodedBuffer {
    pub bytes: Vec<u8>,
}

impl CodedBuffer {
    pub fn bit_len(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    symbols: u64,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new(), symbols: 0 }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut pending = self.cache;
            loop {
                self.out.push(pending.wrapping_add(carry));
                pending = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_bit(&mut self, ctx: &mut BinaryContext, bit: bool) {
        let bound = (self.range >> PROB_BITS) * ctx.p1_fixed();
        if bit {
            self.range = bound;
        } else {
            self.low += u64::from(bound);
            self.range -= bound;
        }
        ctx.update(bit);
        self.symbols += 1;
        self.normalize();
    }

    /// Codes a bit at fixed probability one half.
    pub fn encode_bypass(&mut self, bit: bool) {
        self.range >>= 1;
        if bit {
            self.low += u64::from(self.range);
        }
        self.symbols += 1;
        self.normalize();
    }

    /// Codes the low `nbits` of `value`, most significant first.
    pub fn encode_bypass_bits(&mut self, value: u64, nbits: u32) {
        for i in (0..nbits).rev() {
            self.encode_bypass((value >> i) & 1 == 1);
        }
    }

    /// Codes a symbol occupying `[cum, cum + freq)` of a total of `2^total_bits`.
    pub fn encode_freq(&mut self, cum: u32, freq: u32, total_bits: u32) {
        debug_assert!(total_bits <= 16 && freq > 0 && cum + freq <= 1 << total_bits);
        let r = self.range >> total_bits;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        self.symbols += 1;
        self.normalize();
    }

    pub fn finish(mut self) -> CodedBuffer {
        if self.symbols == 0 {
            return CodedBuffer::default();
        }
        for _ in 0..5 {
            self.shift_low();
        }
        CodedBuffer { bytes: self.out }
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    /// Starts decoding `data`. An empty buffer is accepted and fails on the
    /// first decode call.
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut dec = Self { data, pos: 0, range: u32::MAX, code: 0 };
        if !data.is_empty() {
            for _ in 0..5 {
                dec.code = (dec.code << 8) | u32::from(dec.next_byte()?);
            }
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(Error::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn ensure_started(&self) -> Result<()> {
        if self.data.is_empty() {
            Err(Error::Truncated)
        } else {
            Ok(())
        }
    }

    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(())
    }

    pub fn decode_bit(&mut self, ctx: &mut BinaryContext) -> Result<bool> {
        self.ensure_started()?;
        let bound = (self.range >> PROB_BITS) * ctx.p1_fixed();
        let bit = if self.code < bound {
            self.range = bound;
            true
        } else {
            self.code -= bound;
            self.range -= bound;
            false
        };
        ctx.update(bit);
        self.normalize()?;
        Ok(bit)
    }

    pub fn decode_bypass(&mut self) -> Result<bool> {
        self.ensure_started()?;
        self.range >>= 1;
        let bit = if self.code >= self.range {
            self.code -= self.range;
            true
        } else {
            false
        };
        self.normalize()?;
        Ok(bit)
    }

    pub fn decode_bypass_bits(&mut self, nbits: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..nbits {
            v = (v << 1) | u64::from(self.decode_bypass()?);
        }
        Ok(v)
    }

    /// Returns the cumulative-frequency target of the next symbol; follow with
    /// [`RangeDecoder::consume_freq`] for the symbol it falls in.
    pub fn peek_freq(&mut self, total_bits: u32) -> Result<u32> {
        self.ensure_started()?;
        let r = self.range >> total_bits;
        Ok((self.code / r).min((1 << total_bits) - 1))
    }

    pub fn consume_freq(&mut self, cum: u32, freq: u32, total_bits: u32) -> Result<()> {
        let r = self.range >> total_bits;
        self.code = self
            .code
            .checked_sub(r * cum)
            .ok_or_else(|| Error::corrupt("range decoder state out of interval"))?;
        self.range = r * freq;
        self.normalize()
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }

    /// Checks that the whole buffer was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::corrupt(format!(
                "coded stream has {} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}
