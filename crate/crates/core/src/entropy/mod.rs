//! Adaptive binary range coding, integer binarization and the Laplace rate
//! model.

mod integer;
mod laplace;
mod range;

pub use integer::{decode_int, encode_int, IntContexts, CONTEXT_BINS, MAX_MAGNITUDE};
pub use laplace::{
    decode_laplace, encode_laplace, fit_laplace, laplace_bits, nearest_scale_index, scale_from_index,
    LaplaceParams, MIN_BITS, MIN_SCALE, SCALE_LEVELS,
};
pub use range::{BinaryContext, CodedBuffer, RangeDecoder, RangeEncoder};

use crate::error::Result;

/// Codes a sequence of signed integers with a fresh context set.
pub fn encode_ints(values: &[i64]) -> Result<CodedBuffer> {
    let mut enc = RangeEncoder::new();
    let mut ctx = IntContexts::new();
    for &v in values {
        encode_int(&mut enc, &mut ctx, v)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`encode_ints`]; the buffer must hold exactly `count` values.
pub fn decode_ints(bytes: &[u8], count: usize) -> Result<Vec<i64>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut ctx = IntContexts::new();
    let values = (0..count).map(|_| decode_int(&mut dec, &mut ctx)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary_entropy(p: f64) -> f64 {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }

    #[test]
    fn bernoulli_code_length_near_entropy() {
        let n = 100_000;
        for (seed, p) in [0.05, 0.1, 0.3, 0.5].into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
            let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
            let mut enc = RangeEncoder::new();
            let mut ctx = BinaryContext::new();
            for &b in &bits {
                enc.encode_bit(&mut ctx, b);
            }
            let buf = enc.finish();
            let bound = 1.01 * n as f64 * binary_entropy(p) + 64.0;
            assert!((buf.bit_len() as f64) <= bound, "p={p}: {} > {bound}", buf.bit_len());

            let mut dec = RangeDecoder::new(&buf.bytes).unwrap();
            let mut ctx = BinaryContext::new();
            for &b in &bits {
                assert_eq!(dec.decode_bit(&mut ctx).unwrap(), b);
            }
            dec.finish().unwrap();
        }
    }

    /// Two-sided geometric, `P(k) ∝ 0.8^|k|`, drawn as the difference of two
    /// one-sided geometric variables.
    fn two_sided_geometric(rng: &mut ChaCha8Rng, n: usize) -> Vec<i64> {
        let one_sided = |rng: &mut ChaCha8Rng| {
            let mut k = 0i64;
            while rng.random_bool(0.8) {
                k += 1;
            }
            k
        };
        (0..n).map(|_| one_sided(rng) - one_sided(rng)).collect()
    }

    #[test]
    fn geometric_integers_near_empirical_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = two_sided_geometric(&mut rng, 10_000);
        let mut counts = std::collections::HashMap::new();
        for &v in &values {
            *counts.entry(v).or_insert(0usize) += 1;
        }
        let n = values.len() as f64;
        let entropy: f64 = counts.values().map(|&c| -(c as f64) * (c as f64 / n).log2()).sum();
        let buf = encode_ints(&values).unwrap();
        let ratio = buf.bit_len() as f64 / entropy;
        assert!(ratio <= 1.05, "ratio {ratio}");
        assert_eq!(decode_ints(&buf.bytes, values.len()).unwrap(), values);
    }

    #[test]
    fn deterministic_and_adaptive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values = two_sided_geometric(&mut rng, 5_000);
        assert_eq!(encode_ints(&values).unwrap(), encode_ints(&values).unwrap());
        assert_eq!(decode_ints(&encode_ints(&[-3, 0, 7, -1]).unwrap().bytes, 4).unwrap(), [-3, 0, 7, -1]);

        let mut enc = RangeEncoder::new();
        let mut ctx = BinaryContext::new();
        for _ in 0..10_000 {
            enc.encode_bit(&mut ctx, false);
        }
        assert!(ctx.p1() > 0.0 && ctx.p1() < 0.01);
        assert!(enc.finish().bit_len() < 300);
    }

    #[test]
    fn million_integer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<i64> = (0..1_000_000)
            .map(|i| match i % 4 {
                0 => rng.random_range(-3..=3),
                1 => rng.random_range(-1000..=1000),
                2 => rng.random_range(-(MAX_MAGNITUDE as i64 - 1)..=(MAX_MAGNITUDE as i64 - 1)),
                _ => 0,
            })
            .collect();
        let buf = encode_ints(&values).unwrap();
        assert_eq!(decode_ints(&buf.bytes, values.len()).unwrap(), values);
    }

    #[test]
    fn empty_stream_and_truncation() {
        let buf = encode_ints(&[]).unwrap();
        assert!(buf.bytes.is_empty());
        assert_eq!(decode_ints(&buf.bytes, 0).unwrap(), Vec::<i64>::new());
        assert!(matches!(decode_ints(&[], 1), Err(Error::Truncated)));

        let buf = encode_ints(&[5, -9, 120_000, 3]).unwrap();
        let cut = &buf.bytes[..buf.bytes.len() - 2];
        assert!(decode_ints(cut, 4).is_err());
        assert!(encode_ints(&[MAX_MAGNITUDE as i64]).is_err());
    }

    #[test]
    fn laplace_bits_reference_value() {
        // -log2(1 - e^-0.5)
        let bits = laplace_bits(0.0, LaplaceParams { mu: 0.0, b: 1.0 }, 1.0);
        assert!((bits - 1.345_677).abs() < 1e-6, "{bits}");
    }

    #[test]
    fn laplace_bits_tails_are_stable() {
        let p = LaplaceParams { mu: 0.0, b: 0.5 };
        let far = laplace_bits(400.0, p, 1.0);
        // -log2(0.5 e^{-799} (1 - e^{-2})) computed analytically
        let expected = 1.0 + 799.0 / LN2 - (1.0 - (-2f64).exp()).log2();
        assert!((far - expected).abs() < 1e-9);
        assert_eq!(laplace_bits(-400.0, p, 1.0), far);
        assert_eq!(laplace_bits(0.0, LaplaceParams { mu: 0.0, b: 1e-12 }, 1.0), MIN_BITS);
    }

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn fit_laplace_examples() {
        let p = fit_laplace(&[-1.0, 0.0, 1.0]);
        assert_eq!(p.mu, 0.0);
        assert!((p.b - 2.0 / 3.0).abs() < 1e-15);
        let p = fit_laplace(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(p.mu, 3.0);
        assert!((p.b - 20.2).abs() < 1e-12);
        let p = fit_laplace(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(p.mu, 1.5);
        assert_eq!(p.b, 1.0);
        assert_eq!(fit_laplace(&[2.0; 10]).b, MIN_SCALE);
    }

    fn laplace_samples(rng: &mut ChaCha8Rng, mu: f64, b: f64, n: usize) -> Vec<f64> {
        let exp = rand_distr::Exp::new(1.0 / b).unwrap();
        (0..n).map(|_| mu + rng.sample(exp) - rng.sample(exp)).collect()
    }

    #[test]
    fn fit_laplace_recovers_sampled_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = fit_laplace(&laplace_samples(&mut rng, 3.0, 2.0, 100_000));
        assert!((p.mu - 3.0).abs() < 0.06, "{p:?}");
        assert!((p.b - 2.0).abs() < 0.04, "{p:?}");
    }

    #[test]
    fn laplace_bits_sum_tracks_discrete_entropy() {
        let params = LaplaceParams { mu: 0.0, b: 3.0 };
        let entropy: f64 = (-400..=400)
            .map(|k| {
                let bits = laplace_bits(k as f64, params, 1.0);
                bits * (-bits).exp2()
            })
            .sum();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = laplace_samples(&mut rng, 0.0, 3.0, 100_000);
        let mean = samples.iter().map(|v| laplace_bits(v.round(), params, 1.0)).sum::<f64>() / samples.len() as f64;
        assert!((mean / entropy - 1.0).abs() < 0.02, "{mean} vs {entropy}");

        let wide = laplace_bits(0.0, LaplaceParams { mu: 0.0, b: 1e6 }, 1.0);
        assert!(wide > 20.0);
        let nonzero = |b: f64| laplace_bits(5.0, LaplaceParams { mu: 0.0, b }, 1.0);
        assert!(nonzero(0.5) > nonzero(1.0) && nonzero(1.0) > nonzero(2.0));
    }

    #[test]
    fn laplace_table_coding_round_trip_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = nearest_scale_index(2.0);
        let b = scale_from_index(idx);
        let dist = rand_distr::Exp::new(1.0 / b).unwrap();
        let values: Vec<i64> = (0..50_000)
            .map(|_| {
                let m: f64 = rng.sample(dist);
                let v = m.round() as i64;
                if rng.random_bool(0.5) { -v } else { v }
            })
            .chain([10_000, -70_000, 0])
            .collect();
        let mut enc = RangeEncoder::new();
        for &v in &values {
            encode_laplace(&mut enc, v, idx).unwrap();
        }
        let buf = enc.finish();
        let mut dec = RangeDecoder::new(&buf.bytes).unwrap();
        for &v in &values {
            assert_eq!(decode_laplace(&mut dec, idx).unwrap(), v);
        }
        dec.finish().unwrap();

        let model: f64 = values[..50_000]
            .iter()
            .map(|&v| laplace_bits(v as f64, LaplaceParams { mu: 0.0, b }, 1.0))
            .sum();
        assert!((buf.bit_len() as f64) < model * 1.02 + 200.0);
    }

    #[test]
    fn scale_grid() {
        assert_eq!(scale_from_index(0), 0.0625);
        assert_eq!(scale_from_index(4), 0.125);
        for i in 0..SCALE_LEVELS as u8 {
            assert_eq!(nearest_scale_index(scale_from_index(i)), i);
        }
        assert_eq!(nearest_scale_index(1e9), SCALE_LEVELS as u8 - 1);
    }

    proptest! {
        #[test]
        fn laplace_bits_minimized_at_mu(mu in -50i32..50, b in 0.01f64..100.0, off in 1i32..40) {
            let p = LaplaceParams { mu: mu as f64, b };
            let at = laplace_bits(mu as f64, p, 1.0);
            prop_assert!(at <= laplace_bits((mu + off) as f64, p, 1.0));
            prop_assert!(at <= laplace_bits((mu - off) as f64, p, 1.0));
            prop_assert!(at >= MIN_BITS);
        }

        #[test]
        fn int_round_trip(values in proptest::collection::vec(-(1i64 << 31) + 1..(1i64 << 31), 0..300)) {
            let buf = encode_ints(&values).unwrap();
            prop_assert_eq!(decode_ints(&buf.bytes, values.len()).unwrap(), values);
        }

        #[test]
        fn bit_round_trip(bits in proptest::collection::vec(any::<(bool, bool, u8)>(), 1..500)) {
            let mut enc = RangeEncoder::new();
            let mut ctxs = [BinaryContext::new(); 4];
            for &(bit, bypass, c) in &bits {
                if bypass { enc.encode_bypass(bit) } else { enc.encode_bit(&mut ctxs[(c % 4) as usize], bit) }
            }
            let buf = enc.finish();
            let mut dec = RangeDecoder::new(&buf.bytes).unwrap();
            let mut ctxs = [BinaryContext::new(); 4];
            for &(bit, bypass, c) in &bits {
                let got = if bypass { dec.decode_bypass().unwrap() } else { dec.decode_bit(&mut ctxs[(c % 4) as usize]).unwrap() };
                prop_assert_eq!(got, bit);
            }
            prop_assert!(dec.finish().is_ok());
        }
    }
}
