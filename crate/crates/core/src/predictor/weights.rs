//! LSTM weight container and its on-disk format:
//!
//! ```text
//! "LPCW" | version u8 | H u16 | W u16 | layers u8 | params f32 x P | crc32 u32
//! ```
//!
//! All little-endian, parameters in the order documented in
//! [`super::network`]; the CRC covers every preceding byte.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::network::{Shape, LAYERS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LPCW";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub hidden: u16,
    pub window: u16,
    pub params: Vec<f32>,
}

impl LstmWeights {
    pub fn zeros(hidden: u16, window: u16) -> Self {
        let n = Shape::new(usize::from(hidden)).param_count();
        Self { hidden, window, params: vec![0.0; n] }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn random(hidden: u16, window: u16, seed: u64) -> Self {
        let mut w = Self::zeros(hidden, window);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (offset, fan_in, len, _) in Shape::new(usize::from(hidden)).blocks() {
            let bound = 1.0 / (fan_in as f32).sqrt();
            for p in &mut w.params[offset..offset + len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        w
    }

    pub fn shape(&self) -> Shape {
        Shape::new(usize::from(self.hidden))
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.window == 0 {
            return Err(Error::config("hidden size and window must be positive"));
        }
        let expected = self.shape().param_count();
        if self.params.len() != expected {
            return Err(Error::config(format!(
                "weights hold {} values, hidden size {} needs {expected}",
                self.params.len(),
                self.hidden
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("weights contain non-finite values"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.params.len() + 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.hidden.to_le_bytes());
        out.extend_from_slice(&self.window.to_le_bytes());
        out.push(LAYERS as u8);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::corrupt("weight file truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format("not a weight file"));
        }
        if bytes[4] != VERSION {
            return Err(Error::format(format!("unsupported weight file version {}", bytes[4])));
        }
        let hidden = u16::from_le_bytes([bytes[5], bytes[6]]);
        let window = u16::from_le_bytes([bytes[7], bytes[8]]);
        if usize::from(bytes[9]) != LAYERS {
            return Err(Error::format(format!("weight file has {} layers, expected {LAYERS}", bytes[9])));
        }
        let count = Shape::new(usize::from(hidden)).param_count();
        let expected_len = HEADER_LEN + 4 * count + 4;
        if bytes.len() != expected_len {
            return Err(Error::corrupt(format!(
                "weight file is {} bytes, expected {expected_len}",
                bytes.len()
            )));
        }
        let (body, tail) = bytes.split_at(expected_len - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        if crc32fast::hash(body) != stored {
            return Err(Error::corrupt("weight file checksum mismatch"));
        }
        let params = body[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let w = Self { hidden, window, params };
        w.validate()?;
        Ok(w)
    }

    /// First 8 bytes of the SHA-256 of the serialized file, little-endian.
    pub fn checksum(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

pub fn save_weights(w: &LstmWeights, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &w.to_bytes())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<LstmWeights> {
    LstmWeights::from_bytes(&std::fs::read(path)?)
}
