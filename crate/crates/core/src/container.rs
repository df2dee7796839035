//! Bitstream container. Layout, all integers little-endian:
//!
//! ```text
//! header   "LPCM" | version u8 | mode u8 | q_delta u16 | q_phi u16 | q_theta u16 | q_r u16
//!          | radius_step f64 | phi_ar f64 | calib_flag u8 [| n u16 | (elev f64, height f64) x n]
//!          | weight_checksum u64 | tree_count u32
//! tree     laser u16 | count u32 | r f64 | theta f64 | phi f64
//!          | 4 x (len u32 | bytes)      slopes, biases, radii, elevations
//! matrices (low mode only) count u32 | step f64 | count x (fill u32 | len u32 | bytes)
//! ```
//!
//! `q_delta = 0` means azimuth biases are not coded.

use crate::error::{Error, Result};
use crate::geometry::{Laser, LaserCalibration};
use crate::highrate::QpVector;

const MAGIC: &[u8; 4] = b"LPCM";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Low = 0,
    High = 1,
    HighLstm = 2,
}

impl Mode {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Low),
            1 => Ok(Self::High),
            2 => Ok(Self::HighLstm),
            _ => Err(Error::format(format!("unknown coding mode {b}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TreeRecord {
    pub laser_id: u16,
    pub count: u32,
    /// Reconstructed root `(r, theta, phi)`.
    pub root: [f64; 3],
    pub slopes: Vec<u8>,
    pub biases: Vec<u8>,
    pub radii: Vec<u8>,
    pub elevations: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRecord {
    pub fill: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSection {
    pub step: f64,
    pub matrices: Vec<MatrixRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub mode: Mode,
    pub qp: QpVector,
    pub skip_bias: bool,
    pub radius_step: f64,
    pub phi_ar: f64,
    pub calibration: Option<LaserCalibration>,
    pub weight_checksum: u64,
    pub trees: Vec<TreeRecord>,
    pub matrices: Option<MatrixSection>,
}

/// Bits spent per coded quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamBits {
    pub azimuth: u64,
    pub elevation: u64,
    pub radius: u64,
    /// Headers, roots and length prefixes.
    pub overhead: u64,
}

impl StreamBits {
    pub fn total(&self) -> u64 {
        self.azimuth + self.elevation + self.radius + self.overhead
    }
}

impl Bitstream {
    pub fn point_count(&self) -> usize {
        self.trees.iter().map(|t| t.count as usize).sum()
    }

    /// Laser count used to normalize predictor inputs.
    pub fn laser_count(&self) -> usize {
        match &self.calibration {
            Some(c) => c.len(),
            None => self.trees.iter().map(|t| usize::from(t.laser_id) + 1).max().unwrap_or(0),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.push(VERSION);
        w.push(self.mode as u8);
        let q_delta = if self.skip_bias { 0 } else { self.qp.q_delta };
        for q in [q_delta, self.qp.q_phi, self.qp.q_theta, self.qp.q_r] {
            w.extend_from_slice(&q.to_le_bytes());
        }
        w.extend_from_slice(&self.radius_step.to_le_bytes());
        w.extend_from_slice(&self.phi_ar.to_le_bytes());
        match &self.calibration {
            None => w.push(0),
            Some(c) => {
                w.push(1);
                w.extend_from_slice(&(c.len() as u16).to_le_bytes());
                for l in &c.lasers {
                    w.extend_from_slice(&l.elevation_deg.to_le_bytes());
                    w.extend_from_slice(&l.height_m.to_le_bytes());
                }
            }
        }
        w.extend_from_slice(&self.weight_checksum.to_le_bytes());
        w.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for t in &self.trees {
            w.extend_from_slice(&t.laser_id.to_le_bytes());
            w.extend_from_slice(&t.count.to_le_bytes());
            for v in t.root {
                w.extend_from_slice(&v.to_le_bytes());
            }
            for payload in [&t.slopes, &t.biases, &t.radii, &t.elevations] {
                w.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                w.extend_from_slice(payload);
            }
        }
        if let Some(m) = &self.matrices {
            w.extend_from_slice(&(m.matrices.len() as u32).to_le_bytes());
            w.extend_from_slice(&m.step.to_le_bytes());
            for rec in &m.matrices {
                w.extend_from_slice(&rec.fill.to_le_bytes());
                w.extend_from_slice(&(rec.payload.len() as u32).to_le_bytes());
                w.extend_from_slice(&rec.payload);
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("not an LPCM bitstream"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported bitstream version {version}")));
        }
        let mode = Mode::from_byte(r.u8()?)?;
        let q_delta = r.u16()?;
        let qp = QpVector { q_delta: q_delta.max(1), q_phi: r.u16()?, q_theta: r.u16()?, q_r: r.u16()? };
        let skip_bias = q_delta == 0;
        let radius_step = r.f64()?;
        let phi_ar = r.f64()?;
        let calibration = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u16()?;
                let lasers = (0..n)
                    .map(|_| Ok(Laser { elevation_deg: r.f64()?, height_m: r.f64()? }))
                    .collect::<Result<Vec<_>>>()?;
                Some(LaserCalibration::new(lasers).map_err(|e| Error::corrupt(e.to_string()))?)
            }
            f => return Err(Error::corrupt(format!("bad calibration flag {f}"))),
        };
        let weight_checksum = r.u64()?;
        let tree_count = r.u32()?;
        let mut trees = Vec::new();
        for _ in 0..tree_count {
            let laser_id = r.u16()?;
            let count = r.u32()?;
            let root = [r.f64()?, r.f64()?, r.f64()?];
            let mut payload = || -> Result<Vec<u8>> {
                let len = r.u32()? as usize;
                Ok(r.take(len)?.to_vec())
            };
            trees.push(TreeRecord {
                laser_id,
                count,
                root,
                slopes: payload()?,
                biases: payload()?,
                radii: payload()?,
                elevations: payload()?,
            });
        }
        let matrices = if mode == Mode::Low {
            let count = r.u32()?;
            let step = r.f64()?;
            let matrices = (0..count)
                .map(|_| {
                    let fill = r.u32()?;
                    let len = r.u32()? as usize;
                    Ok(MatrixRecord { fill, payload: r.take(len)?.to_vec() })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(MatrixSection { step, matrices })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::corrupt(format!("{} trailing bytes after bitstream", bytes.len() - r.pos)));
        }
        let bs = Self { mode, qp, skip_bias, radius_step, phi_ar, calibration, weight_checksum, trees, matrices };
        bs.check_header()?;
        Ok(bs)
    }

    fn check_header(&self) -> Result<()> {
        if !(self.phi_ar.is_finite() && self.phi_ar > 0.0) {
            return Err(Error::corrupt(format!("bad angular resolution {}", self.phi_ar)));
        }
        self.qp.validate(self.mode).map_err(|e| Error::corrupt(e.to_string()))?;
        if self.mode == Mode::Low && !(self.radius_step.is_finite() && self.radius_step > 0.0) {
            return Err(Error::corrupt(format!("bad radius step {}", self.radius_step)));
        }
        if let Some(c) = &self.calibration {
            if let Some(t) = self.trees.iter().find(|t| usize::from(t.laser_id) >= c.len()) {
                return Err(Error::corrupt(format!("tree laser {} outside calibration", t.laser_id)));
            }
        }
        if self.trees.iter().any(|t| t.count == 0) {
            return Err(Error::corrupt("empty tree record"));
        }
        Ok(())
    }

    pub fn stream_bits(&self) -> StreamBits {
        let mut s = StreamBits::default();
        for t in &self.trees {
            s.azimuth += 8 * (t.slopes.len() + t.biases.len()) as u64;
            s.radius += 8 * t.radii.len() as u64;
            s.elevation += 8 * t.elevations.len() as u64;
        }
        if let Some(m) = &self.matrices {
            s.radius += m.matrices.iter().map(|r| 8 * r.payload.len() as u64).sum::<u64>();
        }
        s.overhead = 8 * self.to_bytes().len() as u64 - s.azimuth - s.radius - s.elevation;
        s
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
