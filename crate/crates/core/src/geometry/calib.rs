use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Laser {
    pub elevation_deg: f64,
    /// Vertical offset of the laser relative to the sensor origin.
    pub height_m: f64,
}

/// Per-laser elevation and mounting height; laser `j` is `lasers[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserCalibration {
    pub lasers: Vec<Laser>,
}

impl LaserCalibration {
    /// Validates and wraps a laser table. Elevations must be finite and
    /// strictly monotone in the laser index.
    pub fn new(lasers: Vec<Laser>) -> Result<Self> {
        if lasers.is_empty() {
            return Err(Error::invalid("calibration has no lasers"));
        }
        if lasers.len() > u16::MAX as usize {
            return Err(Error::invalid("calibration has too many lasers"));
        }
        if lasers
            .iter()
            .any(|l| !l.elevation_deg.is_finite() || !l.height_m.is_finite() || l.elevation_deg.abs() >= 90.0)
        {
            return Err(Error::invalid("calibration values must be finite with |elevation| < 90"));
        }
        let increasing = lasers.windows(2).all(|w| w[1].elevation_deg > w[0].elevation_deg);
        let decreasing = lasers.windows(2).all(|w| w[1].elevation_deg < w[0].elevation_deg);
        if !(increasing || decreasing) {
            return Err(Error::invalid("laser elevations must be strictly monotone in laser id"));
        }
        Ok(Self { lasers })
    }

    pub fn len(&self) -> usize {
        self.lasers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lasers.is_empty()
    }

    pub(crate) fn closest_elevation(&self, theta: f64) -> u32 {
        let mut best = 0;
        let mut best_diff = f64::INFINITY;
        for (j, l) in self.lasers.iter().enumerate() {
            let d = (l.elevation_deg - theta).abs();
            if d < best_diff {
                best_diff = d;
                best = j as u32;
            }
        }
        best
    }

    /// Parses the text format: one `<laser_id> <elevation_deg> <height_m>` line
    /// per laser, `#` starts a comment, ids must cover `0..N` exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, Laser)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::format(format!(
                    "calibration line {}: expected 3 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let bad = |what: &str| Error::format(format!("calibration line {}: bad {what}", lineno + 1));
            let id: usize = fields[0].parse().map_err(|_| bad("laser id"))?;
            let elevation_deg: f64 = fields[1].parse().map_err(|_| bad("elevation"))?;
            let height_m: f64 = fields[2].parse().map_err(|_| bad("height"))?;
            entries.push((id, Laser { elevation_deg, height_m }));
        }
        entries.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::format(format!(
                    "calibration laser ids must be dense 0..N-1 without duplicates (expected {expected}, found {id})"
                )));
            }
        }
        Self::new(entries.into_iter().map(|(_, l)| l).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# laser_id elevation_deg height_m\n");
        for (j, l) in self.lasers.iter().enumerate() {
            let _ = writeln!(out, "{j} {:?} {:?}", l.elevation_deg, l.height_m);
        }
        out
    }
}
