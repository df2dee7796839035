//! Synthetic spinning-LiDAR scans: a ground plane, vertical cylinders and a
//! ring of planar walls, sampled laser by laser in ascending azimuth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{CartesianPoint, Laser, LaserCalibration, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub lasers: usize,
    /// Lowest and highest beam elevation in degrees.
    pub fov_deg: (f64, f64),
    pub phi_ar_deg: f64,
    pub sensor_height_m: f64,
    /// Vertical laser offsets are drawn uniformly from `[0, laser_offset_m]`.
    pub laser_offset_m: f64,
    pub obstacles: usize,
    pub range_noise_m: f64,
    pub elevation_jitter_deg: f64,
    /// Reported elevation drifts by this much per meter of range.
    pub elevation_slope_deg_per_m: f64,
    /// Azimuth jitter as a fraction of `phi_ar_deg`.
    pub azimuth_jitter: f64,
    pub dropout: f64,
    pub max_range_m: f64,
    /// Seeds the scene: obstacles, noise and dropouts.
    pub seed: u64,
    /// Seeds the laser calibration, so scans can share one sensor.
    pub sensor_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            lasers: 64,
            fov_deg: (-24.8, 2.0),
            phi_ar_deg: 0.2,
            sensor_height_m: 1.73,
            laser_offset_m: 0.2,
            obstacles: 24,
            range_noise_m: 0.01,
            elevation_jitter_deg: 0.005,
            elevation_slope_deg_per_m: 0.0,
            azimuth_jitter: 0.02,
            dropout: 0.01,
            max_range_m: 80.0,
            seed: 0,
            sensor_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.fov_deg;
        let ok = self.lasers > 0
            && self.lasers <= usize::from(u16::MAX)
            && lo.is_finite()
            && hi.is_finite()
            && lo <= hi
            && lo > -89.0
            && hi < 89.0
            && self.phi_ar_deg > 0.0
            && self.phi_ar_deg <= 90.0
            && self.sensor_height_m > 0.0
            && self.laser_offset_m >= 0.0
            && self.laser_offset_m < self.sensor_height_m
            && self.range_noise_m >= 0.0
            && self.elevation_jitter_deg >= 0.0
            && self.elevation_slope_deg_per_m.abs() <= 1.0
            && (0.0..0.5).contains(&self.azimuth_jitter)
            && (0.0..1.0).contains(&self.dropout)
            && self.max_range_m > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid scene configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub calibration: LaserCalibration,
}

struct Cylinder {
    cx: f64,
    cy: f64,
    radius: f64,
    top: f64,
}

struct Wall {
    /// Direction of the wall normal, radians.
    normal: f64,
    distance: f64,
    top: f64,
}

struct World {
    ground: f64,
    cylinders: Vec<Cylinder>,
    walls: Vec<Wall>,
}

impl World {
    fn random(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Self {
        let ground = -cfg.sensor_height_m;
        let cylinders = (0..cfg.obstacles)
            .map(|_| {
                let d = rng.random_range(4.0..40.0_f64.min(cfg.max_range_m * 0.6));
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Cylinder {
                    cx: d * a.cos(),
                    cy: d * a.sin(),
                    radius: rng.random_range(0.2..2.5),
                    top: ground + rng.random_range(0.8..6.0),
                }
            })
            .collect();
        let sectors = 8;
        let walls = (0..sectors)
            .map(|s| Wall {
                normal: (s as f64 + rng.random_range(-0.2..0.2)) * std::f64::consts::TAU / sectors as f64,
                distance: rng.random_range(15.0..60.0_f64.min(cfg.max_range_m * 0.9)),
                top: ground + rng.random_range(3.0..15.0),
            })
            .collect();
        Self { ground, cylinders, walls }
    }

    /// Horizontal range of the first surface hit by a beam leaving height
    /// `-offset` at elevation `theta` (radians) and azimuth `phi` (radians).
    fn cast(&self, phi: f64, theta: f64, offset: f64, max_range: f64) -> Option<f64> {
        let (dx, dy) = (phi.cos(), phi.sin());
        let slope = theta.tan();
        let z_at = |r: f64| r * slope - offset;
        let mut best = f64::INFINITY;
        if slope < 0.0 {
            let r = (self.ground + offset) / slope;
            if r > 0.0 {
                best = r;
            }
        }
        for c in &self.cylinders {
            let b = dx * c.cx + dy * c.cy;
            let disc = b * b - (c.cx * c.cx + c.cy * c.cy - c.radius * c.radius);
            if disc < 0.0 {
                continue;
            }
            let r = b - disc.sqrt();
            if r > 0.5 && r < best && z_at(r) <= c.top && z_at(r) >= self.ground {
                best = r;
            }
        }
        for w in &self.walls {
            let cos = (phi - w.normal).cos();
            if cos <= 1e-3 {
                continue;
            }
            let r = w.distance / cos;
            if r < best && z_at(r) <= w.top && z_at(r) >= self.ground {
                best = r;
            }
        }
        (best <= max_range).then_some(best)
    }
}

/// Evenly spaced beam elevations with random vertical offsets.
pub fn scene_calibration(cfg: &SceneConfig, seed: u64) -> Result<LaserCalibration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.fov_deg;
    let lasers = (0..cfg.lasers)
        .map(|j| {
            let t = if cfg.lasers == 1 { 0.5 } else { j as f64 / (cfg.lasers - 1) as f64 };
            Laser { elevation_deg: lo + t * (hi - lo), height_m: rng.random_range(0.0..=cfg.laser_offset_m) }
        })
        .collect();
    LaserCalibration::new(lasers)
}

pub fn generate(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let calibration = scene_calibration(cfg, cfg.sensor_seed)?;
    let world = World::random(cfg, &mut rng);
    let range_noise = Normal::new(0.0, cfg.range_noise_m).map_err(|e| Error::config(e.to_string()))?;
    let el_noise = Normal::new(0.0, cfg.elevation_jitter_deg).map_err(|e| Error::config(e.to_string()))?;
    let steps = (360.0 / cfg.phi_ar_deg).floor() as usize;
    let jitter = cfg.azimuth_jitter * cfg.phi_ar_deg;

    let mut points = Vec::new();
    let mut ids = Vec::new();
    for (j, laser) in calibration.lasers.iter().enumerate() {
        let phase = rng.random_range(0.0..cfg.phi_ar_deg);
        for k in 0..steps {
            let phi_deg = -180.0 + k as f64 * cfg.phi_ar_deg + phase + rng.random_range(-jitter..=jitter);
            let theta_deg = laser.elevation_deg + el_noise.sample(&mut rng);
            let dropped = rng.random::<f64>() < cfg.dropout;
            let noise = range_noise.sample(&mut rng);
            if dropped {
                continue;
            }
            let phi = phi_deg.to_radians();
            let theta = theta_deg.to_radians();
            let Some(hit) = world.cast(phi, theta, laser.height_m, cfg.max_range_m) else {
                continue;
            };
            let r = (hit + noise).max(0.5);
            let reported = (theta_deg + cfg.elevation_slope_deg_per_m * r).to_radians();
            points.push(CartesianPoint::new(r * phi.cos(), r * phi.sin(), r * reported.tan() - laser.height_m));
            ids.push(j as u32);
        }
    }
    Ok(Scene { cloud: PointCloud { points, laser_ids: Some(ids) }, calibration })
}
