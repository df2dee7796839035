//! Coordinate transforms between Cartesian and LiDAR spherical coordinates,
//! laser calibration, per-axis distortion calculus and reconstruction metrics.
//!
//! Angles are degrees everywhere in the public API. The "radius" of a
//! [`SphericalPoint`] is the horizontal range `sqrt(x^2 + y^2)`, not the 3D
//! range, so heights are reconstructed as `r * tan(theta)`.

mod calib;
mod metrics;

pub use calib::{Laser, LaserCalibration};
pub use metrics::{
    bounding_box_diagonal, chamfer_distance, d1_mse, d1_psnr, d2_mse, d2_psnr, estimate_normals,
    mse_to_psnr, NearestNeighbors, DEFAULT_NORMAL_K,
};

use crate::error::{Error, Result};

/// Elevation magnitude used for points with zero horizontal radius.
pub const MAX_ELEVATION_DEG: f64 = 89.999999;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CartesianPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &CartesianPoint) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn distance_squared(&self, other: &CartesianPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

impl From<[f64; 3]> for CartesianPoint {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// A point in the scanner's spherical frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SphericalPoint {
    /// Horizontal radius in meters.
    pub r: f64,
    /// Azimuth in degrees, `(-180, 180]`.
    pub phi: f64,
    /// Elevation in degrees.
    pub theta: f64,
    pub laser_id: u32,
}

/// An ordered point cloud, optionally carrying a laser index per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CartesianPoint>,
    pub laser_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<CartesianPoint>) -> Self {
        Self { points, laser_ids: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CartesianPoint> {
        self.points.iter()
    }
}

impl FromIterator<CartesianPoint> for PointCloud {
    fn from_iter<I: IntoIterator<Item = CartesianPoint>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// A perturbation of exactly one spherical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisPerturbation {
    /// Meters.
    Radius(f64),
    /// Degrees.
    Elevation(f64),
    /// Degrees.
    Azimuth(f64),
}

impl AxisPerturbation {
    /// Builds a perturbation from the three deltas, requiring exactly one to be nonzero.
    pub fn from_deltas(delta_r: f64, delta_theta: f64, delta_phi: f64) -> Result<Self> {
        match (delta_r != 0.0, delta_theta != 0.0, delta_phi != 0.0) {
            (true, false, false) => Ok(Self::Radius(delta_r)),
            (false, true, false) => Ok(Self::Elevation(delta_theta)),
            (false, false, true) => Ok(Self::Azimuth(delta_phi)),
            _ => Err(Error::invalid("exactly one axis perturbation must be nonzero")),
        }
    }

    pub fn apply(&self, p: SphericalPoint) -> SphericalPoint {
        let mut q = p;
        match *self {
            Self::Radius(d) => q.r += d,
            Self::Elevation(d) => q.theta += d,
            Self::Azimuth(d) => q.phi += d,
        }
        q
    }

    /// Cartesian displacement predicted by the closed-form distortion for `p`.
    pub fn distortion(&self, p: &SphericalPoint) -> f64 {
        match *self {
            Self::Radius(d) => axis_distortion_radius(d, p.theta),
            Self::Elevation(d) => axis_distortion_elevation(p.r, p.theta, d),
            Self::Azimuth(d) => axis_distortion_azimuth(p.r, d),
        }
    }
}

fn normalize_azimuth(phi: f64) -> f64 {
    if phi <= -180.0 {
        phi + 360.0
    } else {
        phi
    }
}

/// Converts a Cartesian point to spherical coordinates.
///
/// With a calibration, the laser is chosen by [`assign_laser_id`] and the
/// elevation is measured from that laser's mounting height. Points with zero
/// horizontal radius get azimuth 0 and an elevation clamped to
/// [`MAX_ELEVATION_DEG`]; with a calibration they are assigned the laser whose
/// elevation is closest to that clamped angle.
pub fn cartesian_to_spherical(
    p: CartesianPoint,
    calib: Option<&LaserCalibration>,
) -> Result<SphericalPoint> {
    if !p.is_finite() {
        return Err(Error::invalid(format!("non-finite point {p:?}")));
    }
    let r = p.x.hypot(p.y);
    let phi = if r == 0.0 { 0.0 } else { normalize_azimuth(p.y.atan2(p.x).to_degrees()) };
    let elevation = |z: f64| z.atan2(r).to_degrees().clamp(-MAX_ELEVATION_DEG, MAX_ELEVATION_DEG);

    let (laser_id, height) = match calib {
        None => (0, 0.0),
        Some(c) if r > 0.0 => {
            let id = assign_laser_id(p, c)?;
            (id, c.lasers[id as usize].height_m)
        }
        Some(c) => {
            // Zero radius: pick the laser pointing closest to straight up/down.
            let target = elevation(p.z);
            let id = c.closest_elevation(target);
            (id, c.lasers[id as usize].height_m)
        }
    };
    Ok(SphericalPoint { r, phi, theta: elevation(p.z + height), laser_id })
}

/// Chooses the laser whose beam best explains the point's height:
/// `argmin_j |z + height(j) - r * tan(elevation(j))|`, ties to the smaller index.
pub fn assign_laser_id(p: CartesianPoint, calib: &LaserCalibration) -> Result<u32> {
    let r = p.x.hypot(p.y);
    if r == 0.0 {
        return Err(Error::DegeneratePoint("laser assignment needs a nonzero horizontal radius".into()));
    }
    let mut best = 0u32;
    let mut best_residual = f64::INFINITY;
    for (j, laser) in calib.lasers.iter().enumerate() {
        let residual = (p.z + laser.height_m - r * laser.elevation_deg.to_radians().tan()).abs();
        if residual < best_residual {
            best_residual = residual;
            best = j as u32;
        }
    }
    Ok(best)
}

/// Inverse of [`cartesian_to_spherical`].
pub fn spherical_to_cartesian(
    s: SphericalPoint,
    calib: Option<&LaserCalibration>,
) -> Result<CartesianPoint> {
    if !(s.r.is_finite() && s.phi.is_finite() && s.theta.is_finite()) {
        return Err(Error::invalid(format!("non-finite spherical point {s:?}")));
    }
    if s.theta.abs() >= 90.0 {
        return Err(Error::invalid(format!("elevation {} out of (-90, 90)", s.theta)));
    }
    let height = match calib {
        None => 0.0,
        Some(c) => {
            c.lasers
                .get(s.laser_id as usize)
                .ok_or_else(|| Error::invalid(format!("laser {} not in calibration", s.laser_id)))?
                .height_m
        }
    };
    let (sin_phi, cos_phi) = s.phi.to_radians().sin_cos();
    Ok(CartesianPoint {
        x: s.r * cos_phi,
        y: s.r * sin_phi,
        z: s.r * s.theta.to_radians().tan() - height,
    })
}

/// Cartesian error caused by a radius error `delta_r` at elevation `theta`.
pub fn axis_distortion_radius(delta_r: f64, theta: f64) -> f64 {
    delta_r.abs() / theta.to_radians().cos()
}

/// Cartesian error caused by an elevation error `delta_theta` for a point at
/// horizontal radius `r` and elevation `theta`.
pub fn axis_distortion_elevation(r: f64, theta: f64, delta_theta: f64) -> f64 {
    r * chord_factor(delta_theta) / (theta + delta_theta).to_radians().cos()
}

/// Cartesian error caused by an azimuth error `delta_phi` at horizontal radius `r`.
pub fn axis_distortion_azimuth(r: f64, delta_phi: f64) -> f64 {
    r * chord_factor(delta_phi)
}

// sqrt(2 (1 - cos d)), evaluated as 2 |sin(d / 2)| to avoid cancellation
fn chord_factor(delta_deg: f64) -> f64 {
    2.0 * (0.5 * delta_deg.to_radians()).sin().abs()
}

/// Estimates the scanner's azimuth step as the median of the positive azimuth
/// increments between consecutive points of each laser group.
pub fn estimate_angular_resolution<S: AsRef<[f64]>>(groups: &[S]) -> Result<f64> {
    let mut deltas: Vec<f64> = groups
        .iter()
        .flat_map(|g| {
            g.as_ref()
                .windows(2)
                .map(|w| w[1] - w[0])
                .filter(|d| *d > 0.0)
                .collect::<Vec<_>>()
        })
        .collect();
    if deltas.is_empty() {
        return Err(Error::Estimation("no consecutive same-laser points with increasing azimuth".into()));
    }
    deltas.sort_by(f64::total_cmp);
    let n = deltas.len();
    Ok(if n % 2 == 1 { deltas[n / 2] } else { 0.5 * (deltas[n / 2 - 1] + deltas[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn single_laser(height: f64) -> LaserCalibration {
        LaserCalibration::new(vec![Laser { elevation_deg: 3.0, height_m: height }]).unwrap()
    }

    #[test]
    fn axis_aligned_conversions() {
        let s = cartesian_to_spherical(CartesianPoint::new(1.0, 0.0, 0.0), None).unwrap();
        assert_eq!((s.r, s.phi, s.theta), (1.0, 0.0, 0.0));

        let s = cartesian_to_spherical(CartesianPoint::new(0.0, 2.0, 2.0), None).unwrap();
        assert!(close(s.r, 2.0, 1e-15));
        assert!(close(s.phi, 90.0, 1e-12));
        assert!(close(s.theta, 45.0, 1e-12));
    }

    #[test]
    fn calibrated_elevation_uses_laser_height() {
        // atan(1.5 / 5) in degrees, evaluated with mpmath at 30 digits.
        let expected = 16.699_244_233_993_62;
        let s = cartesian_to_spherical(CartesianPoint::new(3.0, 4.0, 1.0), Some(&single_laser(0.5)))
            .unwrap();
        assert!(close(s.r, 5.0, 1e-15));
        assert!(close(s.theta, expected, 1e-12), "{}", s.theta);
        assert_eq!(s.laser_id, 0);
    }

    #[test]
    fn azimuth_domain_is_half_open() {
        let s = cartesian_to_spherical(CartesianPoint::new(-1.0, -0.0, 0.0), None).unwrap();
        assert_eq!(s.phi, 180.0);
        let s = cartesian_to_spherical(CartesianPoint::new(-1.0, 0.0, 0.0), None).unwrap();
        assert_eq!(s.phi, 180.0);
    }

    #[test]
    fn zero_radius_is_degenerate_but_convertible() {
        let s = cartesian_to_spherical(CartesianPoint::new(0.0, 0.0, 5.0), None).unwrap();
        assert_eq!(s.phi, 0.0);
        assert_eq!(s.theta, MAX_ELEVATION_DEG);
        let s = cartesian_to_spherical(CartesianPoint::new(0.0, 0.0, -5.0), None).unwrap();
        assert_eq!(s.theta, -MAX_ELEVATION_DEG);

        let calib = LaserCalibration::new(vec![
            Laser { elevation_deg: -20.0, height_m: 0.0 },
            Laser { elevation_deg: 10.0, height_m: 0.0 },
        ])
        .unwrap();
        let s = cartesian_to_spherical(CartesianPoint::new(0.0, 0.0, 5.0), Some(&calib)).unwrap();
        assert_eq!(s.laser_id, 1);
        assert!(matches!(
            assign_laser_id(CartesianPoint::new(0.0, 0.0, 1.0), &calib),
            Err(Error::DegeneratePoint(_))
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(matches!(
            cartesian_to_spherical(CartesianPoint::new(f64::NAN, 0.0, 0.0), None),
            Err(Error::InvalidInput(_))
        ));
        let bad = SphericalPoint { r: 1.0, phi: 0.0, theta: 90.0, laser_id: 0 };
        assert!(spherical_to_cartesian(bad, None).is_err());
    }

    #[test]
    fn laser_assignment_examples() {
        let calib = LaserCalibration::new(vec![
            Laser { elevation_deg: -10.0, height_m: 0.0 },
            Laser { elevation_deg: 10.0, height_m: 0.0 },
        ])
        .unwrap();
        // 10 * tan(10 deg) = 1.76327; brute force over both lasers gives
        // residuals 3.52657 and 0.00003.
        assert_eq!(assign_laser_id(CartesianPoint::new(10.0, 0.0, 1.7633), &calib).unwrap(), 1);
        // z = 0 is equidistant from both beams.
        assert_eq!(assign_laser_id(CartesianPoint::new(10.0, 0.0, 0.0), &calib).unwrap(), 0);
        let one = single_laser(0.0);
        assert_eq!(assign_laser_id(CartesianPoint::new(3.0, -7.0, 100.0), &one).unwrap(), 0);
    }

    #[test]
    fn spherical_to_cartesian_examples() {
        let p = spherical_to_cartesian(SphericalPoint { r: 1.0, phi: 0.0, theta: 0.0, laser_id: 0 }, None)
            .unwrap();
        assert_eq!(p, CartesianPoint::new(1.0, 0.0, 0.0));
        let p = spherical_to_cartesian(SphericalPoint { r: 2.0, phi: 90.0, theta: 45.0, laser_id: 0 }, None)
            .unwrap();
        assert!(close(p.x, 0.0, 1e-15) && close(p.y, 2.0, 1e-15) && close(p.z, 2.0, 1e-15));

        let calib = single_laser(0.5);
        let orig = CartesianPoint::new(3.0, 4.0, 1.0);
        let back =
            spherical_to_cartesian(cartesian_to_spherical(orig, Some(&calib)).unwrap(), Some(&calib))
                .unwrap();
        assert!(orig.distance(&back) < 1e-9);
    }

    #[test]
    fn distortion_examples() {
        assert!(close(axis_distortion_radius(0.1, 0.0), 0.1, 1e-15));
        assert_eq!(axis_distortion_radius(0.0, 37.0), 0.0);
        assert!(close(axis_distortion_radius(0.1, 60.0), 0.2, 1e-12));

        assert_eq!(axis_distortion_elevation(12.0, 3.0, 0.0), 0.0);
        // Small-angle oracle r * delta_theta[rad].
        assert!(close(axis_distortion_elevation(1.0, 0.0, 0.1), 0.1f64.to_radians(), 1e-7));
        assert!(close(axis_distortion_elevation(66.7, 0.0, 0.1), 66.7 * 0.1f64.to_radians(), 1e-4));
        assert!(close(axis_distortion_elevation(66.7, 0.0, 0.1), 0.11641, 1e-4));

        assert_eq!(axis_distortion_azimuth(5.0, 0.0), 0.0);
        assert!(close(axis_distortion_azimuth(1.0, 180.0), 2.0, 1e-15));
        // Chord oracle 2 r sin(d / 2).
        let chord = 2.0 * 10.0 * (0.09f64).to_radians().sin();
        assert!(close(axis_distortion_azimuth(10.0, 0.18), chord, 1e-12));
        assert!(close(axis_distortion_azimuth(10.0, 0.18), 0.031416, 1e-5));
    }

    #[test]
    fn perturbation_requires_single_axis() {
        assert!(AxisPerturbation::from_deltas(0.1, 0.0, 0.0).is_ok());
        assert!(AxisPerturbation::from_deltas(0.1, 0.1, 0.0).is_err());
        assert!(AxisPerturbation::from_deltas(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn elevation_error_dominates_azimuth_error() {
        for i in 1..=100 {
            let d = i as f64 * 0.01;
            for t in 0..=60 {
                let theta = t as f64;
                let r = 17.0;
                assert!(axis_distortion_elevation(r, theta, d) >= axis_distortion_azimuth(r, d));
            }
        }
    }

    #[test]
    fn angular_resolution_examples() {
        let sweep: Vec<f64> = (0..1800).map(|k| -180.0 + 0.2 * k as f64).collect();
        assert!(close(estimate_angular_resolution(&[sweep]).unwrap(), 0.2, 1e-9));

        // 0.1 degree sweep with every 100th point dropped.
        let gappy: Vec<f64> =
            (0..3600).filter(|k| k % 100 != 37).map(|k| -180.0 + 0.1 * k as f64).collect();
        let other: Vec<f64> = (0..500).map(|k| 0.1 * k as f64).collect();
        assert!(close(estimate_angular_resolution(&[gappy, other]).unwrap(), 0.1, 1e-9));

        assert!(matches!(
            estimate_angular_resolution(&[vec![12.0]]),
            Err(Error::Estimation(_))
        ));
    }
}
