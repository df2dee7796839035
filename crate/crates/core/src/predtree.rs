//! Per-laser predictive trees. In angular mode each tree degenerates to a
//! chain of one laser's points in azimuth order.

use crate::error::{Error, Result};
use crate::geometry::{
    cartesian_to_spherical, spherical_to_cartesian, CartesianPoint, LaserCalibration, PointCloud,
    SphericalPoint,
};

/// Default azimuth jump that starts a new laser in threshold segmentation.
pub const DEFAULT_THRESHOLD_DEG: f64 = 180.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveTree {
    pub laser_id: u32,
    pub points: Vec<SphericalPoint>,
    /// `origin_order[k]` is the input index of `points[k]`.
    pub origin_order: Vec<usize>,
}

impl PredictiveTree {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phi).collect()
    }
}

/// How consecutive azimuths are compared during threshold segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AzimuthJump {
    /// `|phi_n - phi_{n-1}|`, as scanned.
    #[default]
    Raw,
    /// `min(raw, 360 - raw)`.
    Wraparound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstructionMethod {
    Calibrated,
    Threshold { threshold_deg: f64, jump: AzimuthJump },
}

/// A partition of one point cloud into predictive trees, ordered by laser id.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSet {
    pub trees: Vec<PredictiveTree>,
    pub method: ConstructionMethod,
    pub calibration: Option<LaserCalibration>,
}

impl TreeSet {
    pub fn point_count(&self) -> usize {
        self.trees.iter().map(PredictiveTree::len).sum()
    }

    /// Number of lasers used to normalize laser ids: the calibration size if
    /// present, otherwise one past the largest tree laser id.
    pub fn laser_count(&self) -> usize {
        match &self.calibration {
            Some(c) => c.len(),
            None => self.trees.iter().map(|t| t.laser_id as usize + 1).max().unwrap_or(0),
        }
    }

    pub fn azimuth_groups(&self) -> Vec<Vec<f64>> {
        self.trees.iter().map(PredictiveTree::azimuths).collect()
    }
}

/// Groups points by calibrated laser id and orders each group by azimuth.
/// Equal azimuths keep input order.
pub fn build_trees_calibrated(cloud: &PointCloud, calib: &LaserCalibration) -> Result<TreeSet> {
    let mut groups: Vec<Vec<(SphericalPoint, usize)>> = vec![Vec::new(); calib.len()];
    for (idx, p) in cloud.points.iter().enumerate() {
        let s = cartesian_to_spherical(*p, Some(calib))?;
        groups[s.laser_id as usize].push((s, idx));
    }
    let trees = groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(laser, mut g)| {
            g.sort_by(|a, b| a.0.phi.total_cmp(&b.0.phi));
            let (points, origin_order) = g.into_iter().unzip();
            PredictiveTree { laser_id: laser as u32, points, origin_order }
        })
        .collect();
    Ok(TreeSet { trees, method: ConstructionMethod::Calibrated, calibration: Some(calib.clone()) })
}

/// Splits a scanner-ordered cloud into lasers wherever consecutive azimuths
/// jump by at least `threshold_deg`, using the raw azimuth difference.
pub fn build_trees_threshold(cloud: &PointCloud, threshold_deg: f64) -> Result<TreeSet> {
    build_trees_threshold_with(cloud, threshold_deg, AzimuthJump::Raw)
}

pub fn build_trees_threshold_with(
    cloud: &PointCloud,
    threshold_deg: f64,
    jump: AzimuthJump,
) -> Result<TreeSet> {
    if !(threshold_deg > 0.0 && threshold_deg.is_finite()) {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold_deg}")));
    }
    let spherical = cloud
        .points
        .iter()
        .map(|p| cartesian_to_spherical(*p, None))
        .collect::<Result<Vec<_>>>()?;
    let azimuths: Vec<f64> = spherical.iter().map(|s| s.phi).collect();
    let labels = segment_lasers(&azimuths, threshold_deg, jump);
    let mut trees: Vec<PredictiveTree> = Vec::new();
    for (idx, (mut s, laser)) in spherical.into_iter().zip(labels).enumerate() {
        if trees.last().is_none_or(|t| t.laser_id != laser) {
            trees.push(PredictiveTree { laser_id: laser, points: Vec::new(), origin_order: Vec::new() });
        }
        let tree = trees.last_mut().expect("a tree was just pushed");
        s.laser_id = laser;
        tree.points.push(s);
        tree.origin_order.push(idx);
    }
    Ok(TreeSet {
        trees,
        method: ConstructionMethod::Threshold { threshold_deg, jump },
        calibration: None,
    })
}

/// Laser labels for a scanner-ordered azimuth sequence: the label increments
/// whenever consecutive azimuths differ by at least `threshold_deg`.
pub fn segment_lasers(azimuths: &[f64], threshold_deg: f64, jump: AzimuthJump) -> Vec<u32> {
    let mut laser = 0u32;
    let mut labels = Vec::with_capacity(azimuths.len());
    for (n, &phi) in azimuths.iter().enumerate() {
        if n > 0 {
            let raw = (phi - azimuths[n - 1]).abs();
            let diff = match jump {
                AzimuthJump::Raw => raw,
                AzimuthJump::Wraparound => raw.min(360.0 - raw),
            };
            if diff >= threshold_deg {
                laser += 1;
            }
        }
        labels.push(laser);
    }
    labels
}

/// Reassembles the Cartesian cloud in original input order.
pub fn flatten(trees: &TreeSet) -> Result<PointCloud> {
    let n = trees.point_count();
    let mut points: Vec<Option<CartesianPoint>> = vec![None; n];
    let mut laser_ids = vec![0u32; n];
    for tree in &trees.trees {
        if tree.origin_order.len() != tree.points.len() {
            return Err(Error::invalid("tree origin order length differs from its point count"));
        }
        for (s, &idx) in tree.points.iter().zip(&tree.origin_order) {
            let slot = points
                .get_mut(idx)
                .ok_or_else(|| Error::invalid(format!("origin index {idx} out of range")))?;
            if slot.is_some() {
                return Err(Error::invalid(format!("origin index {idx} used twice")));
            }
            *slot = Some(spherical_to_cartesian(*s, trees.calibration.as_ref())?);
            laser_ids[idx] = tree.laser_id;
        }
    }
    let points = points.into_iter().map(|p| p.expect("bijective origin order")).collect();
    Ok(PointCloud { points, laser_ids: Some(laser_ids) })
}
