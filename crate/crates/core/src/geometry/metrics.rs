//! Reconstruction-quality metrics: point-to-point (D1) and point-to-plane (D2)
//! PSNR and the symmetric Chamfer distance.

use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::{CartesianPoint, PointCloud};
use crate::error::{Error, Result};

/// Neighborhood size used for normal estimation in D2.
pub const DEFAULT_NORMAL_K: usize = 9;

/// Exact nearest-neighbor index over a fixed point set.
pub struct NearestNeighbors {
    tree: ImmutableKdTree<f64, 3>,
}

impl NearestNeighbors {
    pub fn new(points: &[CartesianPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("nearest-neighbor index over an empty cloud"));
        }
        let coords: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
        let tree = ImmutableKdTree::new_from_slice(&coords)
            .map_err(|e| Error::invalid(format!("cannot index cloud: {e:?}")))?;
        Ok(Self { tree })
    }

    /// Index and squared distance of the closest indexed point.
    pub fn nearest(&self, q: &CartesianPoint) -> (usize, f64) {
        let hit = self.tree.query(&q.to_array()).nearest_one::<SquaredEuclidean<f64>>().execute();
        (hit.item as usize, hit.distance)
    }

    /// Indices of the `k` closest indexed points, nearest first.
    pub fn k_nearest(&self, q: &CartesianPoint, k: usize) -> Vec<usize> {
        let Some(k) = NonZero::new(k) else { return Vec::new() };
        self.tree
            .query(&q.to_array())
            .nearest_n::<SquaredEuclidean<f64>>(k)
            .execute()
            .into_iter()
            .map(|hit| hit.item as usize)
            .collect()
    }
}

fn require_non_empty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("metric needs two non-empty clouds"));
    }
    Ok(())
}

// Per-query squared errors are collected first and summed in index order so
// the result does not depend on the rayon thread count.
fn mean_nn_error<F>(queries: &[CartesianPoint], index: &NearestNeighbors, err: F) -> f64
where
    F: Fn(usize, &CartesianPoint, usize, f64) -> f64 + Sync,
{
    let errors: Vec<f64> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let (j, d2) = index.nearest(q);
            err(i, q, j, d2)
        })
        .collect();
    errors.iter().sum::<f64>() / queries.len() as f64
}

pub fn mse_to_psnr(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Symmetric point-to-point MSE: the larger of the two directional
/// nearest-neighbor mean squared distances.
pub fn d1_mse(reference: &PointCloud, test: &PointCloud) -> Result<f64> {
    require_non_empty(reference, test)?;
    let ref_index = NearestNeighbors::new(&reference.points)?;
    let test_index = NearestNeighbors::new(&test.points)?;
    let a_to_b = mean_nn_error(&reference.points, &test_index, |_, _, _, d2| d2);
    let b_to_a = mean_nn_error(&test.points, &ref_index, |_, _, _, d2| d2);
    Ok(a_to_b.max(b_to_a))
}

/// Point-to-point PSNR in dB; identical clouds give `f64::INFINITY`.
pub fn d1_psnr(reference: &PointCloud, test: &PointCloud, peak: f64) -> Result<f64> {
    check_peak(peak)?;
    Ok(mse_to_psnr(d1_mse(reference, test)?, peak))
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    Ok(())
}

/// Least-squares plane normals over each point's `k` nearest neighbors
/// (the point itself included). Rank-deficient neighborhoods get `+z`.
pub fn estimate_normals(points: &[CartesianPoint], k: usize) -> Result<Vec<Vector3<f64>>> {
    if k < 3 || points.len() < k {
        return Err(Error::invalid(format!(
            "normal estimation needs k >= 3 and at least k points (k = {k}, n = {})",
            points.len()
        )));
    }
    let index = NearestNeighbors::new(points)?;
    Ok(points
        .par_iter()
        .map(|p| {
            let neighbors: Vec<Vector3<f64>> = index
                .k_nearest(p, k)
                .into_iter()
                .map(|j| Vector3::new(points[j].x, points[j].y, points[j].z))
                .collect();
            plane_normal(&neighbors)
        })
        .collect())
}

fn plane_normal(pts: &[Vector3<f64>]) -> Vector3<f64> {
    let fallback = Vector3::z();
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let scale = cov.trace();
    if scale <= 0.0 {
        return fallback;
    }
    let lambda_min = cov.symmetric_eigenvalues().min();
    // The normal spans the null space of (C - lambda_min I); take the
    // largest cross product of its rows, which is exact for planar input.
    let m = cov - Matrix3::identity() * lambda_min;
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
        .copied()
        .unwrap_or(fallback);
    let norm = best.norm();
    if norm <= 1e-10 * scale * scale {
        return fallback;
    }
    best / norm
}

/// Symmetric point-to-plane MSE. Errors are projected onto the normal of the
/// reference-side point in both directions.
pub fn d2_mse(reference: &PointCloud, test: &PointCloud, normal_k: usize) -> Result<f64> {
    require_non_empty(reference, test)?;
    let normals = estimate_normals(&reference.points, normal_k)?;
    let ref_index = NearestNeighbors::new(&reference.points)?;
    let test_index = NearestNeighbors::new(&test.points)?;
    let project = |p: &CartesianPoint, q: &CartesianPoint, n: &Vector3<f64>| {
        let e = Vector3::new(q.x - p.x, q.y - p.y, q.z - p.z);
        let d = e.dot(n);
        d * d
    };
    let a_to_b = mean_nn_error(&reference.points, &test_index, |i, p, j, _| {
        project(p, &test.points[j], &normals[i])
    });
    let b_to_a = mean_nn_error(&test.points, &ref_index, |_, q, j, _| {
        project(&reference.points[j], q, &normals[j])
    });
    Ok(a_to_b.max(b_to_a))
}

/// Point-to-plane PSNR in dB; zero projected error gives `f64::INFINITY`.
pub fn d2_psnr(reference: &PointCloud, test: &PointCloud, peak: f64, normal_k: usize) -> Result<f64> {
    check_peak(peak)?;
    Ok(mse_to_psnr(d2_mse(reference, test, normal_k)?, peak))
}

/// Mean squared nearest-neighbor distance from `a` to `b` plus the same from `b` to `a`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    require_non_empty(a, b)?;
    let a_index = NearestNeighbors::new(&a.points)?;
    let b_index = NearestNeighbors::new(&b.points)?;
    Ok(mean_nn_error(&a.points, &b_index, |_, _, _, d2| d2)
        + mean_nn_error(&b.points, &a_index, |_, _, _, d2| d2))
}

/// Diagonal length of the axis-aligned bounding box; the default PSNR peak.
pub fn bounding_box_diagonal(cloud: &PointCloud) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for (axis, v) in p.to_array().into_iter().enumerate() {
            lo[axis] = lo[axis].min(v);
            hi[axis] = hi[axis].max(v);
        }
    }
    if cloud.is_empty() {
        return 0.0;
    }
    (0..3).map(|i| (hi[i] - lo[i]).powi(2)).sum::<f64>().sqrt()
}
