//! Pose- and scale-invariant reference frames.
//!
//! The global reference frame (GRF) of a cloud is the similarity transform
//! `{R, t, s}` with `t` the centroid, `s` the radius about it, and
//! `R = [x | y | z]` where `z` is the covariance normal at the center and `x`
//! is the weighted sum of the points' tangent-plane projections. A local
//! reference frame (LRF) is the same construction applied to a point's
//! neighborhood.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    centroid, covariance, radius, symmetric_eigen3, FrameTransform, Point3, PointCloud,
};
use crate::spatial::KdTree;

/// Relative tolerance below which a sign statistic counts as zero.
const SIGN_TOL: f64 = 1e-9;
/// `λ₂ / λ₃` below this marks a collinear cloud.
const COLLINEAR_TOL: f64 = 1e-10;
/// Relative norm below which the x-axis sum is treated as cancelled.
const X_AXIS_TOL: f64 = 1e-10;
const MIN_SCALE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalRadius {
    /// Absolute radius in the units of the cloud.
    Absolute(f64),
    /// Fraction of the cloud's global radius about its centroid.
    FractionOfGlobal(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub n_neighbors: usize,
    pub local_radius: LocalRadius,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 64,
            local_radius: LocalRadius::FractionOfGlobal(0.3),
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 3 {
            return Err(Error::config("n_neighbors", "must be at least 3"));
        }
        let r = match self.local_radius {
            LocalRadius::Absolute(r) | LocalRadius::FractionOfGlobal(r) => r,
        };
        if !(r > 0.0) {
            return Err(Error::config("local_radius", "must be positive"));
        }
        Ok(())
    }

    fn radius_for(&self, cloud: &PointCloud) -> f64 {
        match self.local_radius {
            LocalRadius::Absolute(r) => r,
            LocalRadius::FractionOfGlobal(f) => f * radius(cloud, &centroid(cloud)),
        }
    }
}

/// Neighborhood of one point. `knn_fallback` is set when fewer than three
/// neighbors fell inside the radius and the three nearest were used instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalRegion {
    pub center_index: usize,
    pub member_indices: Vec<usize>,
    pub knn_fallback: bool,
}

/// Smallest-eigenvalue covariance axis, oriented by the sign rule
/// `nᵀ Σ (c − q) > 0`.
///
/// When `c` is the centroid that sum vanishes identically, so the rule is
/// re-evaluated with each term weighted by its squared tangent-plane
/// distance, which orients `n` toward the convex side of a curved patch.
/// If both statistics vanish the first non-zero component is made positive.
pub fn center_normal(cloud: &PointCloud, center: &Point3) -> Result<Vector3<f64>> {
    let cov = covariance(cloud);
    let eig = symmetric_eigen3(&cov);
    let largest = eig.values[2];
    if !(largest > 0.0) || eig.values[1] <= COLLINEAR_TOL * largest {
        return Err(Error::DegenerateGeometry("points are collinear"));
    }
    let n = eig.vectors[0];
    let spread = cov.trace().sqrt();
    let count = cloud.len() as f64;

    let mut plain = 0.0;
    let mut weighted = 0.0;
    for q in cloud.points() {
        let d = center - q;
        let along = n.dot(&d);
        let tangent_sq = d.norm_squared() - along * along;
        plain += along;
        weighted += tangent_sq * along;
    }
    if plain.abs() > SIGN_TOL * count * spread {
        return Ok(if plain > 0.0 { n } else { -n });
    }
    if weighted.abs() > SIGN_TOL * count * spread.powi(3) {
        return Ok(if weighted > 0.0 { n } else { -n });
    }
    Ok(canonical_sign(n))
}

fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    match v.iter().find(|c| c.abs() > 1e-12) {
        Some(c) if *c < 0.0 => -v,
        _ => v,
    }
}

/// Normalized weighted sum of tangent-plane projections, with weights
/// `(s − ‖q − c‖)²·(nᵀ(q − c))²`.
pub fn grf_x_axis(cloud: &PointCloud, center: &Point3, normal: &Vector3<f64>) -> Result<Vector3<f64>> {
    let s = radius(cloud, center);
    let mut sum = Vector3::zeros();
    let mut magnitude = 0.0;
    for q in cloud.points() {
        let d = q - center;
        let along = normal.dot(&d);
        let projected = d - normal * along;
        let w1 = (s - d.norm()).powi(2);
        let w2 = along * along;
        let w = w1 * w2;
        sum += projected * w;
        magnitude += w * projected.norm();
    }
    let norm = sum.norm();
    if !(norm > X_AXIS_TOL * magnitude) || norm == 0.0 {
        return Err(Error::DegenerateGeometry(
            "tangent-plane projections cancel about the normal",
        ));
    }
    Ok(sum / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum XAxisPolicy {
    /// Fall back to the projection of the global +X (or +Y) axis.
    Fallback,
    Strict,
}

fn fallback_x_axis(z: &Vector3<f64>) -> Vector3<f64> {
    let project = |a: Vector3<f64>| a - z * z.dot(&a);
    let px = project(Vector3::x());
    if px.norm() > 1e-6 {
        px.normalize()
    } else {
        project(Vector3::y()).normalize()
    }
}

fn build_frame(cloud: &PointCloud, policy: XAxisPolicy) -> Result<FrameTransform> {
    let c = centroid(cloud);
    let s = radius(cloud, &c);
    if s < MIN_SCALE {
        return Err(Error::ZeroScale);
    }
    let z = center_normal(cloud, &c)?;
    let x = match grf_x_axis(cloud, &c, &z) {
        Ok(x) => x,
        Err(Error::DegenerateGeometry(_)) if policy == XAxisPolicy::Fallback => fallback_x_axis(&z),
        Err(e) => return Err(e),
    };
    // Remove rounding drift so the triad is orthonormal to machine precision.
    let x = (x - z * z.dot(&x)).normalize();
    let y = z.cross(&x);
    let rotation = nalgebra::Matrix3::from_columns(&[x, y, z]);
    Ok(FrameTransform::from_parts_unchecked(rotation, c, s))
}

/// Global reference frame of a whole cloud. A cancelled x-axis sum (only
/// rotationally symmetric inputs) falls back to the projected global +X.
pub fn build_grf(cloud: &PointCloud) -> Result<FrameTransform> {
    build_frame(cloud, XAxisPolicy::Fallback)
}

/// Local reference frame over a region's members. Unlike the global frame,
/// a cancelled x-axis is reported so callers can switch descriptors.
pub fn build_lrf(cloud: &PointCloud, region: &LocalRegion) -> Result<FrameTransform> {
    if region.member_indices.len() < 3 {
        return Err(Error::DegenerateGeometry("region has fewer than 3 members"));
    }
    build_frame(&cloud.select(&region.member_indices), XAxisPolicy::Strict)
}

pub fn normalize_to_frame(cloud: &PointCloud, frame: &FrameTransform) -> PointCloud {
    frame.normalize(cloud)
}

pub fn denormalize_from_frame(cloud: &PointCloud, frame: &FrameTransform) -> PointCloud {
    frame.denormalize(cloud)
}

/// Regions around every point of `cloud`.
pub fn local_regions(cloud: &PointCloud, cfg: &FrameConfig) -> Vec<LocalRegion> {
    let centers: Vec<usize> = (0..cloud.len()).collect();
    local_regions_at(cloud, &KdTree::new(cloud.points()), &centers, cfg)
}

/// Regions around the given center indices, searching the whole cloud.
pub fn local_regions_at(
    cloud: &PointCloud,
    tree: &KdTree,
    centers: &[usize],
    cfg: &FrameConfig,
) -> Vec<LocalRegion> {
    let r = cfg.radius_for(cloud);
    let r_sq = r * r;
    let k = cfg.n_neighbors.min(cloud.len());
    centers
        .par_iter()
        .map(|&ci| {
            let neighbors = tree.knn(&cloud.points()[ci], k);
            let inside: Vec<usize> = neighbors
                .iter()
                .filter(|n| n.dist_sq <= r_sq)
                .map(|n| n.index)
                .collect();
            if inside.len() >= 3 || inside.len() == neighbors.len() {
                LocalRegion {
                    center_index: ci,
                    member_indices: inside,
                    knn_fallback: false,
                }
            } else {
                LocalRegion {
                    center_index: ci,
                    member_indices: neighbors.iter().take(3).map(|n| n.index).collect(),
                    knn_fallback: true,
                }
            }
        })
        .collect()
}

/// LRF for each region; `Err` entries mark degenerate neighborhoods.
pub fn build_lrfs(cloud: &PointCloud, regions: &[LocalRegion]) -> Vec<Result<FrameTransform>> {
    regions.par_iter().map(|r| build_lrf(cloud, r)).collect()
}

/// Each region's members expressed in its own LRF (centroid 0, radius 1).
/// Degenerate frames yield `None`.
pub fn lrf_normalize(
    cloud: &PointCloud,
    regions: &[LocalRegion],
    frames: &[Result<FrameTransform>],
) -> Vec<Option<Vec<Point3>>> {
    regions
        .par_iter()
        .zip(frames.par_iter())
        .map(|(region, frame)| {
            frame.as_ref().ok().map(|f| {
                region
                    .member_indices
                    .iter()
                    .map(|&i| f.normalize_point(&cloud.points()[i]))
                    .collect()
            })
        })
        .collect()
}
