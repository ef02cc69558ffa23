//! Foundational 3D types: point clouds, rigid and similarity transforms,
//! camera intrinsics, depth maps, masks, and the small numerical kernels
//! (centroid, radius, covariance, 3×3 symmetric eigen-decomposition,
//! depth back-projection) the rest of the crate is built on.

mod eigen;
mod transform;

pub use eigen::{symmetric_eigen3, SymmetricEigen3};
pub use transform::{FrameTransform, FrameJson, RigidTransform};
pub(crate) use transform::{random_in_ball, random_unit};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// A 3D point in meters (or normalized frame units once normalized).
pub type Point3 = Vector3<f64>;

const NORMAL_UNIT_TOL: f64 = 1e-6;

/// Ordered, non-empty list of 3D points with optional unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point3>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        if normals.len() != cloud.points.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.points.len(),
                found: normals.len(),
            });
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > NORMAL_UNIT_TOL)
        {
            return Err(Error::invalid(format!("normal {i} is not unit length")));
        }
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<Point3>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Self {
        debug_assert!(!points.is_empty());
        Self { points, normals }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false: clouds are non-empty by construction.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn without_normals(&self) -> PointCloud {
        Self::from_parts_unchecked(self.points.clone(), None)
    }

    /// Sub-cloud in the order of `indices`. Panics if `indices` is empty or out of range.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        assert!(!indices.is_empty(), "cannot select an empty sub-cloud");
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i]).collect());
        Self::from_parts_unchecked(points, normals)
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("focal lengths must be positive and finite"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Pixel coordinates of a camera-frame point. `z` must be non-zero.
    pub fn project(&self, p: &Point3) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }
}

/// Row-major depth image in meters; 0 marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("depth map dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("depth values must be finite and non-negative"));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn at(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn centroid(cloud: &PointCloud) -> Point3 {
    let sum = cloud
        .points()
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p);
    sum / cloud.len() as f64
}

/// Largest distance from `center` to any point of the cloud.
pub fn radius(cloud: &PointCloud, center: &Point3) -> f64 {
    cloud
        .points()
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max)
}

/// Population covariance `(1/N) Σ q qᵀ − c cᵀ`.
///
/// Accumulated about the first point so that clouds far from the origin keep
/// their precision; the result is exactly symmetric.
pub fn covariance(cloud: &PointCloud) -> Matrix3<f64> {
    let pts = cloud.points();
    let anchor = pts[0];
    let n = pts.len() as f64;
    let mut second = Matrix3::zeros();
    let mut first = Vector3::zeros();
    for p in pts {
        let d = p - anchor;
        second += d * d.transpose();
        first += d;
    }
    let mean = first / n;
    let mut cov = second / n - mean * mean.transpose();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    cov
}

/// Lifts every masked pixel with positive depth to a camera-frame point, in
/// row-major scan order. The mask is treated as the crop; intrinsics are the
/// full-image ones.
pub fn back_project(
    depth: &DepthMap,
    mask: &BinaryMask,
    k: &CameraIntrinsics,
) -> Result<PointCloud> {
    if mask.width() != depth.width() || mask.height() != depth.height() {
        return Err(Error::DimensionMismatch {
            expected: depth.width() * depth.height(),
            found: mask.width() * mask.height(),
        });
    }
    let mut points = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let d = depth.at(u, v);
            if d > 0.0 && mask.at(u, v) {
                points.push(Vector3::new(
                    d * (u as f64 - k.cx) / k.fx,
                    d * (v as f64 - k.cy) / k.fy,
                    d,
                ));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(PointCloud::from_parts_unchecked(points, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-spread..spread),
                        rng.random_range(-spread..spread),
                        rng.random_range(-spread..spread),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_and_non_finite_clouds_rejected() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyCloud)));
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
        let pts = vec![Vector3::zeros()];
        assert!(PointCloud::with_normals(pts.clone(), vec![Vector3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(pts, vec![Vector3::z()]).is_ok());
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&cloud(&[[1.0, 2.0, 3.0]])), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(centroid(&cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])), Vector3::zeros());
        let c = centroid(&cloud(&[
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 2.0],
        ]));
        assert_eq!(c, Vector3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn radius_examples() {
        assert_eq!(radius(&cloud(&[[0.0, 0.0, 0.0]]), &Vector3::zeros()), 0.0);
        assert_eq!(
            radius(&cloud(&[[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]]), &Vector3::zeros()),
            4.0
        );
    }

    #[test]
    fn radius_matches_linear_scan_on_scaled_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point3> = (0..100)
            .map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0f64),
                );
                v.normalize() * 2.5
            })
            .collect();
        let c = cloud(&pts.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>());
        let center = centroid(&c);
        let mut oracle = 0.0f64;
        for p in &pts {
            let d = ((p.x - center.x).powi(2) + (p.y - center.y).powi(2) + (p.z - center.z).powi(2))
                .sqrt();
            oracle = oracle.max(d);
        }
        assert!((radius(&c, &center) - oracle).abs() < 1e-12);
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(covariance(&cloud(&[[4.0, 5.0, 6.0]])), Matrix3::zeros());
        let cov = covariance(&cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]));
        assert!((cov - Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0))).norm() < 1e-15);
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = random_cloud(&mut rng, 50, 3.0);
            let pts = c.points();
            let n = pts.len() as f64;
            let mut mean = [0.0; 3];
            for p in pts {
                for k in 0..3 {
                    mean[k] += p[k] / n;
                }
            }
            let mut oracle = [[0.0; 3]; 3];
            for p in pts {
                for a in 0..3 {
                    for b in 0..3 {
                        oracle[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
                    }
                }
            }
            let cov = covariance(&c);
            for a in 0..3 {
                for b in 0..3 {
                    assert!((cov[(a, b)] - oracle[a][b]).abs() < 1e-10);
                }
            }
            assert_eq!(cov, cov.transpose());
            let eig = symmetric_eigen3(&cov);
            assert!(eig.values[0] > -1e-9);
        }
    }

    #[test]
    fn centroid_translation_equivariant_and_radius_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 40, 1.0);
        let shift = Vector3::new(0.3, -2.0, 5.0);
        let shifted = PointCloud::new(c.points().iter().map(|p| p + shift).collect()).unwrap();
        assert!((centroid(&shifted) - (centroid(&c) + shift)).norm() < 1e-10);

        let t = RigidTransform::random(&mut rng, 0.0);
        let rotated = t.apply(&c);
        let r0 = radius(&c, &centroid(&c));
        let r1 = radius(&rotated, &centroid(&rotated));
        assert!((r0 - r1).abs() < 1e-10);
    }

    #[test]
    fn covariance_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_cloud(&mut rng, 30, 2.0);
        let t = RigidTransform::random(&mut rng, 1.0);
        let r = t.rotation();
        let lhs = covariance(&t.apply(&c));
        let rhs = r * covariance(&c) * r.transpose();
        assert!((lhs - rhs).abs().max() < 1e-9);
    }

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn back_project_principal_point_and_offset() {
        let k = intrinsics();
        let mut values = vec![0.0; 200 * 100];
        values[50 * 200 + 50] = 2.0;
        values[50 * 200 + 150] = 1.0;
        let depth = DepthMap::new(200, 100, values).unwrap();
        let mask = BinaryMask::filled(200, 100, true).unwrap();
        let cloud = back_project(&depth, &mask, &k).unwrap();
        assert_eq!(cloud.points(), &[Vector3::new(0.0, 0.0, 2.0), Vector3::new(1.0, 0.0, 1.0)]);
    }

    #[test]
    fn back_project_plane_and_reprojection() {
        let k = intrinsics();
        let depth = DepthMap::new(8, 8, vec![1.5; 64]).unwrap();
        let mut mask = BinaryMask::filled(8, 8, false).unwrap();
        for v in 2..6 {
            for u in 1..7 {
                mask.set(u, v, true);
            }
        }
        let cloud = back_project(&depth, &mask, &k).unwrap();
        assert_eq!(cloud.len(), 24);
        let mut idx = 0;
        for v in 2..6 {
            for u in 1..7 {
                let p = cloud.points()[idx];
                assert!((p.z - 1.5).abs() < 1e-12);
                let (pu, pv) = k.project(&p);
                assert!((pu - u as f64).abs() < 1e-9 && (pv - v as f64).abs() < 1e-9);
                idx += 1;
            }
        }
    }

    #[test]
    fn back_project_errors() {
        let k = intrinsics();
        let depth = DepthMap::new(4, 4, vec![0.0; 16]).unwrap();
        let mask = BinaryMask::filled(4, 4, true).unwrap();
        assert!(matches!(back_project(&depth, &mask, &k), Err(Error::EmptySelection)));
        let small = BinaryMask::filled(2, 2, true).unwrap();
        assert!(matches!(
            back_project(&depth, &small, &k),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(DepthMap::new(2, 2, vec![1.0, -1.0, 0.0, 0.0]).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }
}
