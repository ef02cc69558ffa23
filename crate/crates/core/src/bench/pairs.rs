//! Two-view benchmark pairs with a known relative pose.
//!
//! The model is placed at a random orientation about the reference camera
//! origin. The query camera sees the same model points moved by the inverse
//! of the ground-truth pose, so `gt` maps query coordinates onto reference
//! coordinates. Visibility is orthographic back-face culling along +z.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bench::shapes::{generate_shape, ShapeSpec};
use crate::error::{Error, Result};
use crate::geometry::{centroid, radius, random_in_ball, random_unit, Point3, PointCloud, RigidTransform};
use crate::matching::overlap_ratio;

/// Indices of the points visible along `view_dir`, minus the given fraction
/// of them lying farthest toward a random occluding half-plane.
pub fn visible_indices<R: Rng + ?Sized>(
    cloud: &PointCloud,
    view_dir: &Point3,
    occlusion_fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::invalid("visibility culling needs normals"))?;
    let mut keep: Vec<usize> = normals
        .iter()
        .enumerate()
        .filter(|(_, n)| n.dot(&-view_dir) > 0.0)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyView);
    }
    if occlusion_fraction > 0.0 {
        let side = random_unit(rng);
        let side = (side - view_dir * view_dir.dot(&side)).normalize();
        let pts = cloud.points();
        keep.sort_by(|&a, &b| side.dot(&pts[b]).total_cmp(&side.dot(&pts[a])).then(a.cmp(&b)));
        let remove = ((occlusion_fraction * keep.len() as f64).floor() as usize).min(keep.len() - 1);
        keep.drain(..remove);
        keep.sort_unstable();
    }
    Ok(keep)
}

/// Single-view visible subset of `cloud`.
pub fn partial_view<R: Rng + ?Sized>(
    cloud: &PointCloud,
    view_dir: &Point3,
    occlusion_fraction: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    Ok(cloud.select(&visible_indices(cloud, view_dir, occlusion_fraction, rng)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    /// Geodesic rotation distance range in degrees.
    pub rot_bin: [f64; 2],
    /// Gaussian noise standard deviation as a fraction of the model radius.
    pub noise_sigma: f64,
    /// Uniform outliers added, as a fraction of each view's point count.
    pub outlier_fraction: f64,
    pub occlusion_fraction: f64,
    /// When false both views contain every model point.
    pub partial_views: bool,
    /// Overlap distance as a fraction of the model radius.
    pub overlap_delta: f64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            rot_bin: [0.0, 0.0],
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            occlusion_fraction: 0.0,
            partial_views: true,
            overlap_delta: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkPair {
    pub query: PointCloud,
    pub reference: PointCloud,
    pub gt: RigidTransform,
    pub rotation_distance_deg: f64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Overlap of the noise-free views.
    pub overlap_ratio: f64,
    /// The full model in reference camera coordinates.
    pub model: PointCloud,
    /// Model radius about its centroid.
    pub radius: f64,
}

fn finish_view<R: Rng + ?Sized>(
    clean: &PointCloud,
    sigma: f64,
    outlier_fraction: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pts: Vec<Point3> = clean
        .points()
        .iter()
        .map(|p| {
            if sigma > 0.0 {
                p + Point3::from_fn(|_, _| noise.sample(rng))
            } else {
                *p
            }
        })
        .collect();
    let n_out = (outlier_fraction * pts.len() as f64).round() as usize;
    if n_out > 0 {
        let (lo, hi) = pts.iter().fold(
            (Point3::repeat(f64::INFINITY), Point3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        for _ in 0..n_out {
            pts.push(Point3::from_fn(|i, _| {
                if hi[i] > lo[i] {
                    rng.random_range(lo[i]..=hi[i])
                } else {
                    lo[i]
                }
            }));
        }
    }
    PointCloud::new(pts)
}

pub fn make_pair(shape: &ShapeSpec, spec: &PairSpec, seed: u64) -> Result<BenchmarkPair> {
    let [lo, hi] = spec.rot_bin;
    if !(0.0 <= lo && lo <= hi && hi <= 180.0) {
        return Err(Error::config("rot_bin", "must satisfy 0 <= lo <= hi <= 180"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = generate_shape(shape)?;
    let r = radius(&model, &centroid(&model));

    let placement = RigidTransform::random(&mut rng, 0.0);
    let reference_full = placement.apply(&model);
    let angle = lo + rng.random::<f64>() * (hi - lo);
    let axis = random_unit(&mut rng);
    let gt = RigidTransform::from_axis_angle(&axis, angle.to_radians(), random_in_ball(&mut rng) * (0.5 * r));
    let query_full = gt.inverse().apply(&reference_full);

    let view = Point3::z();
    let (q_clean, p_clean) = if spec.partial_views {
        (
            partial_view(&query_full, &view, spec.occlusion_fraction, &mut rng)?,
            partial_view(&reference_full, &view, spec.occlusion_fraction, &mut rng)?,
        )
    } else {
        (query_full.without_normals(), reference_full.without_normals())
    };
    let overlap = overlap_ratio(&q_clean, &p_clean, &gt, spec.overlap_delta * r);
    let query = finish_view(&q_clean, spec.noise_sigma * r, spec.outlier_fraction, &mut rng)?;
    let reference = finish_view(&p_clean, spec.noise_sigma * r, spec.outlier_fraction, &mut rng)?;
    Ok(BenchmarkPair {
        query,
        reference,
        rotation_distance_deg: gt.rotation_angle().to_degrees(),
        gt,
        noise_sigma: spec.noise_sigma,
        outlier_fraction: spec.outlier_fraction,
        overlap_ratio: overlap,
        model: reference_full.without_normals(),
        radius: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::shapes::ShapeKind;

    #[test]
    fn zero_bin_gives_identity_rotation() {
        let pair = make_pair(&ShapeSpec::default(), &PairSpec::default(), 3).unwrap();
        assert_eq!(pair.rotation_distance_deg, 0.0);
        assert!((pair.gt.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn full_clean_views_overlap_completely() {
        let spec = PairSpec {
            rot_bin: [30.0, 60.0],
            partial_views: false,
            ..PairSpec::default()
        };
        let pair = make_pair(&ShapeSpec::default(), &spec, 5).unwrap();
        assert_eq!(pair.overlap_ratio, 1.0);
        assert_eq!(pair.query.len(), pair.reference.len());
    }

    #[test]
    fn rotation_distances_stay_in_bin() {
        let shape = ShapeSpec {
            points: 200,
            ..ShapeSpec::new(ShapeKind::Superellipsoid)
        };
        let spec = PairSpec {
            rot_bin: [40.0, 50.0],
            ..PairSpec::default()
        };
        for seed in 0..200 {
            let pair = make_pair(&shape, &spec, seed).unwrap();
            let recomputed = ((pair.gt.rotation().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            assert!((40.0 - 1e-9..=50.0 + 1e-9).contains(&recomputed));
            assert!((recomputed - pair.rotation_distance_deg).abs() < 1e-6);
        }
    }

    #[test]
    fn culling_keeps_front_faces_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = generate_shape(&ShapeSpec::new(ShapeKind::Box)).unwrap();
        let idx = visible_indices(&cloud, &Point3::z(), 0.0, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| cloud.normals().unwrap()[i].z < 0.0));
        let fewer = visible_indices(&cloud, &Point3::z(), 0.3, &mut rng).unwrap();
        assert_eq!(fewer.len(), idx.len() - (0.3 * idx.len() as f64).floor() as usize);
    }

    #[test]
    fn culling_everything_is_an_error() {
        let cloud = PointCloud::with_normals(vec![Point3::zeros(); 3], vec![Point3::z(); 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            partial_view(&cloud, &Point3::z(), 0.0, &mut rng),
            Err(Error::EmptyView)
        ));
    }

    #[test]
    fn noise_and_outliers_change_counts() {
        let spec = PairSpec {
            rot_bin: [10.0, 20.0],
            noise_sigma: 0.01,
            outlier_fraction: 0.1,
            ..PairSpec::default()
        };
        let a = make_pair(&ShapeSpec::default(), &spec, 11).unwrap();
        let clean = make_pair(
            &ShapeSpec::default(),
            &PairSpec {
                noise_sigma: 0.0,
                outlier_fraction: 0.0,
                ..spec.clone()
            },
            11,
        )
        .unwrap();
        assert!(a.query.len() > clean.query.len());
        assert_eq!(a.overlap_ratio, clean.overlap_ratio);
        assert_eq!(a, make_pair(&ShapeSpec::default(), &spec, 11).unwrap());
    }
}
