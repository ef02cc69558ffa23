//! Pose error metrics.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PointCloud, RigidTransform};

/// Geodesic angle between the two rotations, in degrees.
pub fn rotation_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
    rotation_error_rad(a, b).to_degrees()
}

/// Geodesic angle in radians. Uses `atan2(sin, cos)` so angles near 0 and
/// 180° keep full precision.
pub fn rotation_error_rad(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let m = a.rotation().transpose() * b.rotation();
    let cos = (m.trace() - 1.0) / 2.0;
    let axis = nalgebra::Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (axis.norm() / 2.0).atan2(cos)
}

pub fn translation_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.translation() - b.translation()).norm()
}

/// Object symmetries in model coordinates. Identity is always present.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrySet {
    transforms: Vec<RigidTransform>,
}

impl Default for SymmetrySet {
    fn default() -> Self {
        Self {
            transforms: vec![RigidTransform::identity()],
        }
    }
}

impl SymmetrySet {
    pub fn new(mut transforms: Vec<RigidTransform>) -> Self {
        let has_identity = transforms.iter().any(|t| {
            (t.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-12
                && t.translation().norm() < 1e-12
        });
        if !has_identity {
            transforms.insert(0, RigidTransform::identity());
        }
        Self { transforms }
    }

    pub fn transforms(&self) -> &[RigidTransform] {
        &self.transforms
    }
}

fn min_over_symmetries(sym: &SymmetrySet, per_symmetry: impl Fn(&RigidTransform) -> f64) -> f64 {
    sym.transforms
        .iter()
        .map(per_symmetry)
        .fold(f64::INFINITY, f64::min)
}

/// Maximum symmetry-aware surface distance:
/// `min_S max_x ‖T̂(x) − T_gt(S(x))‖`.
pub fn mssd(
    estimate: &RigidTransform,
    gt: &RigidTransform,
    model: &PointCloud,
    sym: &SymmetrySet,
) -> f64 {
    min_over_symmetries(sym, |s| {
        model
            .points()
            .iter()
            .map(|x| (estimate.apply_point(x) - gt.apply_point(&s.apply_point(x))).norm())
            .fold(0.0, f64::max)
    })
}

/// Maximum symmetry-aware projection distance in pixels. Points must lie in
/// front of the camera under both poses.
pub fn mspd(
    estimate: &RigidTransform,
    gt: &RigidTransform,
    model: &PointCloud,
    sym: &SymmetrySet,
    k: &CameraIntrinsics,
) -> Result<f64> {
    let in_front = |t: &RigidTransform| model.points().iter().all(|x| t.apply_point(x).z > 0.0);
    if !in_front(estimate) || !in_front(gt) {
        return Err(Error::invalid("model projects from behind the camera"));
    }
    Ok(min_over_symmetries(sym, |s| {
        model
            .points()
            .iter()
            .map(|x| {
                let (u0, v0) = k.project(&estimate.apply_point(x));
                let (u1, v1) = k.project(&gt.apply_point(&s.apply_point(x)));
                (u0 - u1).hypot(v0 - v1)
            })
            .fold(0.0, f64::max)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use nalgebra::UnitQuaternion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rotation_error_examples() {
        let a = RigidTransform::identity();
        assert_eq!(rotation_error(&a, &a), 0.0);
        let flip = RigidTransform::from_axis_angle(&Point3::z(), std::f64::consts::PI, Point3::zeros());
        assert!((rotation_error(&a, &flip) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn tiny_angles_keep_precision() {
        let a = RigidTransform::identity();
        let b = RigidTransform::from_axis_angle(&Point3::y(), 1e-11, Point3::zeros());
        assert!((rotation_error_rad(&a, &b) - 1e-11).abs() < 1e-20);
    }

    #[test]
    fn rotation_error_matches_quaternion_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = RigidTransform::random(&mut rng, 1.0);
            let b = RigidTransform::random(&mut rng, 1.0);
            let qa = UnitQuaternion::from_matrix(a.rotation());
            let qb = UnitQuaternion::from_matrix(b.rotation());
            let dot = qa.coords.dot(&qb.coords).abs().min(1.0);
            let oracle = (2.0 * dot.acos()).to_degrees();
            assert!((rotation_error(&a, &b) - oracle).abs() < 1e-9);
        }
    }

    fn model() -> PointCloud {
        PointCloud::new(vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 0.5, 0.0),
            Point3::new(0.0, -0.5, 0.0),
            Point3::new(0.0, 0.0, 0.2),
            Point3::new(0.0, 0.0, -0.2),
        ])
        .unwrap()
    }

    #[test]
    fn mssd_examples() {
        let m = model();
        let sym = SymmetrySet::default();
        let gt = RigidTransform::from_axis_angle(&Point3::y(), 0.3, Point3::new(0.0, 0.0, 3.0));
        assert_eq!(mssd(&gt, &gt, &m, &sym), 0.0);
        let off = RigidTransform::new(*gt.rotation(), gt.translation() + Point3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((mssd(&off, &gt, &m, &sym) - 1.0).abs() < 1e-12);

        let single = PointCloud::new(vec![Point3::new(0.3, -0.2, 0.7)]).unwrap();
        let est = RigidTransform::from_axis_angle(&Point3::x(), 0.2, Point3::new(0.1, 0.0, 3.0));
        let expected = (est.apply_point(&single.points()[0]) - gt.apply_point(&single.points()[0])).norm();
        assert_eq!(mssd(&est, &gt, &single, &sym), expected);
    }

    #[test]
    fn symmetric_estimate_has_zero_mssd() {
        let m = model();
        let half_turn = RigidTransform::from_axis_angle(&Point3::z(), std::f64::consts::PI, Point3::zeros());
        let sym = SymmetrySet::new(vec![half_turn]);
        assert_eq!(sym.transforms().len(), 2);
        let gt = RigidTransform::from_axis_angle(&Point3::new(1.0, 2.0, 0.5), 0.7, Point3::new(0.0, 0.0, 4.0));
        let est = gt.compose(&half_turn);
        assert!(mssd(&est, &gt, &m, &sym) < 1e-9);
        assert!(mssd(&est, &gt, &m, &SymmetrySet::default()) > 1.0);
        let k = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0).unwrap();
        assert!(mspd(&est, &gt, &m, &sym, &k).unwrap() < 1e-6);
        assert!(mspd(&est, &gt, &m, &SymmetrySet::default(), &k).unwrap() > 10.0);
    }
}
