use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

const SO3_TOL: f64 = 1e-9;

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("rotation has non-finite entries"));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > SO3_TOL || (r.determinant() - 1.0).abs() > SO3_TOL {
        return Err(Error::invalid("rotation is not in SO(3)"));
    }
    Ok(())
}

/// Rigid motion `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation has non-finite entries"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self {
            rotation: rot.into_inner(),
            translation,
        }
    }

    /// Uniformly distributed rotation with a translation drawn uniformly
    /// from the ball of radius `max_translation`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_translation: f64) -> Self {
        let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let rotation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q))
            .to_rotation_matrix()
            .into_inner();
        Self {
            rotation,
            translation: random_in_ball(rng) * max_translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Transforms points, and rotates normals when present.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud.points().iter().map(|p| self.apply_point(p)).collect();
        let normals = cloud
            .normals()
            .map(|ns| ns.iter().map(|n| (self.rotation * n).normalize()).collect());
        PointCloud::from_parts_unchecked(points, normals)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic angle of the rotation part, in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        rows(&self.rotation)
    }
}

pub(crate) fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub(crate) fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

pub(crate) fn random_in_ball<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// 7DoF similarity frame `{R, t, s}`. Normalizing maps `q ↦ Rᵀ(q − t)/s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

impl FrameTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        check_rotation(&rotation)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::ZeroScale);
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation has non-finite entries"));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub(crate) fn from_parts_unchecked(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Self {
        Self {
            rotation,
            translation,
            scale,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn normalize_point(&self, q: &Point3) -> Point3 {
        self.rotation.tr_mul(&(q - self.translation)) / self.scale
    }

    pub fn denormalize_point(&self, x: &Point3) -> Point3 {
        self.rotation * (x * self.scale) + self.translation
    }

    pub fn normalize(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points()
            .iter()
            .map(|q| self.normalize_point(q))
            .collect();
        let normals = cloud
            .normals()
            .map(|ns| ns.iter().map(|n| self.rotation.tr_mul(n)).collect());
        PointCloud::from_parts_unchecked(points, normals)
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points()
            .iter()
            .map(|x| self.denormalize_point(x))
            .collect();
        let normals = cloud
            .normals()
            .map(|ns| ns.iter().map(|n| self.rotation * n).collect());
        PointCloud::from_parts_unchecked(points, normals)
    }
}

/// JSON form shared by rigid and similarity frames.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FrameJson {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scale: Option<f64>,
}

impl From<&FrameTransform> for FrameJson {
    fn from(f: &FrameTransform) -> Self {
        FrameJson {
            rotation: rows(&f.rotation),
            translation: f.translation.into(),
            scale: Some(f.scale),
        }
    }
}

impl TryFrom<&FrameJson> for FrameTransform {
    type Error = Error;

    fn try_from(j: &FrameJson) -> Result<Self> {
        let scale = j
            .scale
            .ok_or_else(|| Error::invalid("frame JSON is missing `scale`"))?;
        FrameTransform::new(from_rows(&j.rotation), j.translation.into(), scale)
    }
}

impl From<&RigidTransform> for FrameJson {
    fn from(t: &RigidTransform) -> Self {
        FrameJson {
            rotation: rows(&t.rotation),
            translation: t.translation.into(),
            scale: None,
        }
    }
}

impl TryFrom<&FrameJson> for RigidTransform {
    type Error = Error;

    fn try_from(j: &FrameJson) -> Result<Self> {
        RigidTransform::new(from_rows(&j.rotation), j.translation.into())
    }
}

impl Serialize for FrameTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FrameJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for FrameTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = FrameJson::deserialize(d)?;
        FrameTransform::try_from(&j).map_err(serde::de::Error::custom)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FrameJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = FrameJson::deserialize(d)?;
        RigidTransform::try_from(&j).map_err(serde::de::Error::custom)
    }
}
