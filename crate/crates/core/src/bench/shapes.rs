//! Seeded synthetic surfaces with outward normals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_unit, Point3, PointCloud};

pub const MIN_POINTS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// `Σ |xᵢ/aᵢ|^(2/e) = 1`; exponent 1 is an ellipsoid.
    Superellipsoid,
    /// Half-extents `axes`.
    Box,
    /// Radius `axes[0]`, half-height `axes[2]`, axis along z.
    Cylinder,
    /// Ellipsoid with seeded Gaussian bumps; has no symmetries.
    Composite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub axes: [f64; 3],
    pub exponent: f64,
    pub bumps: usize,
    pub bump_height: f64,
    pub bump_width: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        Self {
            kind: ShapeKind::Composite,
            axes: [1.0, 0.75, 0.5],
            exponent: 1.0,
            bumps: 6,
            bump_height: 0.3,
            bump_width: 0.35,
            points: 2000,
            seed: 0,
        }
    }
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < MIN_POINTS {
            return Err(Error::config("points", format!("must be at least {MIN_POINTS}")));
        }
        if self.axes.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::config("axes", "must be positive"));
        }
        if !(self.exponent > 0.0 && self.exponent <= 2.0) {
            return Err(Error::config("exponent", "must lie in (0, 2]"));
        }
        if !(self.bump_width > 0.0) || self.bump_height < 0.0 {
            return Err(Error::config("bump_width", "bump width must be positive and height non-negative"));
        }
        Ok(())
    }
}

fn superellipsoid_radius(u: &Point3, axes: &[f64; 3], e: f64) -> f64 {
    let f: f64 = (0..3).map(|i| (u[i] / axes[i]).abs().powf(2.0 / e)).sum();
    f.powf(-e / 2.0)
}

fn superellipsoid_normal(x: &Point3, axes: &[f64; 3], e: f64) -> Point3 {
    let g = Point3::from_fn(|i, _| {
        let r = x[i] / axes[i];
        r.abs().powf(2.0 / e - 1.0) * r.signum() / axes[i]
    });
    g.normalize()
}

struct Bump {
    dir: Point3,
    height: f64,
}

/// Star-shaped surface `r(u)·u` for unit directions `u`.
struct Composite {
    axes: [f64; 3],
    bumps: Vec<Bump>,
    width_sq: f64,
}

impl Composite {
    fn radius(&self, u: &Point3) -> f64 {
        let base = superellipsoid_radius(u, &self.axes, 1.0);
        let lift: f64 = self
            .bumps
            .iter()
            .map(|b| b.height * (-(1.0 - u.dot(&b.dir)) / self.width_sq).exp())
            .sum();
        base * (1.0 + lift)
    }

    fn point(&self, u: &Point3) -> Point3 {
        u * self.radius(u)
    }

    /// Central-difference normal of the radial map.
    fn normal(&self, u: &Point3) -> Point3 {
        let helper = if u.x.abs() < 0.9 { Point3::x() } else { Point3::y() };
        let e1 = u.cross(&helper).normalize();
        let e2 = u.cross(&e1);
        let h = 1e-5;
        let at = |v: Point3| self.point(&v.normalize());
        let t1 = at(u + e1 * h) - at(u - e1 * h);
        let t2 = at(u + e2 * h) - at(u - e2 * h);
        let n = t1.cross(&t2).normalize();
        if n.dot(u) < 0.0 {
            -n
        } else {
            n
        }
    }
}

/// Surface samples with outward unit normals, deterministic in the spec.
pub fn generate_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.points;
    let a = spec.axes;
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    match spec.kind {
        ShapeKind::Superellipsoid => {
            for _ in 0..n {
                let u = random_unit(&mut rng);
                let x = u * superellipsoid_radius(&u, &a, spec.exponent);
                normals.push(superellipsoid_normal(&x, &a, spec.exponent));
                points.push(x);
            }
        }
        ShapeKind::Box => {
            let areas = [a[1] * a[2], a[0] * a[2], a[0] * a[1]];
            let total: f64 = areas.iter().sum();
            for _ in 0..n {
                let pick = rng.random_range(0.0..total);
                let axis = if pick < areas[0] {
                    0
                } else if pick < areas[0] + areas[1] {
                    1
                } else {
                    2
                };
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut x = Point3::from_fn(|i, _| rng.random_range(-a[i]..=a[i]));
                x[axis] = sign * a[axis];
                let mut nrm = Point3::zeros();
                nrm[axis] = sign;
                points.push(x);
                normals.push(nrm);
            }
        }
        ShapeKind::Cylinder => {
            let (r, h) = (a[0], a[2]);
            let side = 2.0 * std::f64::consts::PI * r * 2.0 * h;
            let caps = 2.0 * std::f64::consts::PI * r * r;
            for _ in 0..n {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random_range(0.0..side + caps) < side {
                    let z = rng.random_range(-h..=h);
                    points.push(Point3::new(r * theta.cos(), r * theta.sin(), z));
                    normals.push(Point3::new(theta.cos(), theta.sin(), 0.0));
                } else {
                    let rho = r * rng.random_range(0.0f64..1.0).sqrt();
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    points.push(Point3::new(rho * theta.cos(), rho * theta.sin(), sign * h));
                    normals.push(Point3::new(0.0, 0.0, sign));
                }
            }
        }
        ShapeKind::Composite => {
            let bumps = (0..spec.bumps)
                .map(|_| Bump {
                    dir: random_unit(&mut rng),
                    height: spec.bump_height * rng.random_range(0.5..1.0),
                })
                .collect();
            let shape = Composite {
                axes: a,
                bumps,
                width_sq: spec.bump_width * spec.bump_width,
            };
            for _ in 0..n {
                let u = random_unit(&mut rng);
                points.push(shape.point(&u));
                normals.push(shape.normal(&u));
            }
        }
    }
    PointCloud::with_normals(points, normals)
}
