//! Per-point and global descriptor providers.
//!
//! A provider receives the GRF-normalized cloud together with precomputed
//! local regions and their LRF-normalized member sets, and returns one row
//! per region. Built-in providers:
//!
//! - `occupancy` (default): hard 4×4×4 occupancy grid over `[-1, 1]³`.
//! - `local_shape`: soft-binned occupancy plus an 8×8 histogram of
//!   (distance from the LRF axis, height along it). The second part ignores
//!   the in-plane axis, the least stable part of a frame on noisy data.
//! - `file`: replays externally computed features.
//!
//! Regions whose LRF is degenerate get a 16-bin radial distance histogram.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::LocalRegion;
use crate::geometry::{Point3, PointCloud};
use crate::io;

pub const DEFAULT_DIM: usize = 256;
const GRID: usize = 4;
const OCCUPANCY_DIM: usize = GRID * GRID * GRID;
const CYL_RINGS: usize = 8;
const CYL_LAYERS: usize = 8;
const RADIAL_BINS: usize = 16;

/// Dense feature matrix, one row per point. When `has_background` is set,
/// row 0 is the background token and point `i` lives in row `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    data: DMatrix<f64>,
    has_background: bool,
}

impl FeatureSet {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix has non-finite entries"));
        }
        Ok(Self {
            data,
            has_background: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn has_background(&self) -> bool {
        self.has_background
    }

    /// Number of rows including the background row, if any.
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Number of point rows.
    pub fn points(&self) -> usize {
        self.data.nrows() - usize::from(self.has_background)
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    /// Prepends the background token: the first basis direction.
    pub fn with_background(&self) -> FeatureSet {
        if self.has_background {
            return self.clone();
        }
        let (n, d) = self.data.shape();
        let data = DMatrix::from_fn(n + 1, d, |i, j| {
            if i == 0 {
                if j == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                self.data[(i - 1, j)]
            }
        });
        FeatureSet {
            data,
            has_background: true,
        }
    }

    /// Rows in the order of `indices` (point indices, background excluded).
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let off = usize::from(self.has_background);
        let data = DMatrix::from_fn(indices.len(), self.dim(), |i, j| self.data[(indices[i] + off, j)]);
        FeatureSet {
            data,
            has_background: false,
        }
    }

    /// Subtracts the mean point row of both sets from every point row and
    /// rescales rows to unit norm. Rows that vanish stay zero. Removes the
    /// component all descriptors share, which otherwise flattens the
    /// similarity spread.
    pub fn center_jointly(a: &FeatureSet, b: &FeatureSet) -> Result<(FeatureSet, FeatureSet)> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                found: b.dim(),
            });
        }
        let (oa, ob) = (usize::from(a.has_background), usize::from(b.has_background));
        let count = a.points() + b.points();
        if count == 0 {
            return Ok((a.clone(), b.clone()));
        }
        let sum = a.data.rows(oa, a.points()).row_sum() + b.data.rows(ob, b.points()).row_sum();
        let mean = sum / count as f64;
        let center = |f: &FeatureSet, off: usize| {
            let mut out = f.clone();
            for mut r in out.data.row_iter_mut().skip(off) {
                r -= &mean;
                let n = r.norm();
                if n > 0.0 {
                    r /= n;
                }
            }
            out
        };
        Ok((center(a, oa), center(b, ob)))
    }

    /// Column-wise concatenation `[a·wa | b·wb]`; row counts must agree.
    pub fn concat_weighted(a: &FeatureSet, wa: f64, b: &FeatureSet, wb: f64) -> Result<FeatureSet> {
        if a.rows() != b.rows() || a.has_background != b.has_background {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                found: b.rows(),
            });
        }
        let (da, db) = (a.dim(), b.dim());
        let data = DMatrix::from_fn(a.rows(), da + db, |i, j| {
            if j < da {
                a.data[(i, j)] * wa
            } else {
                b.data[(i, j - da)] * wb
            }
        });
        Ok(FeatureSet {
            data,
            has_background: a.has_background,
        })
    }
}

/// Which side of the pair a cloud plays; file-backed providers use it to
/// pick their source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudRole {
    Query,
    Reference,
}

pub struct DescribeInput<'a> {
    pub role: CloudRole,
    /// GRF-normalized cloud the regions index into.
    pub cloud: &'a PointCloud,
    pub regions: &'a [LocalRegion],
    /// LRF-normalized member sets, `None` where the LRF was degenerate.
    pub local_sets: &'a [Option<Vec<Point3>>],
}

pub trait DescriptorProvider: Send + Sync {
    /// One row per region, in region order.
    fn describe(&self, input: &DescribeInput<'_>) -> Result<FeatureSet>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorProviderSpec {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl Default for DescriptorProviderSpec {
    fn default() -> Self {
        Self {
            id: "occupancy".into(),
            params: BTreeMap::new(),
        }
    }
}

impl DescriptorProviderSpec {
    pub fn file(query: impl Into<PathBuf>, reference: impl Into<PathBuf>) -> Self {
        let mut params = BTreeMap::new();
        params.insert(
            "query".into(),
            serde_json::Value::String(query.into().display().to_string()),
        );
        params.insert(
            "reference".into(),
            serde_json::Value::String(reference.into().display().to_string()),
        );
        Self {
            id: "file".into(),
            params,
        }
    }

    fn dim(&self) -> Result<usize> {
        match self.params.get("dim") {
            None => Ok(DEFAULT_DIM),
            Some(v) => v
                .as_u64()
                .filter(|d| *d > 0)
                .map(|d| d as usize)
                .ok_or_else(|| Error::config("descriptor.params.dim", "must be a positive integer")),
        }
    }

    pub fn build(&self) -> Result<Box<dyn DescriptorProvider>> {
        match self.id.as_str() {
            "local_shape" => Ok(Box::new(LocalShapeDescriptor { dim: self.dim()? })),
            "occupancy" => Ok(Box::new(OccupancyDescriptor { dim: self.dim()? })),
            "file" => {
                let get = |key: &str| -> Result<PathBuf> {
                    self.params
                        .get(key)
                        .and_then(|v| v.as_str())
                        .map(PathBuf::from)
                        .ok_or_else(|| {
                            Error::config(format!("descriptor.params.{key}"), "missing feature file path")
                        })
                };
                FileDescriptor::load(&get("query")?, &get("reference")?).map(|p| Box::new(p) as _)
            }
            other => Err(Error::config(
                "descriptor.id",
                format!("unknown descriptor provider `{other}` (known: local_shape, occupancy, file)"),
            )),
        }
    }
}

/// Classical baseline built on local reference frames, tiled to `dim` and
/// scaled to unit norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalShapeDescriptor {
    pub dim: usize,
}

impl Default for LocalShapeDescriptor {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl DescriptorProvider for LocalShapeDescriptor {
    fn describe(&self, input: &DescribeInput<'_>) -> Result<FeatureSet> {
        describe_local_sets(input, self.dim, local_shape_descriptor)
    }
}

/// Hard 4×4×4 occupancy grid of the LRF-normalized neighborhood, tiled to
/// `dim` and scaled to unit norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OccupancyDescriptor {
    pub dim: usize,
}

impl Default for OccupancyDescriptor {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl DescriptorProvider for OccupancyDescriptor {
    fn describe(&self, input: &DescribeInput<'_>) -> Result<FeatureSet> {
        describe_local_sets(input, self.dim, |local, dim| tile_and_normalize(&grid_occupancy(local), dim))
    }
}

fn describe_local_sets(
    input: &DescribeInput<'_>,
    dim: usize,
    code: impl Fn(&[Point3], usize) -> Vec<f64> + Sync,
) -> Result<FeatureSet> {
    if input.regions.len() != input.local_sets.len() {
        return Err(Error::DimensionMismatch {
            expected: input.regions.len(),
            found: input.local_sets.len(),
        });
    }
    let rows: Vec<Vec<f64>> = input
        .regions
        .par_iter()
        .zip(input.local_sets.par_iter())
        .map(|(region, set)| match set {
            Some(local) => code(local, dim),
            None => radial_descriptor(input.cloud, region, dim),
        })
        .collect();
    let n = rows.len();
    FeatureSet::new(DMatrix::from_fn(n, dim, |i, j| rows[i][j]))
}

/// Member counts per cell of the 4×4×4 grid over `[-1, 1]³`; coordinates
/// on or beyond the boundary fall in the edge cell.
pub fn grid_occupancy(local: &[Point3]) -> Vec<f64> {
    let cell = |v: f64| (((v + 1.0) * 0.5 * GRID as f64).floor().max(0.0) as usize).min(GRID - 1);
    let mut hist = vec![0.0f64; OCCUPANCY_DIM];
    for p in local {
        hist[(cell(p.x) * GRID + cell(p.y)) * GRID + cell(p.z)] += 1.0;
    }
    hist
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn tile_and_normalize(base: &[f64], dim: usize) -> Vec<f64> {
    unit(base.iter().copied().cycle().take(dim).collect())
}

/// The two bins sharing a sample at `x ∈ [lo, hi]` with linear weights.
/// Bin centers sit at the middle of each of the `bins` equal cells; samples
/// beyond the outer centers go entirely to the edge bin.
fn soft_bins(x: f64, lo: f64, hi: f64, bins: usize) -> [(usize, f64); 2] {
    let c = (x.clamp(lo, hi) - lo) / (hi - lo) * bins as f64 - 0.5;
    let f = c.floor();
    let frac = c - f;
    let idx = |i: f64| i.clamp(0.0, (bins - 1) as f64) as usize;
    [(idx(f), 1.0 - frac), (idx(f + 1.0), frac)]
}

/// Soft-binned occupancy of an LRF-normalized set over the 4×4×4 grid,
/// unit norm.
pub fn occupancy_descriptor(local: &[Point3]) -> Vec<f64> {
    let mut hist = vec![0.0f64; OCCUPANCY_DIM];
    for p in local {
        let [bx, by, bz] = [0, 1, 2].map(|k| soft_bins(p[k], -1.0, 1.0, GRID));
        for (ix, wx) in bx {
            for (iy, wy) in by {
                for (iz, wz) in bz {
                    hist[(ix * GRID + iy) * GRID + iz] += wx * wy * wz;
                }
            }
        }
    }
    unit(hist)
}

/// Soft-binned histogram of (distance from the LRF z axis, height along
/// it), unit norm. Invariant to rotations of the set about z.
pub fn cylindrical_descriptor(local: &[Point3]) -> Vec<f64> {
    let mut hist = vec![0.0f64; CYL_RINGS * CYL_LAYERS];
    for p in local {
        let rho = p.x.hypot(p.y);
        for (ir, wr) in soft_bins(rho, 0.0, 1.0, CYL_RINGS) {
            for (iz, wz) in soft_bins(p.z, -1.0, 1.0, CYL_LAYERS) {
                hist[ir * CYL_LAYERS + iz] += wr * wz;
            }
        }
    }
    unit(hist)
}

/// Occupancy and cylindrical parts side by side, tiled to `dim`.
pub fn local_shape_descriptor(local: &[Point3], dim: usize) -> Vec<f64> {
    let mut base = occupancy_descriptor(local);
    base.extend(cylindrical_descriptor(local));
    tile_and_normalize(&base, dim)
}

/// Histogram of member distances to the region center, relative to the
/// farthest member. Rotation invariant with no frame needed.
pub fn radial_descriptor(cloud: &PointCloud, region: &LocalRegion, dim: usize) -> Vec<f64> {
    let pts = cloud.points();
    let c = pts[region.center_index];
    let dists: Vec<f64> = region
        .member_indices
        .iter()
        .map(|&i| (pts[i] - c).norm())
        .collect();
    let max = dists.iter().copied().fold(0.0, f64::max);
    let mut hist = [0.0f64; RADIAL_BINS];
    for d in dists {
        let bin = if max > 0.0 {
            ((d / max * RADIAL_BINS as f64) as usize).min(RADIAL_BINS - 1)
        } else {
            0
        };
        hist[bin] += 1.0;
    }
    tile_and_normalize(&hist, dim)
}

/// Feature rows loaded from disk, addressed by the region's center index.
#[derive(Clone, Debug)]
pub struct FileDescriptor {
    query: FeatureSet,
    reference: FeatureSet,
}

impl FileDescriptor {
    pub fn load(query: &Path, reference: &Path) -> Result<Self> {
        Ok(Self {
            query: io::read_feature_file(query)?,
            reference: io::read_feature_file(reference)?,
        })
    }

    pub fn from_sets(query: FeatureSet, reference: FeatureSet) -> Self {
        Self { query, reference }
    }
}

impl DescriptorProvider for FileDescriptor {
    fn describe(&self, input: &DescribeInput<'_>) -> Result<FeatureSet> {
        let source = match input.role {
            CloudRole::Query => &self.query,
            CloudRole::Reference => &self.reference,
        };
        if source.points() != input.cloud.len() {
            return Err(Error::DimensionMismatch {
                expected: input.cloud.len(),
                found: source.points(),
            });
        }
        let idx: Vec<usize> = input.regions.iter().map(|r| r.center_index).collect();
        Ok(source.select(&idx))
    }
}

/// Mean of the point descriptors, rescaled to unit norm.
pub fn describe_global(features: &FeatureSet) -> Result<DVector<f64>> {
    let off = usize::from(features.has_background());
    let rows = features.matrix().rows(off, features.points());
    if rows.nrows() == 0 {
        return Err(Error::ZeroVector);
    }
    let mean = rows.row_mean().transpose();
    let norm = mean.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(mean / norm)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Number of sinusoid frequencies per coordinate.
pub const PE_FREQUENCIES: usize = 8;
pub const PE_DIM: usize = 3 * PE_FREQUENCIES * 2;

/// Frequencies `π·√2^k`, `k = 0..8`, spanning wavelengths from 2 down to
/// about 0.18 normalized units.
pub fn pe_frequencies() -> [f64; PE_FREQUENCIES] {
    std::array::from_fn(|k| std::f64::consts::PI * 2f64.powf(k as f64 * 0.5))
}

/// Sinusoidal encoding `[sin(f·x), cos(f·x)]` per coordinate and frequency,
/// scaled so each row has unit norm. The dot product of two rows depends
/// only on the coordinate differences.
pub fn positional_encoding(cloud: &PointCloud) -> FeatureSet {
    let freqs = pe_frequencies();
    let norm = ((3 * PE_FREQUENCIES) as f64).sqrt();
    let pts = cloud.points();
    let data = DMatrix::from_fn(pts.len(), PE_DIM, |i, j| {
        let coord = j / (2 * PE_FREQUENCIES);
        let k = (j / 2) % PE_FREQUENCIES;
        let arg = freqs[k] * pts[i][coord];
        if j % 2 == 0 {
            arg.sin() / norm
        } else {
            arg.cos() / norm
        }
    });
    FeatureSet {
        data,
        has_background: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{build_lrfs, local_regions, lrf_normalize, FrameConfig};
    use crate::geometry::{RigidTransform, Point3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bumpy_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(-1.0..1.0);
                let v: f64 = rng.random_range(-1.0..1.0);
                Point3::new(u, 0.7 * v, 0.3 * (3.0 * u).sin() * (2.0 * v).cos() + 0.2 * u * u)
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn describe_with(provider: &dyn DescriptorProvider, cloud: &PointCloud) -> FeatureSet {
        let cfg = FrameConfig::default();
        let regions = local_regions(cloud, &cfg);
        let frames = build_lrfs(cloud, &regions);
        let sets = lrf_normalize(cloud, &regions, &frames);
        provider
            .describe(&DescribeInput {
                role: CloudRole::Query,
                cloud,
                regions: &regions,
                local_sets: &sets,
            })
            .unwrap()
    }

    fn describe(cloud: &PointCloud) -> FeatureSet {
        describe_with(&LocalShapeDescriptor::default(), cloud)
    }

    #[test]
    fn deterministic_and_unit_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = bumpy_cloud(&mut rng, 300);
        let a = describe(&c);
        let b = describe(&c);
        assert_eq!(a, b);
        assert_eq!(a.dim(), DEFAULT_DIM);
        for i in 0..a.rows() {
            assert!((a.row(i).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rigid_transform_preserves_descriptors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = bumpy_cloud(&mut rng, 300);
        let t = RigidTransform::random(&mut rng, 2.0);
        let a = describe(&c);
        let b = describe(&t.apply(&c));
        let diff = (a.matrix() - b.matrix()).abs().max();
        assert!(diff < 1e-6, "max diff {diff}");
    }

    #[test]
    fn hard_grid_is_invariant_away_from_cell_walls() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = bumpy_cloud(&mut rng, 300);
        let t = RigidTransform::random(&mut rng, 2.0);
        let a = describe_with(&OccupancyDescriptor::default(), &c);
        let b = describe_with(&OccupancyDescriptor::default(), &t.apply(&c));
        // a member sitting on a cell wall may land on either side
        let same = (0..a.rows())
            .filter(|&i| (a.row(i) - b.row(i)).abs().max() < 1e-6)
            .count();
        assert!(same * 50 >= a.rows() * 49, "{same} of {}", a.rows());
    }

    #[test]
    fn permutation_permutes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = bumpy_cloud(&mut rng, 200);
        let mut perm: Vec<usize> = (0..c.len()).collect();
        perm.reverse();
        let a = describe(&c);
        let b = describe(&c.select(&perm));
        for (new, &old) in perm.iter().enumerate() {
            assert!((a.row(old) - b.row(new)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn bin_centers_are_one_hot() {
        let pts = vec![Point3::new(0.25, 0.25, 0.25), Point3::new(0.25, 0.25, 0.25)];
        let d = occupancy_descriptor(&pts);
        let cell = 2 * 16 + 2 * 4 + 2;
        for (i, v) in d.iter().enumerate() {
            assert_eq!(*v, if i == cell { 1.0 } else { 0.0 });
        }
        let tiled = local_shape_descriptor(&pts, 256);
        assert_eq!(tiled.len(), 256);
        assert!((tiled.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_grid_counts_and_clamps() {
        let pts = vec![
            Point3::new(0.1, 0.1, 0.1),
            Point3::new(0.2, 0.4, 0.3),
            Point3::new(1.0, -1.0, 0.0),
            Point3::new(-3.0, 0.0, 2.0),
        ];
        let g = grid_occupancy(&pts);
        assert_eq!(g[2 * 16 + 2 * 4 + 2], 2.0);
        assert_eq!(g[3 * 16 + 2], 1.0);
        assert_eq!(g[2 * 4 + 3], 1.0);
        assert_eq!(g.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn soft_binning_splits_and_clamps() {
        let d = occupancy_descriptor(&[Point3::new(1.0, -1.0, 0.0)]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d[3 * 16 + 1] - h).abs() < 1e-15);
        assert!((d[3 * 16 + 2] - h).abs() < 1e-15);
        assert_eq!(d.iter().filter(|v| **v > 0.0).count(), 2);
    }

    #[test]
    fn cylindrical_part_ignores_spin_about_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-1.0..1.0)))
            .collect();
        let spin = RigidTransform::from_axis_angle(&Point3::z(), 1.1, Point3::zeros());
        let turned: Vec<Point3> = pts.iter().map(|p| spin.apply_point(p)).collect();
        let (a, b) = (cylindrical_descriptor(&pts), cylindrical_descriptor(&turned));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_ne!(occupancy_descriptor(&pts), occupancy_descriptor(&turned));
    }

    #[test]
    fn joint_centering_removes_shared_mean() {
        let a = FeatureSet::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let b = FeatureSet::from_rows(&[vec![1.0, 2.0], vec![1.0, 1.0]]).unwrap();
        let (ca, cb) = FeatureSet::center_jointly(&a, &b.with_background()).unwrap();
        // mean row is (1, 1)
        assert_eq!(ca.row(0).as_slice(), &[0.0, 0.0]);
        assert_eq!(ca.row(1).as_slice(), &[0.0, -1.0]);
        assert_eq!(cb.row(0).as_slice(), &[1.0, 0.0]);
        assert_eq!(cb.row(1).as_slice(), &[0.0, 1.0]);
        assert_eq!(cb.row(2).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_examples() {
        let a = [1.0, 2.0, 3.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn global_descriptor_is_unit_mean() {
        let f = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = describe_global(&f).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-15 && (g.norm() - 1.0).abs() < 1e-15);
        let g2 = describe_global(&f.with_background()).unwrap();
        assert_eq!(g, g2);
        let z = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(matches!(describe_global(&z), Err(Error::ZeroVector)));
    }

    #[test]
    fn background_row_is_first_basis_vector() {
        let f = FeatureSet::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap().with_background();
        assert_eq!(f.rows(), 2);
        assert_eq!(f.points(), 1);
        assert_eq!(f.row(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(f.select(&[0]).row(0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn positional_encoding_is_unit_and_shift_kernel() {
        let c = PointCloud::new(vec![
            Point3::new(0.1, 0.2, 0.3),
            Point3::new(0.1, 0.2, 0.3),
            Point3::new(0.6, -0.2, 0.3),
        ])
        .unwrap();
        let pe = positional_encoding(&c);
        assert_eq!(pe.dim(), 48);
        for i in 0..3 {
            assert!((pe.row(i).norm() - 1.0).abs() < 1e-12);
        }
        assert!((pe.row(0).dot(&pe.row(1)) - 1.0).abs() < 1e-12);
        assert!(pe.row(0).dot(&pe.row(2)) < 0.9);
    }

    #[test]
    fn provider_spec_errors() {
        let bad = DescriptorProviderSpec {
            id: "nope".into(),
            params: BTreeMap::new(),
        };
        assert!(matches!(bad.build(), Err(Error::Config { .. })));
        let missing = DescriptorProviderSpec {
            id: "file".into(),
            params: BTreeMap::new(),
        };
        assert!(matches!(missing.build(), Err(Error::Config { .. })));
        assert!(DescriptorProviderSpec::default().build().is_ok());
    }
}
