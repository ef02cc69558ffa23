//! Coarse-to-fine relative pose estimation.
//!
//! Both clouds are normalized into their global reference frames, where
//! pose-invariant descriptors are matched. Triplets of matches drawn from
//! the coarse correlation field give pose hypotheses, which are scored by
//! the reciprocal of their mean nearest-neighbor distance. The best one is
//! refined by weighted Kabsch on correspondences from a fine correlation
//! that also encodes position.
//!
//! All poses map query camera coordinates onto reference camera
//! coordinates: `p ≈ R·q + t`.

use nalgebra::{Matrix3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{
    positional_encoding, CloudRole, DescribeInput, DescriptorProvider, DescriptorProviderSpec,
    FeatureSet,
};
use crate::error::{Error, Result};
use crate::frame::{build_grf, build_lrfs, local_regions_at, lrf_normalize, FrameConfig};
use crate::geometry::{FrameJson, FrameTransform, Point3, PointCloud, RigidTransform};
use crate::matching::{
    build_correlation, extract_correspondences, heuristic_overlap, CorrelationField,
    CorrespondenceSet,
};
use crate::spatial::{farthest_point_sampling, KdTree};

/// Added to the distance before taking its reciprocal.
pub const SCORE_EPSILON: f64 = 1e-9;
/// Cross-product norm under which a triplet counts as collinear.
const COLLINEAR_TOL: f64 = 1e-10;
/// `σ₂ / σ₁` of the cross-covariance under which Kabsch is ill-posed.
const RANK_TOL: f64 = 1e-12;
const ATTEMPTS_PER_HYPOTHESIS: usize = 10;

/// Weighted least-squares rigid transform taking `src[i]` onto `dst[i]`,
/// with reflection correction.
pub fn kabsch_weighted(src: &[Point3], dst: &[Point3], weights: &[f64]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            found: if dst.len() != src.len() { dst.len() } else { weights.len() },
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("kabsch weights must be finite and non-negative"));
    }
    let active = weights.iter().filter(|w| **w > 0.0).count();
    if active < 3 {
        return Err(Error::InsufficientCorrespondences { found: active });
    }
    let total: f64 = weights.iter().sum();
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        cs += s * *w;
        cd += d * *w;
    }
    cs /= total;
    cd /= total;
    let mut h = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        h += (s - cs) * (d - cd).transpose() * *w;
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOL * sv[0] {
        return Err(Error::DegenerateGeometry("correspondences are collinear"));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cd - rotation * cs;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Weighted root-mean-square distance between `pose·src[i]` and `dst[i]`.
pub fn weighted_rms(pose: &RigidTransform, src: &[Point3], dst: &[Point3], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let sum: f64 = src
        .iter()
        .zip(dst)
        .zip(weights)
        .map(|((s, d), w)| w * (pose.apply_point(s) - d).norm_squared())
        .sum();
    (sum / total).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseHypothesis {
    pub pose: RigidTransform,
    /// ξ = 1 / (D + ε).
    pub score: f64,
    /// Mean nearest-neighbor distance D.
    pub distance: f64,
}

/// Mean over `pc` of the distance to the nearest `Rᵀ(q − t)`, `q ∈ qc`, for
/// `h = {R, t}`, and its reciprocal score.
///
/// `h` here maps reference onto query coordinates; pass the inverse of a
/// query-to-reference pose.
pub fn score_hypothesis(h: &RigidTransform, qc: &PointCloud, pc: &PointCloud) -> (f64, f64) {
    HypothesisScorer::new(qc, pc).score(h)
}

/// Reuses one spatial index over the query samples across hypotheses.
/// Uses `‖Rᵀ(q − t) − p‖ = ‖q − (R·p + t)‖`.
pub struct HypothesisScorer<'a> {
    tree: KdTree,
    reference: &'a [Point3],
}

impl<'a> HypothesisScorer<'a> {
    pub fn new(qc: &PointCloud, pc: &'a PointCloud) -> Self {
        Self {
            tree: KdTree::new(qc.points()),
            reference: pc.points(),
        }
    }

    /// `(D, ξ)` for `h` in the convention of [`score_hypothesis`].
    pub fn score(&self, h: &RigidTransform) -> (f64, f64) {
        let total: f64 = self
            .reference
            .iter()
            .map(|p| self.tree.nearest(&h.apply_point(p)).dist_sq.sqrt())
            .sum();
        let d = total / self.reference.len() as f64;
        (d, 1.0 / (d + SCORE_EPSILON))
    }

    /// Scores a query-to-reference pose.
    pub fn score_pose(&self, pose: &RigidTransform) -> PoseHypothesis {
        let (distance, score) = self.score(&pose.inverse());
        PoseHypothesis {
            pose: *pose,
            score,
            distance,
        }
    }
}

fn collinear(a: &Point3, b: &Point3, c: &Point3) -> bool {
    (b - a).cross(&(c - a)).norm() < COLLINEAR_TOL
}

/// Pose hypotheses from match triplets drawn in proportion to the
/// non-background row-softmax mass. Rows and columns of `x` past the
/// background index point into `q` and `p`. Triplets with repeated indices
/// or collinear points on either side are redrawn, within a budget of ten
/// attempts per requested hypothesis.
pub fn sample_hypotheses<R: Rng + ?Sized>(
    x: &CorrelationField,
    q: &PointCloud,
    p: &PointCloud,
    n_h: usize,
    rng: &mut R,
) -> Result<Vec<PoseHypothesis>> {
    let (rows, cols) = x.shape();
    if rows != q.len() + 1 || cols != p.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: q.len() + 1,
            found: rows,
        });
    }
    let probs = x.row_softmax();
    let m = cols - 1;
    let weights: Vec<f64> = (1..rows)
        .flat_map(|i| (1..cols).map(move |j| (i, j)))
        .map(|(i, j)| probs[(i, j)])
        .collect();
    let attempts = ATTEMPTS_PER_HYPOTHESIS * n_h;
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::NoValidHypothesis { attempts: 0 })?;
    let (qp, pp) = (q.points(), p.points());

    let mut poses = Vec::with_capacity(n_h);
    for _ in 0..attempts {
        if poses.len() == n_h {
            break;
        }
        let picks: [usize; 3] = std::array::from_fn(|_| dist.sample(rng));
        let qi = picks.map(|k| k / m);
        let pj = picks.map(|k| k % m);
        if qi[0] == qi[1] || qi[0] == qi[2] || qi[1] == qi[2] || pj[0] == pj[1] || pj[0] == pj[2] || pj[1] == pj[2] {
            continue;
        }
        let src = qi.map(|i| qp[i]);
        let dst = pj.map(|j| pp[j]);
        if collinear(&src[0], &src[1], &src[2]) || collinear(&dst[0], &dst[1], &dst[2]) {
            continue;
        }
        if let Ok(pose) = kabsch_weighted(&src, &dst, &[1.0; 3]) {
            poses.push(pose);
        }
    }
    if poses.is_empty() {
        return Err(Error::NoValidHypothesis { attempts });
    }
    let scorer = HypothesisScorer::new(q, p);
    Ok(poses.par_iter().map(|pose| scorer.score_pose(pose)).collect())
}

/// Highest score, lowest index on ties.
pub fn best_hypothesis(hypotheses: &[PoseHypothesis]) -> Option<&PoseHypothesis> {
    let mut best: Option<&PoseHypothesis> = None;
    for h in hypotheses {
        if best.is_none_or(|b| h.score > b.score) {
            best = Some(h);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaUnits {
    /// Multiples of the reference cloud's global radius.
    Normalized,
    /// Camera-frame units.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub n_hypotheses: usize,
    /// Inlier distance for the coarse refit and fine matches.
    pub delta: f64,
    pub delta_units: DeltaUnits,
    pub frame: FrameConfig,
    pub descriptor: DescriptorProviderSpec,
    /// Subtract the joint mean descriptor of both clouds before matching.
    pub center_descriptors: bool,
    pub seed: u64,
    pub fine_iterations: usize,
    /// Inverse softmax temperature of the coarse correlation.
    pub coarse_logit_scale: f64,
    pub fine_logit_scale: f64,
    pub overlap_margin: f64,
    pub overlap_temperature: f64,
    /// Minimum row × column probability for an extracted match.
    pub match_threshold: f64,
    /// Share of the fine feature norm given to the positional encoding.
    pub positional_weight: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_coarse: 196,
            n_fine: 2048,
            n_hypotheses: 300,
            delta: 0.15,
            delta_units: DeltaUnits::Normalized,
            frame: FrameConfig::default(),
            descriptor: DescriptorProviderSpec::default(),
            center_descriptors: true,
            seed: 0,
            fine_iterations: 1,
            coarse_logit_scale: 20.0,
            fine_logit_scale: 20.0,
            overlap_margin: 0.5,
            overlap_temperature: 0.1,
            match_threshold: 0.05,
            positional_weight: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg))
            }
        };
        check(self.n_coarse >= 3, "n_coarse", "must be at least 3")?;
        check(self.n_fine >= self.n_coarse, "n_fine", "must be at least n_coarse")?;
        check(self.n_hypotheses >= 1, "n_hypotheses", "must be at least 1")?;
        check(self.delta > 0.0, "delta", "must be positive")?;
        check(self.coarse_logit_scale > 0.0, "coarse_logit_scale", "must be positive")?;
        check(self.fine_logit_scale > 0.0, "fine_logit_scale", "must be positive")?;
        check(self.overlap_temperature > 0.0, "overlap_temperature", "must be positive")?;
        check(
            (0.0..=1.0).contains(&self.match_threshold),
            "match_threshold",
            "must lie in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.positional_weight),
            "positional_weight",
            "must lie in [0, 1]",
        )?;
        self.frame.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate {
    pub pose: RigidTransform,
    pub coarse: PoseHypothesis,
    pub n_corr: usize,
    /// Weighted RMS residual of `pose` on the final correspondences.
    pub residual: f64,
    /// The coarse pose's residual on the same correspondences.
    pub coarse_residual: f64,
}

#[derive(Serialize, Deserialize)]
struct HypothesisJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    distance: f64,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct EstimateJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    coarse: HypothesisJson,
    n_corr: usize,
    residual: f64,
    coarse_residual: f64,
}

fn split(pose: &RigidTransform) -> ([[f64; 3]; 3], [f64; 3]) {
    let t = pose.translation();
    (pose.rotation_rows(), [t.x, t.y, t.z])
}

impl Serialize for PoseEstimate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (rotation, translation) = split(&self.pose);
        let (cr, ct) = split(&self.coarse.pose);
        EstimateJson {
            rotation,
            translation,
            coarse: HypothesisJson {
                rotation: cr,
                translation: ct,
                distance: self.coarse.distance,
                score: self.coarse.score,
            },
            n_corr: self.n_corr,
            residual: self.residual,
            coarse_residual: self.coarse_residual,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PoseEstimate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = EstimateJson::deserialize(d)?;
        let pose = |rotation, translation| {
            RigidTransform::try_from(&FrameJson {
                rotation,
                translation,
                scale: None,
            })
            .map_err(serde::de::Error::custom)
        };
        Ok(PoseEstimate {
            pose: pose(raw.rotation, raw.translation)?,
            coarse: PoseHypothesis {
                pose: pose(raw.coarse.rotation, raw.coarse.translation)?,
                score: raw.coarse.score,
                distance: raw.coarse.distance,
            },
            n_corr: raw.n_corr,
            residual: raw.residual,
            coarse_residual: raw.coarse_residual,
        })
    }
}

/// A cloud with its global frame, farthest-point samples and descriptors.
struct PreparedCloud<'a> {
    camera: &'a PointCloud,
    grf: FrameTransform,
    /// Sample indices into `camera`, in farthest-point order.
    samples: Vec<usize>,
    /// One row per sample.
    descriptors: FeatureSet,
}

impl PreparedCloud<'_> {
    fn sample_points(&self, count: usize) -> Vec<Point3> {
        self.samples[..count]
            .iter()
            .map(|&i| self.camera.points()[i])
            .collect()
    }
}

/// Refined pose plus the query points, reference points and weights it was
/// solved on.
type FineRound = (RigidTransform, Vec<Point3>, Vec<Point3>, Vec<f64>);

/// Configured estimator; immutable and shareable across threads.
pub struct PosePipeline {
    cfg: PipelineConfig,
    provider: Box<dyn DescriptorProvider>,
}

impl PosePipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let provider = cfg.descriptor.build()?;
        Ok(Self { cfg, provider })
    }

    pub fn with_provider(cfg: PipelineConfig, provider: Box<dyn DescriptorProvider>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, provider })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn prepare<'a>(&self, cloud: &'a PointCloud, role: CloudRole) -> Result<PreparedCloud<'a>> {
        let grf = build_grf(cloud)?;
        let normalized = grf.normalize(cloud);
        let samples = farthest_point_sampling(normalized.points(), self.cfg.n_fine, 0);
        let tree = KdTree::new(normalized.points());
        let regions = local_regions_at(&normalized, &tree, &samples, &self.cfg.frame);
        let frames = build_lrfs(&normalized, &regions);
        let local_sets = lrf_normalize(&normalized, &regions, &frames);
        let descriptors = self.provider.describe(&DescribeInput {
            role,
            cloud: &normalized,
            regions: &regions,
            local_sets: &local_sets,
        })?;
        if descriptors.points() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                found: descriptors.points(),
            });
        }
        Ok(PreparedCloud {
            camera: cloud,
            grf,
            samples,
            descriptors,
        })
    }

    fn inlier_tolerance(&self, reference: &PreparedCloud) -> f64 {
        match self.cfg.delta_units {
            DeltaUnits::Normalized => self.cfg.delta * reference.grf.scale(),
            DeltaUnits::Absolute => self.cfg.delta,
        }
    }

    fn correlate(&self, fq: FeatureSet, fp: FeatureSet, scale: f64) -> Result<CorrelationField> {
        let (fq, fp) = (fq.with_background(), fp.with_background());
        let (oq, op) = heuristic_overlap(
            &fq,
            &fp,
            self.cfg.overlap_margin,
            self.cfg.overlap_temperature,
        )?;
        Ok(build_correlation(&fq, &fp, &oq, &op)?.with_scale(scale))
    }

    fn coarse_stage<R: Rng + ?Sized>(
        &self,
        q: &PreparedCloud,
        p: &PreparedCloud,
        rng: &mut R,
    ) -> Result<PoseHypothesis> {
        let nq = self.cfg.n_coarse.min(q.samples.len());
        let np = self.cfg.n_coarse.min(p.samples.len());
        let head = |n: usize| (0..n).collect::<Vec<_>>();
        let x = self.correlate(
            q.descriptors.select(&head(nq)),
            p.descriptors.select(&head(np)),
            self.cfg.coarse_logit_scale,
        )?;
        let qc = PointCloud::new(q.sample_points(nq))?;
        let pc = PointCloud::new(p.sample_points(np))?;
        let hypotheses = sample_hypotheses(&x, &qc, &pc, self.cfg.n_hypotheses, rng)?;
        let best = best_hypothesis(&hypotheses)
            .cloned()
            .ok_or(Error::NoValidHypothesis { attempts: 0 })?;

        // Refit on the matches the winning hypothesis explains.
        let tol = self.inlier_tolerance(p);
        let matches = extract_correspondences(&x, self.cfg.match_threshold);
        let (src, dst, w) = gather(&matches, qc.points(), pc.points(), |s, d| {
            (best.pose.apply_point(s) - d).norm() <= tol
        });
        if let Ok(pose) = kabsch_weighted(&src, &dst, &w) {
            let refit = HypothesisScorer::new(&qc, &pc).score_pose(&pose);
            if refit.distance < best.distance {
                return Ok(refit);
            }
        }
        Ok(best)
    }

    /// One fine matching round starting from `pose`; returns the refined pose
    /// and the correspondences it was solved on, in camera coordinates.
    fn fine_round(
        &self,
        q: &PreparedCloud,
        p: &PreparedCloud,
        pose: &RigidTransform,
    ) -> Result<FineRound> {
        let q_cam = q.sample_points(q.samples.len());
        let p_cam = p.sample_points(p.samples.len());
        let q_aligned: Vec<Point3> = q_cam.iter().map(|x| pose.apply_point(x)).collect();
        let to_ref = |pts: &[Point3]| -> Result<PointCloud> {
            PointCloud::new(pts.iter().map(|x| p.grf.normalize_point(x)).collect())
        };
        let beta = self.cfg.positional_weight;
        let features = |desc: &FeatureSet, pts: &PointCloud| {
            FeatureSet::concat_weighted(desc, (1.0 - beta).sqrt(), &positional_encoding(pts), beta.sqrt())
        };
        let fq = features(&q.descriptors, &to_ref(&q_aligned)?)?;
        let fp = features(&p.descriptors, &to_ref(&p_cam)?)?;
        let x = self.correlate(fq, fp, self.cfg.fine_logit_scale)?;
        let matches = extract_correspondences(&x, self.cfg.match_threshold);

        let tol = self.inlier_tolerance(p);
        let kept: Vec<_> = matches
            .pairs
            .iter()
            .filter(|m| (q_aligned[m.query - 1] - p_cam[m.reference - 1]).norm() <= tol)
            .collect();
        if kept.len() < 3 {
            return Err(Error::InsufficientCorrespondences { found: kept.len() });
        }
        let src: Vec<Point3> = kept.iter().map(|m| q_aligned[m.query - 1]).collect();
        let dst: Vec<Point3> = kept.iter().map(|m| p_cam[m.reference - 1]).collect();
        let w: Vec<f64> = kept.iter().map(|m| m.weight).collect();
        let step = kabsch_weighted(&src, &dst, &w)?;
        let src_cam = kept.iter().map(|m| q_cam[m.query - 1]).collect();
        Ok((step.compose(pose), src_cam, dst, w))
    }

    pub fn estimate_with_rng<R: Rng + ?Sized>(
        &self,
        query: &PointCloud,
        reference: &PointCloud,
        rng: &mut R,
    ) -> Result<PoseEstimate> {
        let mut q = self.prepare(query, CloudRole::Query)?;
        let mut p = self.prepare(reference, CloudRole::Reference)?;
        if self.cfg.center_descriptors {
            (q.descriptors, p.descriptors) = FeatureSet::center_jointly(&q.descriptors, &p.descriptors)?;
        }
        let coarse = self.coarse_stage(&q, &p, rng)?;
        let mut pose = coarse.pose;
        let mut last = None;
        for _ in 0..self.cfg.fine_iterations {
            let (refined, src, dst, w) = self.fine_round(&q, &p, &pose)?;
            pose = refined;
            last = Some((src, dst, w));
        }
        let (n_corr, residual, coarse_residual) = match last {
            Some((src, dst, w)) => (
                src.len(),
                weighted_rms(&pose, &src, &dst, &w),
                weighted_rms(&coarse.pose, &src, &dst, &w),
            ),
            None => (0, 0.0, 0.0),
        };
        Ok(PoseEstimate {
            pose,
            coarse,
            n_corr,
            residual,
            coarse_residual,
        })
    }

    /// Estimate with an RNG seeded from the configuration.
    pub fn estimate(&self, query: &PointCloud, reference: &PointCloud) -> Result<PoseEstimate> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        self.estimate_with_rng(query, reference, &mut rng)
    }
}

/// Pairs of `matches` passing `keep`, as parallel source, target and weight
/// lists. Field indices are shifted past the background token.
fn gather(
    matches: &CorrespondenceSet,
    src: &[Point3],
    dst: &[Point3],
    keep: impl Fn(&Point3, &Point3) -> bool,
) -> (Vec<Point3>, Vec<Point3>, Vec<f64>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for m in &matches.pairs {
        let (s, d) = (src[m.query - 1], dst[m.reference - 1]);
        if keep(&s, &d) {
            out.0.push(s);
            out.1.push(d);
            out.2.push(m.weight);
        }
    }
    out
}

pub fn estimate_relative_pose<R: Rng + ?Sized>(
    query: &PointCloud,
    reference: &PointCloud,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Result<PoseEstimate> {
    PosePipeline::new(cfg.clone())?.estimate_with_rng(query, reference, rng)
}
