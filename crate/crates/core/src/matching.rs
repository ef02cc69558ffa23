//! Overlap-aware correlation between feature sets, ground-truth labels and
//! correspondence extraction.
//!
//! Index 0 on both axes of a correlation field is the background token;
//! point `i` of a cloud lives at index `i + 1`.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::descriptor::FeatureSet;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::spatial::KdTree;

/// Per-row overlap probabilities, index 0 being the background token.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapScores {
    values: Vec<f64>,
}

impl OverlapScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("overlap score {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    /// Every score set to one, background included.
    pub fn ones(len: usize) -> Self {
        Self {
            values: vec![1.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Raw correlation logits with row- and column-softmax views.
///
/// The views are taken over `logit_scale · logits`. With unit-norm features
/// the raw logits live in `[-1, 1]`, so the scale acts as an inverse
/// softmax temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationField {
    logits: DMatrix<f64>,
    logit_scale: f64,
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl CorrelationField {
    pub fn new(logits: DMatrix<f64>) -> Result<Self> {
        if logits.nrows() < 2 || logits.ncols() < 2 {
            return Err(Error::invalid("correlation field needs at least one point per side"));
        }
        if logits.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("correlation logits contain NaN"));
        }
        Ok(Self {
            logits,
            logit_scale: 1.0,
        })
    }

    pub fn with_scale(mut self, logit_scale: f64) -> Self {
        self.logit_scale = logit_scale;
        self
    }

    pub fn logits(&self) -> &DMatrix<f64> {
        &self.logits
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    /// `(N + 1, M + 1)`.
    pub fn shape(&self) -> (usize, usize) {
        self.logits.shape()
    }

    fn scaled(&self, i: usize, j: usize) -> f64 {
        self.logit_scale * self.logits[(i, j)]
    }

    pub fn row_softmax(&self) -> DMatrix<f64> {
        let (n, m) = self.shape();
        let mut out = DMatrix::zeros(n, m);
        let mut buf = vec![0.0; m];
        for i in 0..n {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = self.scaled(i, j);
            }
            softmax_in_place(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                out[(i, j)] = *b;
            }
        }
        out
    }

    pub fn col_softmax(&self) -> DMatrix<f64> {
        let (n, m) = self.shape();
        let mut out = DMatrix::zeros(n, m);
        let mut buf = vec![0.0; n];
        for j in 0..m {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = self.scaled(i, j);
            }
            softmax_in_place(&mut buf);
            out.column_mut(j).copy_from_slice(&buf);
        }
        out
    }

    /// `log row_softmax[i][j]`, computed without forming the full view.
    pub fn row_log_prob(&self, i: usize, j: usize) -> f64 {
        let m = self.shape().1;
        self.scaled(i, j) - log_sum_exp((0..m).map(|k| self.scaled(i, k)))
    }

    /// `log col_softmax[i][j]`.
    pub fn col_log_prob(&self, i: usize, j: usize) -> f64 {
        let n = self.shape().0;
        self.scaled(i, j) - log_sum_exp((0..n).map(|k| self.scaled(k, j)))
    }

    /// CSV of `logit_scale · logits`, one row per line; row 0 and column 0
    /// are the background token. A field read back has unit scale and the
    /// same softmax views.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
        let (n, m) = self.shape();
        for i in 0..n {
            w.write_record((0..m).map(|j| self.scaled(i, j).to_string()))
                .map_err(csv_err(path))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(csv_err(path))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err(path))?;
            let row = rec
                .iter()
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, format!("row {line}: {e}")))?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::parse(path, format!("row {line} has {} columns", row.len())));
                }
            }
            rows.push(row);
        }
        let cols = rows.first().map_or(0, Vec::len);
        Self::new(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::parse(path, e.to_string())
}

fn check_field_inputs(f: &FeatureSet, o: &OverlapScores) -> Result<()> {
    if !f.has_background() {
        return Err(Error::invalid("feature set lacks the background row"));
    }
    if o.len() != f.rows() {
        return Err(Error::DimensionMismatch {
            expected: f.rows(),
            found: o.len(),
        });
    }
    Ok(())
}

/// `logits[i][j] = (oq[i]·fq[i])ᵀ(op[j]·fp[j])` over rows with background.
pub fn build_correlation(
    fq: &FeatureSet,
    fp: &FeatureSet,
    oq: &OverlapScores,
    op: &OverlapScores,
) -> Result<CorrelationField> {
    check_field_inputs(fq, oq)?;
    check_field_inputs(fp, op)?;
    if fq.dim() != fp.dim() {
        return Err(Error::DimensionMismatch {
            expected: fq.dim(),
            found: fp.dim(),
        });
    }
    let mut a = fq.matrix().clone();
    for (i, s) in oq.values().iter().enumerate() {
        a.row_mut(i).scale_mut(*s);
    }
    let mut b = fp.matrix().clone();
    for (j, s) in op.values().iter().enumerate() {
        b.row_mut(j).scale_mut(*s);
    }
    CorrelationField::new(a * b.transpose())
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unit_rows(f: &FeatureSet) -> DMatrix<f64> {
    let off = usize::from(f.has_background());
    let mut m = f.matrix().rows(off, f.points()).into_owned();
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    m
}

/// Stand-in for a learned overlap predictor: each point's score is
/// `logistic((best cosine against the other cloud − margin) / temperature)`.
/// The background entry is fixed at 0.5. Background rows in the inputs are
/// ignored.
pub fn heuristic_overlap(
    fq: &FeatureSet,
    fp: &FeatureSet,
    margin: f64,
    temperature: f64,
) -> Result<(OverlapScores, OverlapScores)> {
    if fq.dim() != fp.dim() {
        return Err(Error::DimensionMismatch {
            expected: fq.dim(),
            found: fp.dim(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("overlap temperature must be positive"));
    }
    let (uq, up) = (unit_rows(fq), unit_rows(fp));
    let gram = &uq * up.transpose();
    let score = |best: f64| logistic((best - margin) / temperature);
    let mut sq = vec![0.5];
    sq.extend(gram.row_iter().map(|r| score(r.max())));
    let mut sp = vec![0.5];
    sp.extend(gram.column_iter().map(|c| score(c.max())));
    Ok((OverlapScores { values: sq }, OverlapScores { values: sp }))
}

/// Per-point labels: `0` for no counterpart within δ, otherwise the
/// counterpart's index plus one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthAssignment {
    pub labels: Vec<usize>,
}

fn nearest_labels(src: &[crate::Point3], tree: &KdTree, delta: f64) -> Vec<usize> {
    src.par_iter()
        .map(|x| {
            let nb = tree.nearest(x);
            if nb.dist_sq.sqrt() <= delta {
                nb.index + 1
            } else {
                0
            }
        })
        .collect()
}

/// Nearest-counterpart labels for both clouds, `gt` mapping query into
/// reference coordinates. Many query points may share one reference label.
pub fn gt_assignment(
    q: &PointCloud,
    p: &PointCloud,
    gt: &RigidTransform,
    delta: f64,
) -> (GroundTruthAssignment, GroundTruthAssignment) {
    let q_in_p: Vec<_> = q.points().iter().map(|x| gt.apply_point(x)).collect();
    let q_tree = KdTree::new(&q_in_p);
    let p_tree = KdTree::new(p.points());
    (
        GroundTruthAssignment {
            labels: nearest_labels(&q_in_p, &p_tree, delta),
        },
        GroundTruthAssignment {
            labels: nearest_labels(p.points(), &q_tree, delta),
        },
    )
}

fn overlap_bits(a: &GroundTruthAssignment) -> OverlapScores {
    let mut values = vec![0.0];
    values.extend(a.labels.iter().map(|l| if *l > 0 { 1.0 } else { 0.0 }));
    OverlapScores { values }
}

/// Binary overlap labels with the background entry fixed at 0.
pub fn gt_overlap_labels(
    q: &PointCloud,
    p: &PointCloud,
    gt: &RigidTransform,
    delta: f64,
) -> (OverlapScores, OverlapScores) {
    let (aq, ap) = gt_assignment(q, p, gt, delta);
    (overlap_bits(&aq), overlap_bits(&ap))
}

/// Fraction of query points within δ of the reference under `gt`.
pub fn overlap_ratio(q: &PointCloud, p: &PointCloud, gt: &RigidTransform, delta: f64) -> f64 {
    let p_tree = KdTree::new(p.points());
    let q_in_p: Vec<_> = q.points().iter().map(|x| gt.apply_point(x)).collect();
    let hits = nearest_labels(&q_in_p, &p_tree, delta)
        .iter()
        .filter(|l| **l > 0)
        .count();
    hits as f64 / q.len() as f64
}

/// A predicted match in field indices (both ≥ 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub query: usize,
    pub reference: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, v) in values.enumerate() {
        if v > best.0 {
            best = (v, j);
        }
    }
    best.1
}

/// Row-argmax matches that are not background and whose row/column
/// probability product reaches `threshold`. Weight is the geometric mean of
/// the two probabilities.
pub fn extract_correspondences(x: &CorrelationField, threshold: f64) -> CorrespondenceSet {
    let rows = x.row_softmax();
    let cols = x.col_softmax();
    let pairs = (1..rows.nrows())
        .filter_map(|i| {
            let j = argmax_lowest(rows.row(i).iter().copied());
            if j == 0 {
                return None;
            }
            let product = rows[(i, j)] * cols[(i, j)];
            (product > 0.0 && product >= threshold).then(|| Correspondence {
                query: i,
                reference: j,
                weight: product.sqrt(),
            })
        })
        .collect();
    CorrespondenceSet { pairs }
}
