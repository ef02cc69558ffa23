//! Reference matching for segmentation proposals on precomputed image
//! descriptors: global plus local similarity, mask NMS and class
//! assignment.
//!
//! Descriptor bundles are stored in the feature file format with row 0 the
//! global descriptor and every later row a local one.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BinaryMask;
use crate::io::{read_feature_file, read_pgm_mask, write_feature_file};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorBundle {
    global: DVector<f64>,
    /// One local descriptor per row.
    locals: DMatrix<f64>,
}

fn nonzero_finite(v: impl Iterator<Item = f64> + Clone) -> bool {
    v.clone().all(f64::is_finite) && v.map(|x| x * x).sum::<f64>() > 0.0
}

impl DescriptorBundle {
    pub fn new(global: DVector<f64>, locals: DMatrix<f64>) -> Result<Self> {
        if locals.nrows() == 0 {
            return Err(Error::invalid("bundle needs at least one local descriptor"));
        }
        if locals.ncols() != global.len() {
            return Err(Error::DimensionMismatch {
                expected: global.len(),
                found: locals.ncols(),
            });
        }
        if !nonzero_finite(global.iter().copied()) || !locals.row_iter().all(|r| nonzero_finite(r.iter().copied())) {
            return Err(Error::invalid("descriptors must be finite and non-zero"));
        }
        Ok(Self { global, locals })
    }

    /// Splits a stacked matrix: row 0 global, rows 1.. local.
    pub fn from_stacked(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() < 2 {
            return Err(Error::invalid("stacked bundle needs a global row and at least one local row"));
        }
        Self::new(m.row(0).transpose(), m.rows(1, m.nrows() - 1).into_owned())
    }

    pub fn to_stacked(&self) -> DMatrix<f64> {
        let (n, d) = self.locals.shape();
        DMatrix::from_fn(n + 1, d, |i, j| if i == 0 { self.global[j] } else { self.locals[(i - 1, j)] })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_stacked(read_feature_file(path)?.matrix())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_feature_file(path, &self.to_stacked())
    }

    pub fn global(&self) -> &DVector<f64> {
        &self.global
    }

    pub fn locals(&self) -> &DMatrix<f64> {
        &self.locals
    }

    pub fn dim(&self) -> usize {
        self.global.len()
    }
}

fn unit_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut r in out.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    out
}

/// `(ξ_G + ξ_L) / 2` where `ξ_G` is the cosine of the global descriptors and
/// `ξ_L` averages, over the query locals, the best cosine against any
/// reference local.
pub fn match_score(q: &DescriptorBundle, p: &DescriptorBundle) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            found: p.dim(),
        });
    }
    let xi_g = q.global.dot(&p.global) / (q.global.norm() * p.global.norm());
    let cos = unit_rows(&q.locals) * unit_rows(&p.locals).transpose();
    let xi_l = cos.row_iter().map(|r| r.max()).sum::<f64>() / q.locals.nrows() as f64;
    Ok(((xi_g + xi_l) / 2.0).clamp(-1.0, 1.0))
}

/// `|a ∩ b| / |a ∪ b|`, zero for an empty union.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            expected: a.bits().len(),
            found: b.bits().len(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(*x && *y);
        union += usize::from(*x || *y);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskProposal {
    pub mask: BinaryMask,
    pub confidence: f64,
    pub descriptor: DescriptorBundle,
}

impl MaskProposal {
    pub fn new(mask: BinaryMask, confidence: f64, descriptor: DescriptorBundle) -> Result<Self> {
        if mask.count() == 0 {
            return Err(Error::invalid("proposal mask is empty"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            mask,
            confidence,
            descriptor,
        })
    }
}

/// Indices of the proposals surviving greedy NMS, in keep order. Proposals
/// under `confidence_floor` are dropped; the rest are visited by descending
/// confidence (input order on ties) and kept unless their IoU with an
/// already kept mask exceeds `iou_threshold`.
pub fn nms_indices(proposals: &[MaskProposal], iou_threshold: f64, confidence_floor: f64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..proposals.len())
        .filter(|&i| proposals[i].confidence >= confidence_floor)
        .collect();
    order.sort_by(|&a, &b| proposals[b].confidence.total_cmp(&proposals[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let mut suppressed = false;
        for &k in &kept {
            if mask_iou(&proposals[i].mask, &proposals[k].mask)? > iou_threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn nms_masks(proposals: &[MaskProposal], iou_threshold: f64, confidence_floor: f64) -> Result<Vec<MaskProposal>> {
    Ok(nms_indices(proposals, iou_threshold, confidence_floor)?
        .into_iter()
        .map(|i| proposals[i].clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalAssignment {
    pub proposal: usize,
    /// `None` when no reference reaches the minimum score.
    pub class_id: Option<u32>,
    /// Best score over all references.
    pub score: f64,
}

/// Scores every proposal against every reference and assigns the best class
/// if its score reaches `min_score`. Ties go to the lowest class id.
pub fn assign_proposals(
    proposals: &[MaskProposal],
    references: &[(u32, DescriptorBundle)],
    min_score: f64,
) -> Result<Vec<ProposalAssignment>> {
    proposals
        .par_iter()
        .enumerate()
        .map(|(pi, prop)| {
            let mut best: Option<(u32, f64)> = None;
            for (class, bundle) in references {
                let s = match_score(&prop.descriptor, bundle)?;
                let better = match best {
                    None => true,
                    Some((c, b)) => s > b || (s == b && *class < c),
                };
                if better {
                    best = Some((*class, s));
                }
            }
            let (class_id, score) = match best {
                Some((c, s)) => ((s >= min_score).then_some(c), s),
                None => (None, f64::NEG_INFINITY),
            };
            Ok(ProposalAssignment {
                proposal: pi,
                class_id,
                score,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalEntry {
    pub mask: PathBuf,
    pub confidence: f64,
    pub descriptor: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub class_id: u32,
    pub descriptor: PathBuf,
}

fn read_json_list<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

/// Proposals from a manifest; relative paths resolve against its directory.
pub fn load_proposals(manifest: &Path) -> Result<Vec<MaskProposal>> {
    let base = base_dir(manifest);
    read_json_list::<ProposalEntry>(manifest)?
        .into_iter()
        .map(|e| {
            MaskProposal::new(
                read_pgm_mask(&base.join(&e.mask))?,
                e.confidence,
                DescriptorBundle::load(&base.join(&e.descriptor))?,
            )
        })
        .collect()
}

/// References from a JSON list of `{ "class_id": c, "descriptor": path }`.
pub fn load_references(manifest: &Path) -> Result<Vec<(u32, DescriptorBundle)>> {
    let base = base_dir(manifest);
    read_json_list::<ReferenceEntry>(manifest)?
        .into_iter()
        .map(|e| Ok((e.class_id, DescriptorBundle::load(&base.join(&e.descriptor))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_pgm_mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bundle(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DescriptorBundle {
        DescriptorBundle::new(
            DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap()
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
        m.row(i).iter().copied().collect()
    }

    #[test]
    fn self_match_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = bundle(&mut rng, 5, 8);
        assert!((match_score(&b, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_locals_score_half() {
        let g = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
        let q = DescriptorBundle::new(g.clone(), DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        let p = DescriptorBundle::new(g, DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0])).unwrap();
        assert!((match_score(&q, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q = bundle(&mut rng, 7, 16);
            let p = bundle(&mut rng, 7, 16);
            let xg = cos(q.global.as_slice(), p.global.as_slice());
            let mut xl = 0.0;
            for k in 0..7 {
                let mut best = f64::NEG_INFINITY;
                for i in 0..7 {
                    best = best.max(cos(&row(&q.locals, k), &row(&p.locals, i)));
                }
                xl += best;
            }
            let oracle = (xg + xl / 7.0) / 2.0;
            assert!((match_score(&q, &p).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn local_term_is_asymmetric() {
        let g = DVector::from_vec(vec![1.0, 0.0]);
        // every query local has a perfect partner, but not the other way
        let q = DescriptorBundle::new(g.clone(), DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let p = DescriptorBundle::new(g, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(match_score(&q, &p).unwrap(), 1.0);
        assert_eq!(match_score(&p, &q).unwrap(), 0.75);
    }

    #[test]
    fn bundle_validation() {
        assert!(DescriptorBundle::new(DVector::zeros(3), DMatrix::from_element(1, 3, 1.0)).is_err());
        assert!(DescriptorBundle::new(DVector::from_element(3, 1.0), DMatrix::zeros(0, 3)).is_err());
        assert!(matches!(
            DescriptorBundle::new(DVector::from_element(3, 1.0), DMatrix::from_element(2, 4, 1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn rect(w: usize, h: usize, x0: usize, x1: usize) -> BinaryMask {
        let mut m = BinaryMask::filled(w, h, false).unwrap();
        for v in 0..h {
            for u in x0..x1 {
                m.set(u, v, true);
            }
        }
        m
    }

    #[test]
    fn iou_examples() {
        let a = rect(8, 4, 0, 4);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &rect(8, 4, 4, 8)).unwrap(), 0.0);
        assert!((mask_iou(&a, &rect(8, 4, 2, 6)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = BinaryMask::filled(8, 4, false).unwrap();
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        assert!(mask_iou(&a, &rect(4, 4, 0, 2)).is_err());
    }

    fn proposal(rng: &mut ChaCha8Rng, mask: BinaryMask, confidence: f64) -> MaskProposal {
        MaskProposal::new(mask, confidence, bundle(rng, 2, 4)).unwrap()
    }

    #[test]
    fn nms_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = vec![proposal(&mut rng, rect(8, 4, 0, 4), 0.6)];
        assert_eq!(nms_masks(&one, 0.7, 0.5).unwrap(), one);
        let twins = vec![
            proposal(&mut rng, rect(8, 4, 0, 4), 0.8),
            proposal(&mut rng, rect(8, 4, 0, 4), 0.9),
        ];
        assert_eq!(nms_indices(&twins, 0.7, 0.5).unwrap(), vec![1]);
        assert!(nms_masks(&twins, 0.7, 0.95).unwrap().is_empty());
        let tie = vec![
            proposal(&mut rng, rect(8, 4, 0, 4), 0.7),
            proposal(&mut rng, rect(8, 4, 0, 4), 0.7),
        ];
        assert_eq!(nms_indices(&tie, 0.7, 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn assignment_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let refs: Vec<(u32, DescriptorBundle)> = (0..3).map(|c| (c + 10, bundle(&mut rng, 3, 6))).collect();
        let p = MaskProposal::new(rect(4, 4, 0, 2), 0.9, refs[1].1.clone()).unwrap();
        let out = assign_proposals(std::slice::from_ref(&p), &refs, 0.5).unwrap();
        assert_eq!(out[0].class_id, Some(11));
        assert!((out[0].score - 1.0).abs() < 1e-12);
        let none = assign_proposals(&[p], &refs, 1.5).unwrap();
        assert_eq!(none[0].class_id, None);
    }

    #[test]
    fn assignment_ties_prefer_lowest_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = bundle(&mut rng, 2, 4);
        let p = MaskProposal::new(rect(4, 4, 0, 2), 0.9, b.clone()).unwrap();
        let refs = vec![(7, b.clone()), (3, b.clone()), (5, b)];
        let out = assign_proposals(&[p], &refs, 0.0).unwrap();
        assert_eq!(out[0].class_id, Some(3));
    }

    #[test]
    fn manifests_load_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = bundle(&mut rng, 3, 5);
        b.save(&dir.path().join("q.bin")).unwrap();
        b.save(&dir.path().join("r.bin")).unwrap();
        write_pgm_mask(&dir.path().join("m.pgm"), &rect(6, 3, 1, 3)).unwrap();
        let props = dir.path().join("proposals.json");
        std::fs::write(&props, r#"[{"mask": "m.pgm", "confidence": 0.8, "descriptor": "q.bin"}]"#).unwrap();
        let refs = dir.path().join("refs.json");
        std::fs::write(&refs, r#"[{"class_id": 4, "descriptor": "r.bin"}]"#).unwrap();
        let p = load_proposals(&props).unwrap();
        let r = load_references(&refs).unwrap();
        assert_eq!(p[0].mask.count(), 6);
        // stored as f32
        assert!((p[0].descriptor.locals() - b.locals()).abs().max() < 1e-6);
        assert_eq!(assign_proposals(&p, &r, 0.9).unwrap()[0].class_id, Some(4));
    }
}
