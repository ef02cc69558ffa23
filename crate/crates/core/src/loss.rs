//! Supervision objectives evaluated on fixed predictions.
//!
//! The correspondence term is cross-entropy over the softmax rows of the
//! point rows of a correlation field plus the same over its point columns.
//! The overlap term is a class-balanced binary cross-entropy.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{CorrelationField, GroundTruthAssignment, OverlapScores};

/// Predictions are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapWeighting {
    /// `w_pos = N_neg / N`, `w_neg = N_pos / N`; unit weights when a class is
    /// absent.
    #[default]
    ClassBalanced,
    Unit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub reduction: Reduction,
    pub overlap_weighting: OverlapWeighting,
}

fn reduce(total: f64, count: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Mean if count > 0 => total / count as f64,
        Reduction::Mean => 0.0,
        Reduction::Sum => total,
    }
}

fn check_labels(labels: &[usize], expected_len: usize, classes: usize) -> Result<()> {
    if labels.len() != expected_len {
        return Err(Error::DimensionMismatch {
            expected: expected_len,
            found: labels.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|l| **l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
    }
    Ok(())
}

/// Mean-reduced correspondence loss.
pub fn correspondence_loss(
    x: &CorrelationField,
    y_q: &GroundTruthAssignment,
    y_p: &GroundTruthAssignment,
) -> Result<f64> {
    correspondence_loss_with(x, y_q, y_p, Reduction::Mean)
}

/// `CE(X[1:, :], ȳ_q) + CE(X[:, 1:]ᵀ, ȳ_p)`. Query row `i + 1` is labeled
/// by `y_q[i]`, reference column `j + 1` by `y_p[j]`. The background row
/// and column are not supervised.
pub fn correspondence_loss_with(
    x: &CorrelationField,
    y_q: &GroundTruthAssignment,
    y_p: &GroundTruthAssignment,
    reduction: Reduction,
) -> Result<f64> {
    let (rows, cols) = x.shape();
    check_labels(&y_q.labels, rows - 1, cols)?;
    check_labels(&y_p.labels, cols - 1, rows)?;
    let row_nll: f64 = y_q
        .labels
        .iter()
        .enumerate()
        .map(|(i, &j)| -x.row_log_prob(i + 1, j))
        .sum();
    let col_nll: f64 = y_p
        .labels
        .iter()
        .enumerate()
        .map(|(j, &i)| -x.col_log_prob(i, j + 1))
        .sum();
    Ok(reduce(row_nll, rows - 1, reduction) + reduce(col_nll, cols - 1, reduction))
}

/// Weighted BCE with class-balanced weights and mean reduction.
pub fn overlap_loss(o_hat: &OverlapScores, o_bar: &OverlapScores) -> Result<f64> {
    overlap_loss_with(o_hat, o_bar, &LossConfig::default())
}

/// `−reduce[w_pos·ō·log ô + w_neg·(1 − ō)·log(1 − ô)]` over every entry,
/// background included.
pub fn overlap_loss_with(o_hat: &OverlapScores, o_bar: &OverlapScores, cfg: &LossConfig) -> Result<f64> {
    if o_hat.len() != o_bar.len() {
        return Err(Error::DimensionMismatch {
            expected: o_bar.len(),
            found: o_hat.len(),
        });
    }
    if let Some(v) = o_bar.values().iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::invalid(format!("overlap label {v} is not binary")));
    }
    let n = o_bar.len();
    let n_pos = o_bar.values().iter().filter(|v| **v == 1.0).count();
    let n_neg = n - n_pos;
    let (w_pos, w_neg) = match cfg.overlap_weighting {
        OverlapWeighting::ClassBalanced if n_pos > 0 && n_neg > 0 => {
            (n_neg as f64 / n as f64, n_pos as f64 / n as f64)
        }
        _ => (1.0, 1.0),
    };
    let total: f64 = o_hat
        .values()
        .iter()
        .zip(o_bar.values())
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1.0 {
                -w_pos * p.ln()
            } else {
                -w_neg * (1.0 - p).ln()
            }
        })
        .sum();
    Ok(reduce(total, n, cfg.reduction))
}

/// Everything one decoder stage is supervised with.
#[derive(Clone, Debug, PartialEq)]
pub struct LossStage {
    pub correlation: CorrelationField,
    pub query_assignment: GroundTruthAssignment,
    pub reference_assignment: GroundTruthAssignment,
    pub query_overlap: OverlapScores,
    pub query_overlap_labels: OverlapScores,
    pub reference_overlap: OverlapScores,
    pub reference_overlap_labels: OverlapScores,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLoss {
    pub l_x: f64,
    pub l_o: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_x: f64,
    pub l_o: f64,
    pub total: f64,
    pub stages: Vec<StageLoss>,
}

pub fn stage_loss(stage: &LossStage, cfg: &LossConfig) -> Result<StageLoss> {
    let l_x = correspondence_loss_with(
        &stage.correlation,
        &stage.query_assignment,
        &stage.reference_assignment,
        cfg.reduction,
    )?;
    let l_o = overlap_loss_with(&stage.query_overlap, &stage.query_overlap_labels, cfg)?
        + overlap_loss_with(&stage.reference_overlap, &stage.reference_overlap_labels, cfg)?;
    Ok(StageLoss { l_x, l_o })
}

/// Sum of `l_x + l_o` over the given stages.
pub fn total_loss(stages: &[LossStage], cfg: &LossConfig) -> Result<LossBreakdown> {
    let stages = stages.iter().map(|s| stage_loss(s, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown {
        l_x: stages.iter().map(|s| s.l_x).sum(),
        l_o: stages.iter().map(|s| s.l_o).sum(),
        total: stages.iter().map(|s| s.l_x + s.l_o).sum(),
        stages,
    })
}

/// One stage of a replay manifest. `correlation` is a CSV dump of scaled
/// logits; relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageManifest {
    pub correlation: PathBuf,
    pub query_labels: Vec<usize>,
    pub reference_labels: Vec<usize>,
    pub query_overlap: Vec<f64>,
    pub reference_overlap: Vec<f64>,
    /// Defaults to the overlap bits implied by the labels.
    #[serde(default)]
    pub query_overlap_labels: Option<Vec<f64>>,
    #[serde(default)]
    pub reference_overlap_labels: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossManifest {
    #[serde(default)]
    pub config: LossConfig,
    pub stages: Vec<StageManifest>,
}

fn implied_bits(labels: &[usize]) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(labels.iter().map(|l| if *l > 0 { 1.0 } else { 0.0 }))
        .collect()
}

impl LossManifest {
    pub fn load(path: &Path) -> Result<(Self, Vec<LossStage>)> {
        let text = std::fs::read_to_string(path)?;
        let manifest: LossManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let stages = manifest
            .stages
            .iter()
            .map(|s| {
                let labels_q = s.query_overlap_labels.clone().unwrap_or_else(|| implied_bits(&s.query_labels));
                let labels_p = s
                    .reference_overlap_labels
                    .clone()
                    .unwrap_or_else(|| implied_bits(&s.reference_labels));
                Ok(LossStage {
                    correlation: CorrelationField::read_csv(&base.join(&s.correlation))?,
                    query_assignment: GroundTruthAssignment {
                        labels: s.query_labels.clone(),
                    },
                    reference_assignment: GroundTruthAssignment {
                        labels: s.reference_labels.clone(),
                    },
                    query_overlap: OverlapScores::new(s.query_overlap.clone())?,
                    query_overlap_labels: OverlapScores::new(labels_q)?,
                    reference_overlap: OverlapScores::new(s.reference_overlap.clone())?,
                    reference_overlap_labels: OverlapScores::new(labels_p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((manifest, stages))
    }
}
