//! Pixel-wise evaluation: rank-projected confusion matrices, per-class F1
//! and Dice over pooled pixels, image coverage regression and per-leaf
//! threshold calibration.
//!
//! Confusion rows are annotations and columns predictions, so a normalised
//! row reads "fraction of pixels annotated as X that were predicted as Y".

mod calibrate;
mod coverage;
mod report;

use serde::{Deserialize, Serialize};

use crate::gridio::{LabelMask, IGNORE};
use crate::hierinfer::{InferError, PredictionMap};
use crate::taxonomy::{TaxonomyError, TaxonomyTree, MISC_ID};

pub use calibrate::{calibrate_thresholds, tau_grid, Calibration, LeafCalibration, Objective};
pub use coverage::{
    coverage_pairs, coverage_regression, image_coverage, Coverage, CoveragePair, RegressionStats,
};
pub use report::{evaluate, EvaluationReport, RankReport, RegressionEntry, ReportConfig};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {gts} ground truths")]
    CountMismatch { preds: usize, gts: usize },
    #[error("pair {index}: prediction is {pred:?} but ground truth is {gt:?}")]
    ShapeMismatch {
        index: usize,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("pair {index}: label {value} is not a leaf channel")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("regression needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("the validation set is empty")]
    EmptyValidationSet,
    #[error("grid step must lie in (0, 1), got {0}")]
    InvalidStep(f64),
}

/// Anything that carries one leaf channel per pixel.
pub trait LeafGrid {
    fn dims(&self) -> (usize, usize);
    fn leaf_labels(&self) -> &[u8];
}

impl LeafGrid for LabelMask {
    fn dims(&self) -> (usize, usize) {
        LabelMask::dims(self)
    }
    fn leaf_labels(&self) -> &[u8] {
        self.data()
    }
}

impl LeafGrid for PredictionMap {
    fn dims(&self) -> (usize, usize) {
        PredictionMap::dims(self)
    }
    fn leaf_labels(&self) -> &[u8] {
        self.chosen_leaf()
    }
}

impl<T: LeafGrid + ?Sized> LeafGrid for &T {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn leaf_labels(&self) -> &[u8] {
        (**self).leaf_labels()
    }
}

/// Which classes enter macro averages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricPolicy {
    /// Count the taxonomy's unknown leaves (other-*) in macro averages.
    pub include_unknown: bool,
    pub include_misc: bool,
    /// Further class ids to leave out.
    pub exclude: Vec<String>,
}

impl Default for MetricPolicy {
    fn default() -> Self {
        Self {
            include_unknown: false,
            include_misc: true,
            exclude: Vec::new(),
        }
    }
}

impl MetricPolicy {
    pub fn includes(&self, tree: &TaxonomyTree, node: usize) -> bool {
        let id = &tree.node_at(node).id;
        if self.exclude.iter().any(|e| e == id) {
            return false;
        }
        if !self.include_unknown && tree.is_unknown(node) {
            return false;
        }
        self.include_misc || id != MISC_ID
    }
}

/// `K×K` pixel counts at one rank; rows annotated, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rank: String,
    pub class_ids: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(rank: &str, class_ids: Vec<String>) -> Self {
        let k = class_ids.len();
        Self {
            rank: rank.to_string(),
            class_ids,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Annotated pixels of class `i`.
    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Predicted pixels of class `j`.
    pub fn col_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Rows divided by their totals; rows without support stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    /// Classes with no annotated pixels.
    pub fn unsupported_rows(&self) -> Vec<String> {
        (0..self.len())
            .filter(|&i| self.row_total(i) == 0)
            .map(|i| self.class_ids[i].clone())
            .collect()
    }

    /// Elementwise sum with a matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        debug_assert_eq!(self.class_ids, other.class_ids);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Re-bins this matrix into a coarser rank of the same tree.
    pub fn rebin(&self, tree: &TaxonomyTree, rank: &str) -> Result<ConfusionMatrix, MetricsError> {
        let target = tree.rank_index(rank)?;
        let classes = tree.rank_class_ids(target);
        let map: Vec<usize> = self
            .class_ids
            .iter()
            .map(|id| {
                let node = tree.node_index(id)?;
                Ok(tree.rank_class_of(target, tree.first_leaf_channel(node)))
            })
            .collect::<Result<_, TaxonomyError>>()?;
        let mut out = ConfusionMatrix::zeros(rank, classes);
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                out.counts[map[i]][map[j]] += c;
            }
        }
        Ok(out)
    }
}

fn check_pairs<P: LeafGrid, G: LeafGrid>(preds: &[P], gts: &[G]) -> Result<(), MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::CountMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    for (index, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.dims() != g.dims() {
            return Err(MetricsError::ShapeMismatch {
                index,
                pred: p.dims(),
                gt: g.dims(),
            });
        }
    }
    Ok(())
}

/// Tallies predictions against annotations after projecting both to `rank`.
/// Pixels annotated as ignore are skipped.
pub fn confusion_at_rank<P: LeafGrid, G: LeafGrid>(
    preds: &[P],
    gts: &[G],
    tree: &TaxonomyTree,
    rank: &str,
) -> Result<ConfusionMatrix, MetricsError> {
    let r = tree.rank_index(rank)?;
    check_pairs(preds, gts)?;
    let leaves = tree.num_leaves();
    let class_of: Vec<usize> = (0..leaves).map(|c| tree.rank_class_of(r, c)).collect();
    let mut cm = ConfusionMatrix::zeros(rank, tree.rank_class_ids(r));
    for (index, (p, g)) in preds.iter().zip(gts).enumerate() {
        for (&pv, &gv) in p.leaf_labels().iter().zip(g.leaf_labels()) {
            if gv == IGNORE {
                continue;
            }
            for v in [gv, pv] {
                if v as usize >= leaves {
                    return Err(MetricsError::LabelOutOfRange { index, value: v });
                }
            }
            cm.counts[class_of[gv as usize]][class_of[pv as usize]] += 1;
        }
    }
    Ok(cm)
}

/// Pooled per-class counts and scores at one rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: String,
    /// Annotated pixels.
    pub support: u64,
    /// Predicted pixels.
    pub predicted: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// `None` when the class is absent from both prediction and annotation.
    pub f1: Option<f64>,
    pub dice: Option<f64>,
    /// Whether the class enters macro averages.
    pub included: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ClassScore {
    fn from_counts(class_id: String, tp: u64, support: u64, predicted: u64, included: bool) -> Self {
        let fp = predicted - tp;
        let fn_ = support - tp;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = match (tp, fp + fn_) {
            (0, 0) => None,
            (0, _) => Some(0.0),
            _ => {
                let (p, r) = (precision.unwrap(), recall.unwrap());
                Some(2.0 * p * r / (p + r))
            }
        };
        let dice = ratio(2 * tp, predicted + support);
        Self {
            class_id,
            support,
            predicted,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            dice,
            included,
        }
    }
}

/// Per-class scores from a confusion matrix.
pub fn class_scores(
    cm: &ConfusionMatrix,
    tree: &TaxonomyTree,
    policy: &MetricPolicy,
) -> Result<Vec<ClassScore>, MetricsError> {
    (0..cm.len())
        .map(|i| {
            let node = tree.node_index(&cm.class_ids[i])?;
            Ok(ClassScore::from_counts(
                cm.class_ids[i].clone(),
                cm.counts[i][i],
                cm.row_total(i),
                cm.col_total(i),
                policy.includes(tree, node),
            ))
        })
        .collect()
}

/// Mean over included classes that have a defined score.
pub fn macro_mean(scores: &[ClassScore], pick: impl Fn(&ClassScore) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = scores
        .iter()
        .filter(|s| s.included)
        .filter_map(pick)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub per_class: Vec<(String, Option<f64>)>,
    pub macro_f1: Option<f64>,
}

pub fn f1_scores<P: LeafGrid, G: LeafGrid>(
    preds: &[P],
    gts: &[G],
    tree: &TaxonomyTree,
    rank: &str,
    policy: &MetricPolicy,
) -> Result<F1Scores, MetricsError> {
    let cm = confusion_at_rank(preds, gts, tree, rank)?;
    let scores = class_scores(&cm, tree, policy)?;
    Ok(F1Scores {
        macro_f1: macro_mean(&scores, |s| s.f1),
        per_class: scores.into_iter().map(|s| (s.class_id, s.f1)).collect(),
    })
}

/// `2|P∩G| / (|P| + |G|)` per class at `rank`.
pub fn dice_scores<P: LeafGrid, G: LeafGrid>(
    preds: &[P],
    gts: &[G],
    tree: &TaxonomyTree,
    rank: &str,
    policy: &MetricPolicy,
) -> Result<Vec<(String, Option<f64>)>, MetricsError> {
    let cm = confusion_at_rank(preds, gts, tree, rank)?;
    Ok(class_scores(&cm, tree, policy)?
        .into_iter()
        .map(|s| (s.class_id, s.dice))
        .collect())
}
