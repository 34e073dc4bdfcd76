use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::gridio::{LabelMask, ProbMap, IGNORE};
use crate::hierinfer::{self, Thresholds};
use crate::taxonomy::TaxonomyTree;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    F1,
    Dice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafCalibration {
    pub tau: f64,
    /// Objective with the leaf ungated.
    pub score_at_zero: f64,
    pub score_at_tau: f64,
    /// The leaf never occurs in the annotations; its threshold stays 0.
    pub no_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub objective: Objective,
    pub step: f64,
    pub thresholds: Thresholds,
    pub leaves: BTreeMap<String, LeafCalibration>,
}

impl Calibration {
    pub fn no_support(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .filter(|(_, c)| c.no_support)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// `{0, step, 2·step, …}` up to and including 1.
pub fn tau_grid(step: f64) -> Result<Vec<f64>, MetricsError> {
    if !(step > 0.0 && step < 1.0) {
        return Err(MetricsError::InvalidStep(step));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() < 1e-9 {
        // k / n keeps grid points such as 0.65 at their nearest double.
        let n = n as u64;
        return Ok((0..=n).map(|k| k as f64 / n as f64).collect());
    }
    let mut out: Vec<f64> = (0..).map(|k| k as f64 * step).take_while(|&t| t < 1.0).collect();
    out.push(1.0);
    Ok(out)
}

fn score(tp: u64, fp: u64, fn_: u64, objective: Objective) -> f64 {
    match objective {
        Objective::F1 => {
            if tp == 0 {
                return 0.0;
            }
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fn_) as f64;
            2.0 * p * r / (p + r)
        }
        Objective::Dice => {
            let den = 2 * tp + fp + fn_;
            if den == 0 {
                0.0
            } else {
                2.0 * tp as f64 / den as f64
            }
        }
    }
}

/// Sweeps one threshold per leaf, holding every other leaf ungated, and
/// keeps the lowest threshold that maximises that leaf's objective on the
/// validation set.
///
/// Gating only moves pixels from the gated leaf to misc, so the leaf's score
/// at a threshold depends only on the confidences of pixels predicted as that
/// leaf; the sweep works on those sorted confidences rather than
/// re-running inference per grid point.
pub fn calibrate_thresholds(
    maps: &[ProbMap],
    gts: &[LabelMask],
    tree: &TaxonomyTree,
    objective: Objective,
    step: f64,
) -> Result<Calibration, MetricsError> {
    if maps.is_empty() {
        return Err(MetricsError::EmptyValidationSet);
    }
    if maps.len() != gts.len() {
        return Err(MetricsError::CountMismatch {
            preds: maps.len(),
            gts: gts.len(),
        });
    }
    let grid = tau_grid(step)?;
    let leaves = tree.num_leaves();

    // Per leaf: (leaf-rank confidence, annotated as this leaf) of every
    // pixel predicted as that leaf, and the leaf's annotated pixel count.
    let mut hits: Vec<Vec<(f32, bool)>> = vec![Vec::new(); leaves];
    let mut support = vec![0u64; leaves];
    for (index, (map, gt)) in maps.iter().zip(gts).enumerate() {
        if map.dims() != gt.dims() {
            return Err(MetricsError::ShapeMismatch {
                index,
                pred: map.dims(),
                gt: gt.dims(),
            });
        }
        let pred = hierinfer::infer(map, tree)?;
        let conf = &pred.layer(0).confidence;
        for (p, (&leaf, &g)) in pred.chosen_leaf().iter().zip(gt.data()).enumerate() {
            if g == IGNORE {
                continue;
            }
            if g as usize >= leaves {
                return Err(MetricsError::LabelOutOfRange { index, value: g });
            }
            support[g as usize] += 1;
            hits[leaf as usize].push((conf[p], g == leaf));
        }
    }

    let mut thresholds = Thresholds::new();
    let mut report = BTreeMap::new();
    for c in 0..leaves {
        if Some(c) == tree.misc_channel() {
            continue;
        }
        let id = tree.leaf_id(c).to_string();
        let mut entries = std::mem::take(&mut hits[c]);
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        // correct[i] = true positives among entries[i..]
        let mut correct = vec![0u64; entries.len() + 1];
        for i in (0..entries.len()).rev() {
            correct[i] = correct[i + 1] + entries[i].1 as u64;
        }
        let at = |tau: f64| {
            let start = entries.partition_point(|e| (e.0 as f64) < tau);
            let tp = correct[start];
            let fp = (entries.len() - start) as u64 - tp;
            score(tp, fp, support[c] - tp, objective)
        };
        let score_at_zero = at(0.0);
        let no_support = support[c] == 0;
        let (mut best_tau, mut best) = (0.0, score_at_zero);
        if !no_support {
            for &tau in &grid[1..] {
                let s = at(tau);
                if s > best {
                    (best_tau, best) = (tau, s);
                }
            }
        }
        thresholds.insert(id.clone(), best_tau);
        report.insert(
            id,
            LeafCalibration {
                tau: best_tau,
                score_at_zero,
                score_at_tau: best,
                no_support,
            },
        );
    }
    Ok(Calibration {
        objective,
        step,
        thresholds,
        leaves: report,
    })
}
