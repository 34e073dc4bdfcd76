use serde::{Deserialize, Serialize};

use super::{check_pairs, LeafGrid, MetricsError};
use crate::gridio::IGNORE;
use crate::taxonomy::TaxonomyTree;

/// Fraction of an image's non-ignore pixels that carry a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub fraction: f64,
    /// False when the image has no non-ignore pixels; `fraction` is then 0.
    pub defined: bool,
}

pub fn image_coverage(grid: &impl LeafGrid, class: u8) -> Coverage {
    let (mut hits, mut support) = (0u64, 0u64);
    for &v in grid.leaf_labels() {
        if v != IGNORE {
            support += 1;
            hits += (v == class) as u64;
        }
    }
    match support {
        0 => Coverage {
            fraction: 0.0,
            defined: false,
        },
        n => Coverage {
            fraction: hits as f64 / n as f64,
            defined: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePair {
    pub image_id: String,
    pub class_id: String,
    pub annotated_fraction: f64,
    pub predicted_fraction: f64,
}

/// Annotated and predicted coverage of every class at `rank`, per image.
///
/// Both fractions use the annotation's non-ignore pixels as denominator, and
/// predictions are counted on those pixels only. A pair is emitted when the
/// class occurs in the annotation or the prediction of that image; images
/// without annotated pixels yield no pairs.
pub fn coverage_pairs<P: LeafGrid, G: LeafGrid>(
    image_ids: &[String],
    preds: &[P],
    gts: &[G],
    tree: &TaxonomyTree,
    rank: &str,
) -> Result<Vec<CoveragePair>, MetricsError> {
    let r = tree.rank_index(rank)?;
    check_pairs(preds, gts)?;
    let classes = tree.rank_class_ids(r);
    let leaves = tree.num_leaves();
    let mut out = Vec::new();
    for (index, ((id, p), g)) in image_ids.iter().zip(preds).zip(gts).enumerate() {
        let mut annotated = vec![0u64; classes.len()];
        let mut predicted = vec![0u64; classes.len()];
        let mut support = 0u64;
        for (&pv, &gv) in p.leaf_labels().iter().zip(g.leaf_labels()) {
            if gv == IGNORE {
                continue;
            }
            for v in [gv, pv] {
                if v as usize >= leaves {
                    return Err(MetricsError::LabelOutOfRange { index, value: v });
                }
            }
            support += 1;
            annotated[tree.rank_class_of(r, gv as usize)] += 1;
            predicted[tree.rank_class_of(r, pv as usize)] += 1;
        }
        if support == 0 {
            continue;
        }
        for (k, class_id) in classes.iter().enumerate() {
            if annotated[k] + predicted[k] == 0 {
                continue;
            }
            out.push(CoveragePair {
                image_id: id.clone(),
                class_id: class_id.clone(),
                annotated_fraction: annotated[k] as f64 / support as f64,
                predicted_fraction: predicted[k] as f64 / support as f64,
            });
        }
    }
    Ok(out)
}

/// Least-squares fit of predicted (y) on annotated (x) coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionStats {
    pub class_id: String,
    pub n: usize,
    /// `None` when the annotated coverages have no variance.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// `1 - SS_res / SS_tot` of the fitted line.
    pub r2_fit: Option<f64>,
    /// `1 - Σ(y - x)² / Σ(y - ȳ)²`, agreement with the identity line.
    /// Undefined when the predicted coverages have no variance.
    pub r2_identity: Option<f64>,
    /// Root mean squared difference between predicted and annotated coverage.
    pub rmse: f64,
    pub zero_x_variance: bool,
}

pub fn coverage_regression(pairs: &[CoveragePair]) -> Result<RegressionStats, MetricsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(MetricsError::TooFewPoints(n));
    }
    let class_id = pairs[0].class_id.clone();
    let xs: Vec<f64> = pairs.iter().map(|p| p.annotated_fraction).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.predicted_fraction).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let ss_identity: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - x).powi(2)).sum();

    let zero_x_variance = sxx == 0.0;
    let (slope, intercept, r2_fit) = if zero_x_variance {
        (None, None, None)
    } else {
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
            .sum();
        let r2 = (syy > 0.0).then(|| (1.0 - ss_res / syy).clamp(0.0, 1.0));
        (Some(slope), Some(intercept), r2)
    };
    let r2_identity = (syy > 0.0).then(|| 1.0 - ss_identity / syy);
    Ok(RegressionStats {
        class_id,
        n,
        slope,
        intercept,
        r2_fit,
        r2_identity,
        rmse: (ss_identity / n as f64).sqrt(),
        zero_x_variance,
    })
}
