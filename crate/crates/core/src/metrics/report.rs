use serde::{Deserialize, Serialize};

use super::{
    class_scores, confusion_at_rank, coverage_pairs, coverage_regression, macro_mean, ClassScore,
    ConfusionMatrix, LeafGrid, MetricPolicy, MetricsError, RegressionStats,
};
use crate::hierinfer::Thresholds;
use crate::taxonomy::TaxonomyTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub taxonomy_sha256: String,
    pub thresholds: Option<Thresholds>,
    pub policy: MetricPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: String,
    pub confusion: ConfusionMatrix,
    pub normalized: Vec<Vec<f64>>,
    pub unsupported_rows: Vec<String>,
    pub classes: Vec<ClassScore>,
    pub macro_f1: Option<f64>,
    pub macro_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEntry {
    pub class_id: String,
    pub points: usize,
    pub stats: Option<RegressionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ReportConfig,
    pub images: Vec<String>,
    /// One entry per taxonomy rank, leaf first; the root rank is omitted.
    pub ranks: Vec<RankReport>,
    /// Leaf-rank coverage regression per class.
    pub coverage: Vec<RegressionEntry>,
}

/// Runs the full battery over paired predictions and annotations.
pub fn evaluate<P: LeafGrid, G: LeafGrid>(
    image_ids: &[String],
    preds: &[P],
    gts: &[G],
    tree: &TaxonomyTree,
    policy: &MetricPolicy,
    thresholds: Option<&Thresholds>,
) -> Result<EvaluationReport, MetricsError> {
    let ranked = &tree.rank_order()[..tree.rank_order().len() - 1];
    let ranks = ranked
        .iter()
        .map(|rank| {
            let confusion = confusion_at_rank(preds, gts, tree, rank)?;
            let classes = class_scores(&confusion, tree, policy)?;
            Ok(RankReport {
                rank: rank.clone(),
                normalized: confusion.normalized(),
                unsupported_rows: confusion.unsupported_rows(),
                macro_f1: macro_mean(&classes, |s| s.f1),
                macro_dice: macro_mean(&classes, |s| s.dice),
                confusion,
                classes,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let leaf_rank = &tree.rank_order()[0];
    let pairs = coverage_pairs(image_ids, preds, gts, tree, leaf_rank)?;
    let coverage = tree
        .rank_class_ids(0)
        .into_iter()
        .map(|class_id| {
            let mine: Vec<_> = pairs.iter().filter(|p| p.class_id == class_id).cloned().collect();
            RegressionEntry {
                points: mine.len(),
                stats: coverage_regression(&mine).ok(),
                class_id,
            }
        })
        .collect();

    Ok(EvaluationReport {
        config: ReportConfig {
            taxonomy_sha256: tree.content_hash(),
            thresholds: thresholds.cloned(),
            policy: policy.clone(),
        },
        images: image_ids.to_vec(),
        ranks,
        coverage,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn rank(&self, rank: &str) -> Option<&RankReport> {
        self.ranks.iter().find(|r| r.rank == rank)
    }

    /// One row per (rank, class) with counts and scores.
    pub fn per_class_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "rank", "class_id", "support", "predicted", "tp", "fp", "fn", "precision", "recall",
            "f1", "dice", "included",
        ])
        .expect("in-memory write");
        for r in &self.ranks {
            for c in &r.classes {
                w.write_record([
                    r.rank.clone(),
                    c.class_id.clone(),
                    c.support.to_string(),
                    c.predicted.to_string(),
                    c.tp.to_string(),
                    c.fp.to_string(),
                    c.fn_.to_string(),
                    opt(c.precision),
                    opt(c.recall),
                    opt(c.f1),
                    opt(c.dice),
                    c.included.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Row-normalised confusion grid of one rank, class ids as headers.
    pub fn confusion_csv(&self, rank: &str) -> Option<String> {
        let r = self.rank(rank)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["annotated\\predicted".to_string()];
        header.extend(r.confusion.class_ids.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (id, row) in r.confusion.class_ids.iter().zip(&r.normalized) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        Some(String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))
    }
}
