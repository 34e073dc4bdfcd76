//! Class-balanced weights from the effective number of samples, counted in
//! pixels.
//!
//! A class seen `n` times has effective number `(1 - βⁿ) / (1 - β)` and
//! weight `(1 - β) / (1 - βⁿ)`. Small `β` tends to uniform weights, `β → 1`
//! to inverse-frequency weights.

use serde::{Deserialize, Serialize};

use crate::gridio::{LabelMask, IGNORE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BalanceError {
    #[error("label {value} is out of range for {classes} classes")]
    OutOfRange { value: u8, classes: usize },
    #[error("beta must lie in [0, 1), got {0}")]
    InvalidBeta(f64),
}

/// Pooled per-class pixel counts. Ignore pixels are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub counts: Vec<u64>,
    /// Non-ignore pixels seen.
    pub total: u64,
    pub ignored: u64,
}

impl PixelCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![0; num_classes],
            total: 0,
            ignored: 0,
        }
    }

    pub fn add_mask(&mut self, mask: &LabelMask) -> Result<(), BalanceError> {
        let classes = self.counts.len();
        for &v in mask.data() {
            if v == IGNORE {
                self.ignored += 1;
                continue;
            }
            let slot = self
                .counts
                .get_mut(v as usize)
                .ok_or(BalanceError::OutOfRange { value: v, classes })?;
            *slot += 1;
            self.total += 1;
        }
        Ok(())
    }

    /// Counts over disjoint mask sets combine by addition.
    pub fn merge(&mut self, other: &PixelCounts) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self.ignored += other.ignored;
    }
}

pub fn count_pixels<'a>(
    masks: impl IntoIterator<Item = &'a LabelMask>,
    num_classes: usize,
) -> Result<PixelCounts, BalanceError> {
    let mut counts = PixelCounts::zeros(num_classes);
    for m in masks {
        counts.add_mask(m)?;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    /// Rescale so the mean over classes with support is one.
    #[default]
    MeanOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub beta: f64,
    pub normalization: Normalization,
    pub weights: Vec<f64>,
}

// 1 - βⁿ as -expm1(n·ln β); once βⁿ underflows this is exactly 1.
fn one_minus_pow(n: u64, beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    -(n as f64 * (beta - 1.0).ln_1p()).exp_m1()
}

/// `(1 - βⁿ) / (1 - β)`.
pub fn effective_number(n: u64, beta: f64) -> f64 {
    match n {
        0 => 0.0,
        1 => 1.0,
        _ => one_minus_pow(n, beta) / (1.0 - beta),
    }
}

/// `(1 - β) / (1 - βⁿ)`, the reciprocal of [`effective_number`].
pub fn class_weight(n: u64, beta: f64) -> f64 {
    match n {
        0 => 0.0,
        1 => 1.0,
        _ => (1.0 - beta) / one_minus_pow(n, beta),
    }
}

/// Classes without pixels get weight 0 and are left out of the
/// normalisation.
pub fn effective_weights(
    counts: &PixelCounts,
    beta: f64,
    normalization: Normalization,
) -> Result<ClassWeights, BalanceError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(BalanceError::InvalidBeta(beta));
    }
    let mut weights: Vec<f64> = counts
        .counts
        .iter()
        .map(|&n| class_weight(n, beta))
        .collect();
    if normalization == Normalization::MeanOne {
        let present: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
        if !present.is_empty() {
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            weights.iter_mut().for_each(|w| *w /= mean);
        }
    }
    Ok(ClassWeights {
        beta,
        normalization,
        weights,
    })
}
