//! Taxonomy-aware inference and evaluation for multi-species plant and
//! damage semantic segmentation.
//!
//! Per-pixel class probabilities from an upstream segmentation network are
//! aggregated up a label taxonomy, resolved by a root-to-leaf argmax descent,
//! optionally gated by per-class confidence thresholds, and scored with
//! rank-aware confusion matrices, pixel F1/Dice and coverage regression.

pub mod balance;
pub mod cli;
pub mod gridio;
pub mod hierinfer;
pub mod metrics;
pub mod synthfield;
pub mod taxonomy;
