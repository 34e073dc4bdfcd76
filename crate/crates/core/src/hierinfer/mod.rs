//! Hierarchical inference over a taxonomy.
//!
//! Leaf probabilities are summed up the tree, then each pixel descends from
//! the root, taking at every node the child with the largest aggregated mass.
//! Mass shared by sibling species keeps their common genus or family ahead
//! of a single competing leaf, which a flat argmax over leaves would pick.
//! Every rank records its chosen node and that node's aggregated mass as the
//! hierarchical confidence.

mod tta;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::gridio::{LabelMask, ProbMap, TilePlan};
use crate::taxonomy::TaxonomyTree;

pub use tta::{fuse_tta, Transform, TtaView};

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("probability map has {map} channels but the taxonomy binds {tree} leaves")]
    ChannelMismatch { map: usize, tree: usize },
    #[error("threshold given for unknown leaf {0:?}")]
    UnknownThresholdLeaf(String),
    #[error("threshold {value} for {leaf:?} is outside [0, 1]")]
    ThresholdOutOfRange { leaf: String, value: f64 },
    #[error("the misc leaf cannot carry a threshold")]
    MiscThreshold,
    #[error("thresholds need a misc leaf to fall back to")]
    NoMiscLeaf,
    #[error("prediction has {found} rank layers, the taxonomy has {expected} ranks")]
    RankMismatch { expected: usize, found: usize },
    #[error("TTA fusion needs at least one view")]
    EmptyViews,
    #[error("view {index} is {found:?} after its inverse transform, expected {expected:?}")]
    ViewShape {
        index: usize,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
}

/// Per-leaf decision thresholds keyed by leaf id.
pub type Thresholds = BTreeMap<String, f64>;

/// Aggregated probability of every taxonomy node at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProbMaps {
    height: usize,
    width: usize,
    nodes: usize,
    // pixel-major: values[pixel * nodes + node]
    values: Vec<f64>,
}

impl NodeProbMaps {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    /// All node values of one pixel, indexed by tree node index.
    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.nodes..(pixel + 1) * self.nodes]
    }

    pub fn value(&self, pixel: usize, node: usize) -> f64 {
        self.values[pixel * self.nodes + node]
    }

    /// Row-major grid of one node.
    pub fn node_grid(&self, node: usize) -> Vec<f64> {
        self.values.iter().skip(node).step_by(self.nodes).copied().collect()
    }
}

/// Sums leaf channels into every internal node.
pub fn aggregate_to_nodes(map: &ProbMap, tree: &TaxonomyTree) -> Result<NodeProbMaps, InferError> {
    check_channels(map, tree)?;
    let nodes = tree.num_nodes();
    let mut values = vec![0f64; map.height() * map.width() * nodes];
    values
        .par_chunks_mut(nodes)
        .zip(map.data().par_chunks(map.channels()))
        .for_each(|(out, px)| aggregate_pixel(px, tree, out));
    Ok(NodeProbMaps {
        height: map.height(),
        width: map.width(),
        nodes,
        values,
    })
}

fn aggregate_pixel(px: &[f32], tree: &TaxonomyTree, out: &mut [f64]) {
    // Nodes are stored in preorder, so reverse order visits children first.
    for node in (0..out.len()).rev() {
        out[node] = match tree.channel_of_node(node) {
            Some(c) => px[c] as f64,
            None => tree.children_of(node).iter().map(|&k| out[k]).sum(),
        };
    }
}

fn check_channels(map: &ProbMap, tree: &TaxonomyTree) -> Result<(), InferError> {
    if map.channels() != tree.num_leaves() {
        return Err(InferError::ChannelMismatch {
            map: map.channels(),
            tree: tree.num_leaves(),
        });
    }
    Ok(())
}

/// Chosen node and confidence of every pixel at one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankLayer {
    pub rank: String,
    /// Index into [`TaxonomyTree::rank_classes`] for this rank.
    pub choice: Vec<u16>,
    pub confidence: Vec<f32>,
}

/// Per-pixel hierarchical prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    height: usize,
    width: usize,
    chosen_leaf: Vec<u8>,
    layers: Vec<RankLayer>,
}

impl PredictionMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Leaf channel per pixel.
    pub fn chosen_leaf(&self) -> &[u8] {
        &self.chosen_leaf
    }

    pub fn leaf_mask(&self) -> LabelMask {
        LabelMask::new(self.height, self.width, self.chosen_leaf.clone()).expect("dims agree")
    }

    /// One layer per rank, in the taxonomy's rank order (leaf first).
    pub fn layers(&self) -> &[RankLayer] {
        &self.layers
    }

    pub fn layer(&self, rank: usize) -> &RankLayer {
        &self.layers[rank]
    }

    /// Tree node chosen at `rank` for `pixel`.
    pub fn node_at(&self, tree: &TaxonomyTree, rank: usize, pixel: usize) -> usize {
        tree.rank_classes(rank)[self.layers[rank].choice[pixel] as usize]
    }

    /// Builds a prediction from a leaf-label raster. Confidences are unknown
    /// and set to zero; choices are projected through the tree.
    pub fn from_leaf_labels(tree: &TaxonomyTree, labels: &LabelMask) -> Self {
        let (height, width) = labels.dims();
        let mut pred = Self::empty(tree, height, width);
        for (p, &leaf) in labels.data().iter().enumerate() {
            pred.chosen_leaf[p] = leaf;
            if (leaf as usize) < tree.num_leaves() {
                pred.project_pixel(tree, p, |_| 0.0);
            }
        }
        pred
    }

    fn empty(tree: &TaxonomyTree, height: usize, width: usize) -> Self {
        let n = height * width;
        let layers = tree
            .rank_order()
            .iter()
            .map(|r| RankLayer {
                rank: r.clone(),
                choice: vec![0; n],
                confidence: vec![0.0; n],
            })
            .collect();
        Self {
            height,
            width,
            chosen_leaf: vec![0; n],
            layers,
        }
    }

    fn project_pixel(&mut self, tree: &TaxonomyTree, p: usize, mass: impl Fn(usize) -> f64) {
        let leaf = self.chosen_leaf[p] as usize;
        for (r, layer) in self.layers.iter_mut().enumerate() {
            layer.choice[p] = tree.rank_class_of(r, leaf) as u16;
            layer.confidence[p] = mass(tree.project(r, leaf)).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Root-to-leaf argmax descent over aggregated node masses.
///
/// Ties go to the child whose first bound channel is lowest; children are
/// stored in that order, so the first maximum wins.
pub fn hierarchical_argmax(nodes: &NodeProbMaps, tree: &TaxonomyTree) -> PredictionMap {
    let (h, w) = nodes.dims();
    let mut pred = PredictionMap::empty(tree, h, w);
    let root = tree.root_index();
    for p in 0..h * w {
        let v = nodes.pixel(p);
        let mut node = root;
        while !tree.is_leaf(node) {
            let kids = tree.children_of(node);
            let mut best = kids[0];
            for &k in &kids[1..] {
                if v[k] > v[best] {
                    best = k;
                }
            }
            node = best;
        }
        pred.chosen_leaf[p] = tree.channel_of_node(node).expect("leaf is bound") as u8;
        pred.project_pixel(tree, p, |n| v[n]);
    }
    pred
}

/// Convenience: aggregation followed by the descent.
pub fn infer(map: &ProbMap, tree: &TaxonomyTree) -> Result<PredictionMap, InferError> {
    Ok(hierarchical_argmax(&aggregate_to_nodes(map, tree)?, tree))
}

/// [`infer`] one tile at a time, so node masses are only held for a tile.
/// The descent is per pixel, so overlapping tiles agree and the result
/// equals whole-image inference.
pub fn infer_tiled(map: &ProbMap, tree: &TaxonomyTree, plan: &TilePlan) -> Result<PredictionMap, InferError> {
    check_channels(map, tree)?;
    let (h, w) = map.dims();
    let t = plan.tile_size;
    let mut pred = PredictionMap::empty(tree, h, w);
    for &(r0, c0) in &plan.origins {
        let tile = infer(&map.crop((r0, c0), t, t), tree)?;
        for r in 0..t {
            let src = r * t..(r + 1) * t;
            let dst = (r0 + r) * w + c0..(r0 + r) * w + c0 + t;
            pred.chosen_leaf[dst.clone()].copy_from_slice(&tile.chosen_leaf[src.clone()]);
            for (out, layer) in pred.layers.iter_mut().zip(&tile.layers) {
                out.choice[dst.clone()].copy_from_slice(&layer.choice[src.clone()]);
                out.confidence[dst.clone()].copy_from_slice(&layer.confidence[src.clone()]);
            }
        }
    }
    Ok(pred)
}

/// Plain argmax over leaf channels (lowest channel on ties), projected
/// through the tree. Baseline for comparison with the hierarchical descent.
pub fn flat_argmax(map: &ProbMap, tree: &TaxonomyTree) -> Result<PredictionMap, InferError> {
    check_channels(map, tree)?;
    let (h, w) = map.dims();
    let mut pred = PredictionMap::empty(tree, h, w);
    for (p, px) in map.pixels().enumerate() {
        let mut best = 0;
        for (c, &v) in px.iter().enumerate().skip(1) {
            if v > px[best] {
                best = c;
            }
        }
        pred.chosen_leaf[p] = best as u8;
        pred.project_pixel(tree, p, |n| {
            tree.leaf_channels_under(n).iter().map(|&c| px[c] as f64).sum()
        });
    }
    Ok(pred)
}

/// Reassigns pixels whose leaf-rank confidence falls below their leaf's
/// threshold to the misc leaf. Confidences are carried over unchanged.
pub fn apply_confidence_thresholds(
    pred: &PredictionMap,
    thresholds: &Thresholds,
    tree: &TaxonomyTree,
) -> Result<PredictionMap, InferError> {
    if pred.layers.len() != tree.rank_order().len() {
        return Err(InferError::RankMismatch {
            expected: tree.rank_order().len(),
            found: pred.layers.len(),
        });
    }
    let gate = threshold_table(thresholds, tree)?;
    let mut out = pred.clone();
    let Some(misc) = tree.misc_channel() else {
        return Ok(out);
    };
    for p in 0..out.chosen_leaf.len() {
        let leaf = out.chosen_leaf[p] as usize;
        let Some(tau) = gate.get(leaf).copied().flatten() else {
            continue;
        };
        if (out.layers[0].confidence[p] as f64) < tau {
            out.chosen_leaf[p] = misc as u8;
            for (r, layer) in out.layers.iter_mut().enumerate() {
                layer.choice[p] = tree.rank_class_of(r, misc) as u16;
            }
        }
    }
    Ok(out)
}

/// Per-channel thresholds, validated against the tree.
pub(crate) fn threshold_table(
    thresholds: &Thresholds,
    tree: &TaxonomyTree,
) -> Result<Vec<Option<f64>>, InferError> {
    let mut gate = vec![None; tree.num_leaves()];
    for (leaf, &tau) in thresholds {
        let c = tree
            .channel_of(leaf)
            .ok_or_else(|| InferError::UnknownThresholdLeaf(leaf.clone()))?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(InferError::ThresholdOutOfRange {
                leaf: leaf.clone(),
                value: tau,
            });
        }
        if Some(c) == tree.misc_channel() {
            return Err(InferError::MiscThreshold);
        }
        gate[c] = Some(tau);
    }
    if tree.misc_channel().is_none() && gate.iter().any(|g| g.is_some_and(|t| t > 0.0)) {
        return Err(InferError::NoMiscLeaf);
    }
    Ok(gate)
}
