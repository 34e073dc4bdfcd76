//! Deterministic synthetic fields and a brute-force reference for the
//! hierarchical argmax.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(spec.seed)`.
//! Pixels are visited in row-major order and each one consumes exactly
//! `2 + channels` uniform doubles (flip draw, wrong-class draw, then one
//! exponential per channel), so two specs that differ only in `flip_prob`
//! see the same draws and the flipped pixel set grows monotonically with
//! the flip probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridio::{LabelMask, ProbMap};
use crate::taxonomy::{TaxonNode, TaxonomyFile, TaxonomyTree};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("field must have positive size, got {0}x{1}")]
    ZeroSize(usize, usize),
    #[error("blob {index} does not fit inside the image")]
    BlobOutOfBounds { index: usize },
    #[error("blob {index} names {leaf:?}, which is not a leaf")]
    UnknownLeaf { index: usize, leaf: String },
    #[error("the taxonomy has no misc leaf to use as background")]
    NoMisc,
    #[error("flip_prob must lie in [0, 1), got {0}")]
    FlipProb(f64),
    #[error("sharpness must be positive, got {0}")]
    Sharpness(f64),
    #[error("distribution has {found} entries, the tree has {expected} leaves")]
    LengthMismatch { expected: usize, found: usize },
    #[error("distribution sums to {0}")]
    NotADistribution(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub leaf: String,
    /// `[row, col]` in pixel units; pixel `(r, c)` has its centre at
    /// `(r + 0.5, c + 0.5)`.
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub flip_prob: f64,
    /// Weight of the one-hot target against a flat Dirichlet draw. Above 1
    /// the target always holds more than half of the mass.
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Taxonomy file, relative to the spec file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<String>,
    pub blobs: Vec<Blob>,
    pub noise: Noise,
}

fn default_name() -> String {
    "field".to_string()
}

impl FieldSpec {
    fn check(&self, tree: &TaxonomyTree) -> Result<Vec<u8>, SynthError> {
        if self.height == 0 || self.width == 0 {
            return Err(SynthError::ZeroSize(self.height, self.width));
        }
        if !(0.0..1.0).contains(&self.noise.flip_prob) {
            return Err(SynthError::FlipProb(self.noise.flip_prob));
        }
        if !(self.noise.sharpness > 0.0) {
            return Err(SynthError::Sharpness(self.noise.sharpness));
        }
        if tree.misc_channel().is_none() {
            return Err(SynthError::NoMisc);
        }
        let (h, w) = (self.height as f64, self.width as f64);
        self.blobs
            .iter()
            .enumerate()
            .map(|(index, b)| {
                let [y, x] = b.center;
                let fits = b.radius >= 0.0
                    && y - b.radius >= 0.0
                    && x - b.radius >= 0.0
                    && y + b.radius <= h
                    && x + b.radius <= w;
                if !fits {
                    return Err(SynthError::BlobOutOfBounds { index });
                }
                tree.channel_of(&b.leaf)
                    .map(|c| c as u8)
                    .ok_or_else(|| SynthError::UnknownLeaf {
                        index,
                        leaf: b.leaf.clone(),
                    })
            })
            .collect()
    }
}

/// Paints the blobs over misc (later blobs on top) and draws a noisy
/// per-pixel distribution around each label.
pub fn generate_field(spec: &FieldSpec, tree: &TaxonomyTree) -> Result<(ProbMap, LabelMask), SynthError> {
    let labels = spec.check(tree)?;
    let misc = tree.misc_channel().expect("checked") as u8;
    let (h, w, k) = (spec.height, spec.width, tree.num_leaves());

    let mut mask = LabelMask::filled(h, w, misc);
    for (b, &label) in spec.blobs.iter().zip(&labels) {
        for r in 0..h {
            for c in 0..w {
                let dy = r as f64 + 0.5 - b.center[0];
                let dx = c as f64 + 0.5 - b.center[1];
                if dy * dy + dx * dx <= b.radius * b.radius {
                    mask.set(r, c, label);
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.noise.sharpness;
    let mut data = Vec::with_capacity(h * w * k);
    let mut weights = vec![0.0f64; k];
    for &truth in mask.data() {
        let u_flip: f64 = rng.random();
        let u_choice: f64 = rng.random();
        for x in weights.iter_mut() {
            let u: f64 = rng.random();
            *x = -(-u).ln_1p();
        }
        let mut target = truth as usize;
        if k > 1 && u_flip < spec.noise.flip_prob {
            let pick = ((u_choice * (k - 1) as f64) as usize).min(k - 2);
            target = if pick >= target { pick + 1 } else { pick };
        }
        let total: f64 = weights.iter().sum();
        for (i, &x) in weights.iter().enumerate() {
            let d = if total > 0.0 { x / total } else { 1.0 / k as f64 };
            let hot = if i == target { s } else { 0.0 };
            data.push(((d + hot) / (1.0 + s)) as f32);
        }
    }
    let map = ProbMap::new(h, w, k, data).expect("sized above");
    Ok((map, mask))
}

fn mass(dist: &[f64], tree: &TaxonomyTree, node: &str) -> (f64, usize) {
    let mut total = 0.0;
    let mut first = usize::MAX;
    for leaf in tree.leaves_under(node).expect("node from tree") {
        let c = tree.channel_of(leaf).expect("leaf is bound");
        total += dist[c];
        first = first.min(c);
    }
    (total, first)
}

fn check_dist(dist: &[f64], tree: &TaxonomyTree) -> Result<(), SynthError> {
    if dist.len() != tree.num_leaves() {
        return Err(SynthError::LengthMismatch {
            expected: tree.num_leaves(),
            found: dist.len(),
        });
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SynthError::NotADistribution(sum));
    }
    Ok(())
}

/// Nodes visited by a naive root-to-leaf descent. Every child's mass is
/// re-summed from its leaves at every step; ties go to the child holding
/// the lowest leaf channel.
pub fn oracle_descent(dist: &[f64], tree: &TaxonomyTree) -> Result<Vec<String>, SynthError> {
    check_dist(dist, tree)?;
    let mut node = tree.root_id().to_string();
    let mut path = vec![node.clone()];
    loop {
        let children = tree.children(&node).expect("node from tree");
        if children.is_empty() {
            return Ok(path);
        }
        let mut best: Option<(&str, f64, usize)> = None;
        for child in children {
            let (m, first) = mass(dist, tree, child);
            let better = match best {
                None => true,
                Some((_, bm, bf)) => m > bm || (m == bm && first < bf),
            };
            if better {
                best = Some((child, m, first));
            }
        }
        node = best.expect("non-empty").0.to_string();
        path.push(node.clone());
    }
}

/// Leaf chosen by [`oracle_descent`].
pub fn oracle_hier_argmax(dist: &[f64], tree: &TaxonomyTree) -> Result<String, SynthError> {
    Ok(oracle_descent(dist, tree)?.pop().expect("path has the root"))
}

/// The oracle's answer at every rank, leaf first: the most general node on
/// the descent path whose rank is not above the requested one.
pub fn oracle_rank_path(dist: &[f64], tree: &TaxonomyTree) -> Result<Vec<String>, SynthError> {
    let path = oracle_descent(dist, tree)?;
    let order = tree.rank_order();
    let rank_pos = |id: &str| {
        let rank = &tree.node(id).expect("node from tree").rank;
        order.iter().position(|r| r == rank).expect("declared rank")
    };
    Ok((0..order.len())
        .map(|r| {
            path.iter()
                .find(|id| rank_pos(id) <= r)
                .expect("the leaf sits at rank 0")
                .clone()
        })
        .collect())
}

/// A valid random taxonomy with between 2 and `max_ranks` ranks and between
/// 1 and `max_leaves` leaves, ranks skipped at random, channels shuffled.
pub fn random_tree<R: Rng>(rng: &mut R, max_ranks: usize, max_leaves: usize) -> TaxonomyTree {
    assert!(max_ranks >= 2 && max_leaves >= 1);
    let ranks = rng.random_range(2..=max_ranks);
    let leaves = rng.random_range(1..=max_leaves);
    let mut rank_order: Vec<String> = (0..ranks - 1).map(|r| format!("r{r}")).collect();
    rank_order[0] = "leaf".into();
    rank_order.push("root".into());

    let mut nodes = vec![TaxonNode {
        id: "n0".into(),
        display_name: "n0".into(),
        rank: "root".into(),
        parent: None,
    }];
    let mut leaf_ids = Vec::new();
    grow(rng, &rank_order, &mut nodes, &mut leaf_ids, 0, ranks - 1, leaves);

    let mut binding = leaf_ids;
    for i in (1..binding.len()).rev() {
        binding.swap(i, rng.random_range(0..=i));
    }
    for i in (1..nodes.len()).rev() {
        let j = rng.random_range(1..=i);
        nodes.swap(i, j);
    }
    let file = TaxonomyFile {
        rank_order,
        nodes,
        channel_binding: binding,
        misc: None,
        unknown: Vec::new(),
    };
    TaxonomyTree::from_file(&file).expect("generated tree is valid")
}

fn grow<R: Rng>(
    rng: &mut R,
    ranks: &[String],
    nodes: &mut Vec<TaxonNode>,
    leaves: &mut Vec<String>,
    parent: usize,
    rank: usize,
    n: usize,
) {
    let add = |nodes: &mut Vec<TaxonNode>, rank: usize| {
        let id = format!("n{}", nodes.len());
        nodes.push(TaxonNode {
            id: id.clone(),
            display_name: id.to_uppercase(),
            rank: ranks[rank].clone(),
            parent: Some(nodes[parent].id.clone()),
        });
        nodes.len() - 1
    };
    if rank == 1 {
        for _ in 0..n {
            let i = add(nodes, 0);
            leaves.push(nodes[i].id.clone());
        }
        return;
    }
    let parts = rng.random_range(1..=n.min(4));
    // Split n into `parts` positive sizes via sorted cut points.
    let mut cuts: Vec<usize> = Vec::with_capacity(parts + 1);
    cuts.push(0);
    while cuts.len() < parts {
        let c = rng.random_range(1..n);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.push(n);
    cuts.sort_unstable();
    for pair in cuts.windows(2) {
        let size = pair[1] - pair[0];
        let lowest = if size == 1 { 0 } else { 1 };
        let child_rank = rng.random_range(lowest..rank);
        let i = add(nodes, child_rank);
        if child_rank == 0 {
            leaves.push(nodes[i].id.clone());
        } else {
            grow(rng, ranks, nodes, leaves, i, child_rank, size);
        }
    }
}

/// A random distribution over `n` classes. Dyadic draws are multiples of
/// 1/64, so sums are exact in any order and ties are common; otherwise the
/// draw is a flat Dirichlet rounded to `f32`.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, dyadic: bool) -> Vec<f32> {
    if dyadic {
        let mut cuts: Vec<u32> = (0..n.saturating_sub(1)).map(|_| rng.random_range(0..=64)).collect();
        cuts.push(0);
        cuts.push(64);
        cuts.sort_unstable();
        let mut out: Vec<f32> = cuts.windows(2).map(|p| (p[1] - p[0]) as f32 / 64.0).collect();
        // Shuffle so the zero-width gaps are not always first.
        for i in (1..out.len()).rev() {
            out.swap(i, rng.random_range(0..=i));
        }
        return out;
    }
    let e: Vec<f64> = (0..n).map(|_| -(-rng.random::<f64>()).ln_1p()).collect();
    let total: f64 = e.iter().sum();
    let mut out: Vec<f32> = e.iter().map(|x| (x / total) as f32).collect();
    // Fold the rounding error into the largest entry.
    let big = (0..n).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap_or(0);
    let rest: f64 = out.iter().enumerate().filter(|&(i, _)| i != big).map(|(_, &v)| v as f64).sum();
    out[big] = (1.0 - rest).max(0.0) as f32;
    out
}
