//! Label taxonomy: a rooted tree of taxa with a per-file rank vocabulary and
//! a binding from probability channels to leaves.
//!
//! The same engine serves the species tree (leaf → genus → family → order →
//! group → root) and the damage tree (leaf → severity → status → root); only
//! the file differs.
//!
//! Projection to a rank follows the leaf→root path and returns the most
//! general node whose rank is not above the requested one. A leaf hung
//! directly under the root (for example `misc`) therefore projects to itself
//! at every rank below the root.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Largest number of leaves a tree may bind. Label rasters are 8-bit and
/// reserve 255 for ignore.
pub const MAX_LEAVES: usize = 255;

/// Conventional id of the catch-all non-vegetation leaf.
pub const MISC_ID: &str = "misc";

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid taxonomy: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("{0:?} is not a leaf")]
    UnknownLeaf(String),
    #[error("unknown rank {0:?}")]
    UnknownRank(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("rank_order needs at least a leaf rank and a root rank")]
    RankOrderTooShort,
    #[error("rank {0:?} declared twice in rank_order")]
    DuplicateRank(String),
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {node:?} has undeclared rank {rank:?}")]
    UndeclaredRank { node: String, rank: String },
    #[error("no root node")]
    NoRoot,
    #[error("multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("node {node:?} has missing parent {parent:?}")]
    MissingParent { node: String, parent: String },
    #[error("cycle through node {0:?}")]
    Cycle(String),
    #[error("rank ordering violation: {node:?} is not strictly less general than its parent {parent:?}")]
    RankOrdering { node: String, parent: String },
    #[error("root {0:?} must carry the last rank of rank_order")]
    RootRank(String),
    #[error("leaf {0:?} must carry the first rank of rank_order")]
    LeafRank(String),
    #[error("channel binding references unknown id {0:?}")]
    UnknownChannelId(String),
    #[error("channel binding references non-leaf {0:?}")]
    BoundNonLeaf(String),
    #[error("duplicate channel binding for leaf {0:?}")]
    DuplicateChannel(String),
    #[error("leaf {0:?} is not bound to any channel")]
    UnboundLeaf(String),
    #[error("misc entry {0:?} must be a declared leaf with id \"misc\"")]
    BadMisc(String),
    #[error("unknown-class entry {0:?} is not a leaf")]
    UnknownNotLeaf(String),
    #[error("{0} leaves exceed the 8-bit label limit of {MAX_LEAVES}")]
    TooManyLeaves(usize),
}

/// Node record as it appears in a taxonomy file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonNode {
    pub id: String,
    pub display_name: String,
    pub rank: String,
    #[serde(default)]
    pub parent: Option<String>,
}

/// The taxonomy file schema, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyFile {
    pub rank_order: Vec<String>,
    pub nodes: Vec<TaxonNode>,
    pub channel_binding: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misc: Option<String>,
    #[serde(default)]
    pub unknown: Vec<String>,
}

/// Checks every tree invariant and returns one entry per violation.
pub fn validate(file: &TaxonomyFile) -> Vec<Violation> {
    let mut out = Vec::new();

    if file.rank_order.len() < 2 {
        out.push(Violation::RankOrderTooShort);
    }
    let mut rank_idx: HashMap<&str, usize> = HashMap::new();
    for (i, r) in file.rank_order.iter().enumerate() {
        if rank_idx.insert(r.as_str(), i).is_some() {
            out.push(Violation::DuplicateRank(r.clone()));
        }
    }

    let mut by_id: HashMap<&str, &TaxonNode> = HashMap::new();
    for n in &file.nodes {
        if by_id.insert(n.id.as_str(), n).is_some() {
            out.push(Violation::DuplicateId(n.id.clone()));
        }
        if !rank_idx.contains_key(n.rank.as_str()) {
            out.push(Violation::UndeclaredRank {
                node: n.id.clone(),
                rank: n.rank.clone(),
            });
        }
    }

    let roots: Vec<String> = file
        .nodes
        .iter()
        .filter(|n| n.parent.is_none())
        .map(|n| n.id.clone())
        .collect();
    match roots.len() {
        0 => out.push(Violation::NoRoot),
        1 => {}
        _ => out.push(Violation::MultipleRoots(roots.clone())),
    }
    let last_rank = file.rank_order.len().saturating_sub(1);
    for r in &roots {
        if let Some(&i) = rank_idx.get(by_id[r.as_str()].rank.as_str()) {
            if i != last_rank {
                out.push(Violation::RootRank(r.clone()));
            }
        }
    }

    let mut has_child: HashSet<&str> = HashSet::new();
    for n in &file.nodes {
        let Some(p) = &n.parent else { continue };
        match by_id.get(p.as_str()) {
            None => out.push(Violation::MissingParent {
                node: n.id.clone(),
                parent: p.clone(),
            }),
            Some(parent) => {
                has_child.insert(parent.id.as_str());
                if let (Some(&ci), Some(&pi)) =
                    (rank_idx.get(n.rank.as_str()), rank_idx.get(parent.rank.as_str()))
                {
                    if ci >= pi {
                        out.push(Violation::RankOrdering {
                            node: n.id.clone(),
                            parent: p.clone(),
                        });
                    }
                }
            }
        }
    }

    // Each cycle is reported once, through its lexically smallest member.
    let mut reported: HashSet<String> = HashSet::new();
    for n in &file.nodes {
        let mut seen: Vec<&str> = vec![n.id.as_str()];
        let mut cur = n;
        while let Some(p) = cur.parent.as_deref().and_then(|p| by_id.get(p)) {
            if let Some(pos) = seen.iter().position(|s| *s == p.id) {
                let cycle = &seen[pos..];
                let min = cycle.iter().min().copied().unwrap_or(p.id.as_str());
                if reported.insert(min.to_string()) {
                    out.push(Violation::Cycle(min.to_string()));
                }
                break;
            }
            if seen.len() > file.nodes.len() {
                break;
            }
            seen.push(p.id.as_str());
            cur = p;
        }
    }

    let is_leaf = |id: &str| by_id.contains_key(id) && !has_child.contains(id);
    for n in &file.nodes {
        if is_leaf(&n.id) && rank_idx.get(n.rank.as_str()).is_some_and(|&i| i != 0) {
            out.push(Violation::LeafRank(n.id.clone()));
        }
    }

    let mut bound: HashSet<&str> = HashSet::new();
    for id in &file.channel_binding {
        if !by_id.contains_key(id.as_str()) {
            out.push(Violation::UnknownChannelId(id.clone()));
        } else if !is_leaf(id) {
            out.push(Violation::BoundNonLeaf(id.clone()));
        } else if !bound.insert(id.as_str()) {
            out.push(Violation::DuplicateChannel(id.clone()));
        }
    }
    let mut leaf_count = 0;
    for n in &file.nodes {
        if is_leaf(&n.id) {
            leaf_count += 1;
            if !bound.contains(n.id.as_str()) {
                out.push(Violation::UnboundLeaf(n.id.clone()));
            }
        }
    }
    if leaf_count > MAX_LEAVES {
        out.push(Violation::TooManyLeaves(leaf_count));
    }

    if let Some(m) = &file.misc {
        if m != MISC_ID || !is_leaf(m) {
            out.push(Violation::BadMisc(m.clone()));
        }
    }
    for u in &file.unknown {
        if !is_leaf(u) {
            out.push(Violation::UnknownNotLeaf(u.clone()));
        }
    }

    out
}

/// A validated, immutable taxonomy.
///
/// Nodes are stored in a canonical depth-first order (children sorted by
/// their first bound channel), so two files that differ only in node
/// declaration order produce equal trees.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyTree {
    rank_order: Vec<String>,
    nodes: Vec<TaxonNode>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    rank_of: Vec<usize>,
    leaf_nodes: Vec<usize>,
    channel_of: Vec<Option<usize>>,
    first_leaf: Vec<usize>,
    leaf_channels: Vec<Vec<usize>>,
    // [rank][channel] -> node
    projection: Vec<Vec<usize>>,
    // [rank] -> nodes appearing at that rank, ordered by first channel
    rank_classes: Vec<Vec<usize>>,
    // [rank][channel] -> position in rank_classes[rank]
    rank_class_pos: Vec<Vec<usize>>,
    misc: Option<usize>,
    unknown: BTreeSet<usize>,
    root: usize,
}

impl TaxonomyTree {
    /// Parses and validates a taxonomy file.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn from_file(file: &TaxonomyFile) -> Result<Self, TaxonomyError> {
        let violations = validate(file);
        if !violations.is_empty() {
            return Err(TaxonomyError::Invalid(violations));
        }
        Ok(Self::build(file))
    }

    // Assumes `file` passed validation.
    fn build(file: &TaxonomyFile) -> Self {
        let rank_idx: HashMap<&str, usize> = file
            .rank_order
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let decl: HashMap<&str, usize> = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let channel: HashMap<&str, usize> = file
            .channel_binding
            .iter()
            .enumerate()
            .map(|(c, id)| (id.as_str(), c))
            .collect();

        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); file.nodes.len()];
        let mut root_decl = 0;
        for (i, n) in file.nodes.iter().enumerate() {
            match &n.parent {
                Some(p) => kids[decl[p.as_str()]].push(i),
                None => root_decl = i,
            }
        }

        fn min_channel(
            i: usize,
            kids: &[Vec<usize>],
            nodes: &[TaxonNode],
            channel: &HashMap<&str, usize>,
            memo: &mut [Option<usize>],
        ) -> usize {
            if let Some(v) = memo[i] {
                return v;
            }
            let v = if kids[i].is_empty() {
                channel[nodes[i].id.as_str()]
            } else {
                kids[i]
                    .iter()
                    .map(|&k| min_channel(k, kids, nodes, channel, memo))
                    .min()
                    .unwrap()
            };
            memo[i] = Some(v);
            v
        }
        let mut memo = vec![None; file.nodes.len()];
        let firsts: Vec<usize> = (0..file.nodes.len())
            .map(|i| min_channel(i, &kids, &file.nodes, &channel, &mut memo))
            .collect();
        for k in &mut kids {
            k.sort_by_key(|&c| firsts[c]);
        }

        // Canonical preorder.
        let mut order = Vec::with_capacity(file.nodes.len());
        let mut stack = vec![root_decl];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(kids[i].iter().rev());
        }
        let mut new_of_decl = vec![0; file.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_of_decl[old] = new;
        }

        let nodes: Vec<TaxonNode> = order.iter().map(|&i| file.nodes[i].clone()).collect();
        let n = nodes.len();
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, x)| (x.id.clone(), i))
            .collect::<HashMap<_, _>>();
        let parent: Vec<Option<usize>> = nodes
            .iter()
            .map(|x| x.parent.as_ref().map(|p| index[p]))
            .collect();
        let children: Vec<Vec<usize>> = order
            .iter()
            .map(|&old| kids[old].iter().map(|&k| new_of_decl[k]).collect())
            .collect();
        let first_leaf: Vec<usize> = order.iter().map(|&old| firsts[old]).collect();
        let rank_of: Vec<usize> = nodes.iter().map(|x| rank_idx[x.rank.as_str()]).collect();
        let leaf_nodes: Vec<usize> = file.channel_binding.iter().map(|id| index[id]).collect();
        let mut channel_of = vec![None; n];
        for (c, &node) in leaf_nodes.iter().enumerate() {
            channel_of[node] = Some(c);
        }

        let mut leaf_channels = vec![Vec::new(); n];
        for (c, &leaf) in leaf_nodes.iter().enumerate() {
            let mut cur = Some(leaf);
            while let Some(i) = cur {
                leaf_channels[i].push(c);
                cur = parent[i];
            }
        }

        let ranks = file.rank_order.len();
        let mut projection = vec![vec![0; leaf_nodes.len()]; ranks];
        for (c, &leaf) in leaf_nodes.iter().enumerate() {
            for (r, row) in projection.iter_mut().enumerate() {
                let mut best = leaf;
                let mut cur = parent[leaf];
                while let Some(i) = cur {
                    if rank_of[i] > r {
                        break;
                    }
                    best = i;
                    cur = parent[i];
                }
                row[c] = best;
            }
        }
        let mut rank_classes = Vec::with_capacity(ranks);
        let mut rank_class_pos = Vec::with_capacity(ranks);
        for row in &projection {
            let mut classes: Vec<usize> = Vec::new();
            let mut pos = Vec::with_capacity(row.len());
            for &node in row {
                let p = match classes.iter().position(|&x| x == node) {
                    Some(p) => p,
                    None => {
                        classes.push(node);
                        classes.len() - 1
                    }
                };
                pos.push(p);
            }
            rank_classes.push(classes);
            rank_class_pos.push(pos);
        }

        let misc = file.misc.as_ref().map(|m| channel[m.as_str()]);
        let unknown = file.unknown.iter().map(|u| index[u]).collect();

        TaxonomyTree {
            rank_order: file.rank_order.clone(),
            nodes,
            index,
            parent,
            children,
            rank_of,
            leaf_nodes,
            channel_of,
            first_leaf,
            leaf_channels,
            projection,
            rank_classes,
            rank_class_pos,
            misc,
            unknown,
            root: 0,
        }
    }

    /// Re-checks the invariants on the serialized form. A tree obtained
    /// through [`TaxonomyTree::parse`] always yields an empty list.
    pub fn validate(&self) -> Vec<Violation> {
        validate(&self.to_file())
    }

    pub fn to_file(&self) -> TaxonomyFile {
        TaxonomyFile {
            rank_order: self.rank_order.clone(),
            nodes: self.nodes.clone(),
            channel_binding: self
                .leaf_nodes
                .iter()
                .map(|&i| self.nodes[i].id.clone())
                .collect(),
            misc: self.misc.map(|c| self.nodes[self.leaf_nodes[c]].id.clone()),
            unknown: self
                .unknown
                .iter()
                .map(|&i| self.nodes[i].id.clone())
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("taxonomy serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn rank_order(&self) -> &[String] {
        &self.rank_order
    }

    pub fn rank_index(&self, rank: &str) -> Result<usize, TaxonomyError> {
        self.rank_order
            .iter()
            .position(|r| r == rank)
            .ok_or_else(|| TaxonomyError::UnknownRank(rank.to_string()))
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn node(&self, id: &str) -> Option<&TaxonNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_index(&self, id: &str) -> Result<usize, TaxonomyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))
    }

    pub fn node_at(&self, idx: usize) -> &TaxonNode {
        &self.nodes[idx]
    }

    pub fn root_index(&self) -> usize {
        self.root
    }

    pub fn root_id(&self) -> &str {
        &self.nodes[self.root].id
    }

    /// Children of a node, ordered by their first bound channel.
    pub fn children_of(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn parent_of(&self, idx: usize) -> Option<usize> {
        self.parent[idx]
    }

    pub fn rank_of(&self, idx: usize) -> usize {
        self.rank_of[idx]
    }

    pub fn children(&self, id: &str) -> Result<Vec<&str>, TaxonomyError> {
        let i = self.node_index(id)?;
        Ok(self.children[i]
            .iter()
            .map(|&k| self.nodes[k].id.as_str())
            .collect())
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.children[idx].is_empty()
    }

    /// Channel bound to a leaf node, `None` for internal nodes.
    pub fn channel_of_node(&self, idx: usize) -> Option<usize> {
        self.channel_of[idx]
    }

    pub fn channel_of(&self, leaf_id: &str) -> Option<usize> {
        self.index.get(leaf_id).and_then(|&i| self.channel_of[i])
    }

    pub fn leaf_node(&self, channel: usize) -> usize {
        self.leaf_nodes[channel]
    }

    pub fn leaf_id(&self, channel: usize) -> &str {
        &self.nodes[self.leaf_nodes[channel]].id
    }

    /// Leaf ids in channel order.
    pub fn channel_binding(&self) -> impl Iterator<Item = &str> {
        self.leaf_nodes.iter().map(|&i| self.nodes[i].id.as_str())
    }

    /// Smallest channel among the leaves below a node; the tie-break key.
    pub fn first_leaf_channel(&self, idx: usize) -> usize {
        self.first_leaf[idx]
    }

    /// Channels of all leaves below a node, ascending.
    pub fn leaf_channels_under(&self, idx: usize) -> &[usize] {
        &self.leaf_channels[idx]
    }

    /// Leaf descendants of `node_id` in channel order.
    pub fn leaves_under(&self, node_id: &str) -> Result<Vec<&str>, TaxonomyError> {
        let i = self.node_index(node_id)?;
        Ok(self.leaf_channels[i]
            .iter()
            .map(|&c| self.leaf_id(c))
            .collect())
    }

    pub fn ancestor_at_rank(&self, leaf_id: &str, rank: &str) -> Result<&str, TaxonomyError> {
        let c = self
            .channel_of(leaf_id)
            .ok_or_else(|| TaxonomyError::UnknownLeaf(leaf_id.to_string()))?;
        let r = self.rank_index(rank)?;
        Ok(&self.nodes[self.projection[r][c]].id)
    }

    /// Node a leaf channel projects to at a rank.
    pub fn project(&self, rank: usize, channel: usize) -> usize {
        self.projection[rank][channel]
    }

    /// Nodes that occur as projections at a rank, ordered by first channel.
    pub fn rank_classes(&self, rank: usize) -> &[usize] {
        &self.rank_classes[rank]
    }

    /// Position of a leaf channel's projection within [`Self::rank_classes`].
    pub fn rank_class_of(&self, rank: usize, channel: usize) -> usize {
        self.rank_class_pos[rank][channel]
    }

    pub fn rank_class_ids(&self, rank: usize) -> Vec<String> {
        self.rank_classes[rank]
            .iter()
            .map(|&i| self.nodes[i].id.clone())
            .collect()
    }

    pub fn misc_channel(&self) -> Option<usize> {
        self.misc
    }

    pub fn is_unknown(&self, idx: usize) -> bool {
        self.unknown.contains(&idx)
    }

    pub fn unknown_ids(&self) -> Vec<&str> {
        self.unknown
            .iter()
            .map(|&i| self.nodes[i].id.as_str())
            .collect()
    }
}
