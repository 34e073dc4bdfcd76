#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use taxoseg::gridio::{LabelMask, ProbMap, IGNORE};
use taxoseg::taxonomy::TaxonomyTree;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn species() -> TaxonomyTree {
    load(&repo_root().join("taxonomies/species.json"))
}

pub fn damage() -> TaxonomyTree {
    load(&repo_root().join("taxonomies/damage.json"))
}

pub fn load(path: &Path) -> TaxonomyTree {
    TaxonomyTree::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Genus A = {a1, a2}, genus B = {b1}; optionally a misc leaf on channel 3.
pub fn two_genus(with_misc: bool) -> TaxonomyTree {
    let (misc_node, misc_bind, misc_field) = if with_misc {
        (
            r#"{"id": "misc", "display_name": "misc", "rank": "leaf", "parent": "root"},"#,
            r#", "misc""#,
            r#""misc": "misc","#,
        )
    } else {
        ("", "", "")
    };
    TaxonomyTree::parse(&format!(
        r#"{{
        "rank_order": ["leaf", "genus", "root"],
        "nodes": [
            {misc_node}
            {{"id": "root", "display_name": "root", "rank": "root", "parent": null}},
            {{"id": "A", "display_name": "A", "rank": "genus", "parent": "root"}},
            {{"id": "B", "display_name": "B", "rank": "genus", "parent": "root"}},
            {{"id": "a1", "display_name": "a1", "rank": "leaf", "parent": "A"}},
            {{"id": "a2", "display_name": "a2", "rank": "leaf", "parent": "A"}},
            {{"id": "b1", "display_name": "b1", "rank": "leaf", "parent": "B"}}
        ],
        "channel_binding": ["a1", "a2", "b1"{misc_bind}],
        {misc_field}
        "unknown": []
    }}"#
    ))
    .unwrap()
}

pub fn random_labels<R: Rng>(rng: &mut R, h: usize, w: usize, classes: usize, ignore: f64) -> LabelMask {
    let data = (0..h * w)
        .map(|_| {
            if rng.random_bool(ignore) {
                IGNORE
            } else {
                rng.random_range(0..classes) as u8
            }
        })
        .collect();
    LabelMask::new(h, w, data).unwrap()
}

/// Rectangular patches of a few classes over a background, so coverage
/// differs between images.
pub fn patchy_labels<R: Rng>(rng: &mut R, h: usize, w: usize, classes: usize) -> LabelMask {
    let mut m = LabelMask::filled(h, w, rng.random_range(0..classes) as u8);
    for _ in 0..rng.random_range(1..6) {
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (r1, c1) = (rng.random_range(r0..h) + 1, rng.random_range(c0..w) + 1);
        let v = rng.random_range(0..classes) as u8;
        for r in r0..r1 {
            for c in c0..c1 {
                m.set(r, c, v);
            }
        }
    }
    m
}

pub fn random_prob_map<R: Rng>(rng: &mut R, h: usize, w: usize, channels: usize) -> ProbMap {
    let mut data = Vec::with_capacity(h * w * channels);
    for _ in 0..h * w {
        let dyadic = rng.random_bool(0.5);
        data.extend(taxoseg::synthfield::random_distribution(rng, channels, dyadic));
    }
    ProbMap::new(h, w, channels, data).unwrap()
}

/// Arbitrary reals, not distributions.
pub fn random_grid<R: Rng>(rng: &mut R, h: usize, w: usize, channels: usize) -> ProbMap {
    let data = (0..h * w * channels).map(|_| rng.random::<f32>()).collect();
    ProbMap::new(h, w, channels, data).unwrap()
}
