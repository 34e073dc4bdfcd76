use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::hierinfer::{Thresholds, Transform};
use crate::metrics::MetricPolicy;
use crate::taxonomy::TaxonomyTree;

/// Run configuration as read from disk. Relative paths and globs are taken
/// relative to the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub taxonomy: String,
    /// Probability maps (`.npy`), for `infer` and `calibrate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_maps: Option<String>,
    /// Annotation masks (`.png`), for `evaluate`, `calibrate` and `weights`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<String>,
    /// Prediction masks for `evaluate`; defaults to `<out>/predictions/*.png`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_gsd: Option<f64>,
    /// Source GSD for inputs without an entry in `source_gsd_by_stem`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_gsd: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_gsd_by_stem: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_size: Option<usize>,
    #[serde(default)]
    pub overlap: usize,
    /// JSON object mapping leaf id to threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<String>,
    /// Views to fuse; `<stem>.npy` is the identity view and
    /// `<stem>.<transform>.npy` the others.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tta: Vec<Transform>,
    #[serde(default)]
    pub policy: MetricPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// A config with paths resolved and referenced files loaded.
pub struct Resolved {
    pub config: RunConfig,
    pub base: PathBuf,
    pub tree: TaxonomyTree,
    pub thresholds: Option<Thresholds>,
    pub out: PathBuf,
}

impl Resolved {
    pub fn load(path: &Path, out_override: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::from_config(config, base, out_override)
    }

    pub fn from_config(config: RunConfig, base: PathBuf, out_override: Option<&Path>) -> Result<Self> {
        let tax_path = base.join(&config.taxonomy);
        let tree = load_taxonomy(&tax_path)?;
        let thresholds = match &config.thresholds {
            None => None,
            Some(p) => {
                let p = base.join(p);
                let text = std::fs::read_to_string(&p)
                    .with_context(|| format!("reading thresholds {}", p.display()))?;
                let t: Thresholds = serde_json::from_str(&text)
                    .with_context(|| format!("parsing thresholds {}", p.display()))?;
                crate::hierinfer::threshold_table(&t, &tree)
                    .with_context(|| format!("thresholds {}", p.display()))?;
                Some(t)
            }
        };
        if let Some(tile) = config.tile_size {
            if tile == 0 || config.overlap >= tile {
                bail!("tile_size {tile} with overlap {} is not a valid tiling", config.overlap);
            }
        }
        for (what, v) in [("target_gsd", config.target_gsd), ("source_gsd", config.source_gsd)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    bail!("{what} must be positive, got {v}");
                }
            }
        }
        let out = match out_override {
            Some(o) => o.to_path_buf(),
            None => base.join(config.out.as_deref().unwrap_or("out")),
        };
        Ok(Self {
            config,
            base,
            tree,
            thresholds,
            out,
        })
    }

    /// Source GSD for an input stem, when both ends of a rescale are known.
    pub fn gsd_for(&self, stem: &str) -> Option<(f64, f64)> {
        let target = self.config.target_gsd?;
        let source = self
            .config
            .source_gsd_by_stem
            .get(stem)
            .copied()
            .or(self.config.source_gsd)?;
        Some((source, target))
    }

    /// Files matching the glob in `field`, keyed and sorted by stem.
    pub fn inputs(&self, field: &str, pattern: Option<&str>) -> Result<BTreeMap<String, PathBuf>> {
        let Some(pattern) = pattern else {
            bail!("config has no {field:?} entry");
        };
        expand(&self.base, pattern)
    }

    pub fn echo(&self, command: &str, inputs: &[String]) -> serde_json::Value {
        serde_json::json!({
            "command": command,
            "config": self.config,
            "taxonomy_sha256": self.tree.content_hash(),
            "inputs": inputs,
        })
    }
}

pub fn load_taxonomy(path: &Path) -> Result<TaxonomyTree> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading taxonomy {}", path.display()))?;
    TaxonomyTree::parse(&text).with_context(|| format!("taxonomy {}", path.display()))
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Expands `pattern` below `base` into stem → path.
pub fn expand(base: &Path, pattern: &str) -> Result<BTreeMap<String, PathBuf>> {
    let full = if Path::new(pattern).is_absolute() {
        pattern.to_string()
    } else {
        format!("{}/{pattern}", glob::Pattern::escape(&base.to_string_lossy()))
    };
    let mut out = BTreeMap::new();
    for entry in glob::glob(&full).with_context(|| format!("bad glob {pattern:?}"))? {
        let path = entry?;
        if path.is_file() {
            out.insert(stem(&path), path);
        }
    }
    Ok(out)
}
