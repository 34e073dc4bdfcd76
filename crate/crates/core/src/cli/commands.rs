use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use super::config::{expand, load_taxonomy, Resolved};
use super::{write_atomic, write_json, Failures};
use crate::balance::{count_pixels, effective_weights, Normalization};
use crate::gridio::{
    load_label_mask, load_prob_map, plan_tiles, rescale_label_mask, rescale_prob_map,
    store_label_mask, store_prob_map, store_scalar_grid, GsdSpec, LabelMask, ProbMap,
};
use crate::hierinfer::{
    apply_confidence_thresholds, fuse_tta, infer as hier_infer, infer_tiled, Transform, TtaView,
};
use crate::metrics::{calibrate_thresholds, evaluate as evaluate_report, Objective};
use crate::synthfield::{generate_field, FieldSpec};

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_map(path: &Path) -> Result<ProbMap> {
    let map = load_prob_map(&read(path)?).with_context(|| format!("decoding {}", path.display()))?;
    map.check_distribution()
        .with_context(|| format!("checking {}", path.display()))?;
    Ok(map)
}

fn read_mask(path: &Path) -> Result<LabelMask> {
    load_label_mask(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

fn view_path(base: &Path, stem: &str, t: Transform) -> PathBuf {
    match t {
        Transform::Identity => base.to_path_buf(),
        t => base.with_file_name(format!("{stem}.{}.npy", t.name())),
    }
}

/// Probability map inputs without the extra TTA views, which are picked up
/// through their base stem.
fn base_maps(rc: &Resolved) -> Result<BTreeMap<String, PathBuf>> {
    let mut maps = rc.inputs("prob_maps", rc.config.prob_maps.as_deref())?;
    if !rc.config.tta.is_empty() {
        maps.retain(|s, _| {
            !s.rsplit_once('.')
                .is_some_and(|(_, ext)| Transform::from_name(ext).is_some())
        });
    }
    if maps.is_empty() {
        bail!("no probability maps match {:?}", rc.config.prob_maps.as_deref().unwrap_or(""));
    }
    Ok(maps)
}

/// Loads a map (fusing its TTA views) and brings it to the target GSD.
fn prepared_map(rc: &Resolved, stem: &str, path: &Path) -> Result<ProbMap> {
    let map = if rc.config.tta.is_empty() {
        read_map(path)?
    } else {
        let views = rc
            .config
            .tta
            .iter()
            .map(|&t| {
                Ok(TtaView {
                    prob_map: read_map(&view_path(path, stem, t))?,
                    transform: t,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        fuse_tta(&views)?.0
    };
    match rc.gsd_for(stem) {
        Some((s, t)) => Ok(rescale_prob_map(&map, &GsdSpec::new(s, t)?)?),
        None => Ok(map),
    }
}

fn prepared_mask(rc: &Resolved, stem: &str, path: &Path) -> Result<LabelMask> {
    let mask = read_mask(path)?;
    match rc.gsd_for(stem) {
        Some((s, t)) => Ok(rescale_label_mask(&mask, &GsdSpec::new(s, t)?)?),
        None => Ok(mask),
    }
}

fn collect_failures<T>(results: Vec<(String, Result<T>)>) -> (Vec<(String, T)>, Failures) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (stem, r) in results {
        match r {
            Ok(v) => ok.push((stem, v)),
            Err(e) => failed.push((stem, e)),
        }
    }
    (ok, failed)
}

pub fn infer(rc: &Resolved) -> Result<Failures> {
    let maps = base_maps(rc)?;
    let results: Vec<(String, Result<()>)> = maps
        .par_iter()
        .map(|(stem, path)| (stem.clone(), infer_one(rc, stem, path)))
        .collect();
    let stems: Vec<String> = maps.keys().cloned().collect();
    write_json(&rc.out.join("infer.run.json"), &rc.echo("infer", &stems))?;
    Ok(collect_failures(results).1)
}

fn infer_one(rc: &Resolved, stem: &str, path: &Path) -> Result<()> {
    let tree = &rc.tree;
    let map = prepared_map(rc, stem, path)?;
    let (h, w) = map.dims();
    let (mut pred, tiles) = match rc.config.tile_size {
        Some(t) => {
            let plan = plan_tiles(h, w, t, rc.config.overlap)?;
            (infer_tiled(&map, tree, &plan)?, plan.origins.len())
        }
        None => (hier_infer(&map, tree)?, 1),
    };
    if let Some(th) = &rc.thresholds {
        pred = apply_confidence_thresholds(&pred, th, tree)?;
    }

    let pred_dir = rc.out.join("predictions");
    let conf_dir = rc.out.join("confidence");
    write_atomic(&pred_dir.join(format!("{stem}.png")), &store_label_mask(&pred.leaf_mask())?)?;
    let mut ranks = Vec::new();
    for layer in pred.layers() {
        let name = format!("{stem}.{}.npy", layer.rank);
        write_atomic(&conf_dir.join(&name), &store_scalar_grid(h, w, &layer.confidence))?;
        let r = tree.rank_index(&layer.rank)?;
        ranks.push(json!({
            "rank": layer.rank,
            "classes": tree.rank_class_ids(r),
            "confidence": format!("confidence/{name}"),
        }));
    }
    let sidecar = json!({
        "image": stem,
        "taxonomy_sha256": tree.content_hash(),
        "height": h,
        "width": w,
        "gsd": rc.gsd_for(stem).map(|(s, t)| json!({"source": s, "target": t})),
        "tta": rc.config.tta,
        "tiles": tiles,
        "thresholds": rc.thresholds,
        "leaf_channels": tree.channel_binding().collect::<Vec<_>>(),
        "ranks": ranks,
    });
    write_json(&pred_dir.join(format!("{stem}.json")), &sidecar)
}

/// Pairs two stem-keyed file sets; stems present on one side only are
/// reported as failures.
fn pair_stems(
    left: BTreeMap<String, PathBuf>,
    right: &BTreeMap<String, PathBuf>,
    left_name: &str,
    right_name: &str,
) -> (Vec<(String, PathBuf, PathBuf)>, Failures) {
    let mut pairs = Vec::new();
    let mut failed: Failures = Vec::new();
    for (s, l) in left {
        match right.get(&s) {
            Some(r) => pairs.push((s, l, r.clone())),
            None => failed.push((s, anyhow!("no {right_name} for this {left_name}"))),
        }
    }
    for s in right.keys() {
        if !pairs.iter().any(|(p, _, _)| p == s) && !failed.iter().any(|(f, _)| f == s) {
            failed.push((s.clone(), anyhow!("no {left_name} for this {right_name}")));
        }
    }
    failed.sort_by(|a, b| a.0.cmp(&b.0));
    (pairs, failed)
}

fn check_pair(rc: &Resolved, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        bail!("prediction is {:?} but annotation is {:?}", pred.dims(), gt.dims());
    }
    let leaves = rc.tree.num_leaves();
    pred.check_classes(leaves).context("prediction")?;
    gt.check_classes(leaves).context("annotation")?;
    if pred.data().contains(&crate::gridio::IGNORE) {
        bail!("prediction contains ignore pixels");
    }
    Ok(())
}

pub fn evaluate(rc: &Resolved) -> Result<Failures> {
    let masks = rc.inputs("masks", rc.config.masks.as_deref())?;
    let pred_glob = rc.config.predictions.clone();
    let preds = match &pred_glob {
        Some(p) => expand(&rc.base, p)?,
        None => expand(&rc.out, "predictions/*.png")?,
    };
    if masks.is_empty() && preds.is_empty() {
        bail!("no predictions or masks to evaluate");
    }
    let (pairs, mut failed) = pair_stems(preds, &masks, "prediction", "annotation");
    let loaded: Vec<(String, Result<(LabelMask, LabelMask)>)> = pairs
        .par_iter()
        .map(|(s, p, g)| {
            let r = (|| {
                let pred = read_mask(p)?;
                let gt = prepared_mask(rc, s, g)?;
                check_pair(rc, &pred, &gt)?;
                Ok((pred, gt))
            })();
            (s.clone(), r)
        })
        .collect();
    let (ok, more) = collect_failures(loaded);
    failed.extend(more);
    failed.sort_by(|a, b| a.0.cmp(&b.0));

    let ids: Vec<String> = ok.iter().map(|(s, _)| s.clone()).collect();
    let (preds, gts): (Vec<LabelMask>, Vec<LabelMask>) = ok.into_iter().map(|(_, pg)| pg).unzip();
    let report = evaluate_report(&ids, &preds, &gts, &rc.tree, &rc.config.policy, rc.thresholds.as_ref())?;

    write_atomic(&rc.out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&rc.out.join("per_class.csv"), report.per_class_csv().as_bytes())?;
    for r in &report.ranks {
        let csv = report.confusion_csv(&r.rank).expect("rank from report");
        write_atomic(&rc.out.join(format!("confusion_{}.csv", r.rank)), csv.as_bytes())?;
    }
    write_json(&rc.out.join("evaluate.run.json"), &rc.echo("evaluate", &ids))?;

    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    println!("{:<24} {:>10}", "rank", "macro_f1");
    for r in &report.ranks {
        println!("{:<24} {:>10}", r.rank, fmt(r.macro_f1));
    }
    println!();
    println!("{:<24} {:>10}", "class", "r2_fit");
    for c in &report.coverage {
        println!("{:<24} {:>10}", c.class_id, fmt(c.stats.as_ref().and_then(|s| s.r2_fit)));
    }
    Ok(failed)
}

pub fn calibrate(rc: &Resolved, objective: Objective, step: f64) -> Result<Failures> {
    if !(step > 0.0 && step < 1.0) {
        bail!("step must lie in (0, 1), got {step}");
    }
    let maps = base_maps(rc)?;
    let masks = rc.inputs("masks", rc.config.masks.as_deref())?;
    let (pairs, mut failed) = pair_stems(maps, &masks, "probability map", "annotation");
    let loaded: Vec<(String, Result<(ProbMap, LabelMask)>)> = pairs
        .par_iter()
        .map(|(s, m, g)| {
            let r = (|| {
                let map = prepared_map(rc, s, m)?;
                let gt = prepared_mask(rc, s, g)?;
                if map.dims() != gt.dims() {
                    bail!("map is {:?} but annotation is {:?}", map.dims(), gt.dims());
                }
                Ok((map, gt))
            })();
            (s.clone(), r)
        })
        .collect();
    let (ok, more) = collect_failures(loaded);
    failed.extend(more);
    failed.sort_by(|a, b| a.0.cmp(&b.0));
    if ok.is_empty() {
        bail!("no usable validation pairs");
    }
    let ids: Vec<String> = ok.iter().map(|(s, _)| s.clone()).collect();
    let (maps, gts): (Vec<ProbMap>, Vec<LabelMask>) = ok.into_iter().map(|(_, mg)| mg).unzip();
    let cal = calibrate_thresholds(&maps, &gts, &rc.tree, objective, step)?;

    write_json(&rc.out.join("thresholds.json"), &cal.thresholds)?;
    write_json(&rc.out.join("calibration.json"), &cal)?;
    write_json(&rc.out.join("calibrate.run.json"), &rc.echo("calibrate", &ids))?;
    println!("{:<24} {:>8} {:>10} {:>10}", "leaf", "tau", "at_zero", "at_tau");
    for (id, c) in &cal.leaves {
        let note = if c.no_support { "  no support" } else { "" };
        println!(
            "{:<24} {:>8.4} {:>10.6} {:>10.6}{note}",
            id, c.tau, c.score_at_zero, c.score_at_tau
        );
    }
    Ok(failed)
}

pub fn weights(rc: &Resolved, beta: f64, normalization: Normalization) -> Result<Failures> {
    if !(0.0..1.0).contains(&beta) {
        bail!("beta must lie in [0, 1), got {beta}");
    }
    let masks = rc.inputs("masks", rc.config.masks.as_deref())?;
    if masks.is_empty() {
        bail!("no masks match {:?}", rc.config.masks.as_deref().unwrap_or(""));
    }
    let leaves = rc.tree.num_leaves();
    let loaded: Vec<(String, Result<LabelMask>)> = masks
        .par_iter()
        .map(|(s, p)| {
            let r = read_mask(p).and_then(|m| {
                m.check_classes(leaves)?;
                Ok(m)
            });
            (s.clone(), r)
        })
        .collect();
    let (ok, failed) = collect_failures(loaded);
    let counts = count_pixels(ok.iter().map(|(_, m)| m), leaves)?;
    let w = effective_weights(&counts, beta, normalization)?;
    let classes: Vec<&str> = rc.tree.channel_binding().collect();
    let ids: Vec<String> = ok.iter().map(|(s, _)| s.clone()).collect();
    write_json(
        &rc.out.join("weights.json"),
        &json!({
            "beta": w.beta,
            "normalization": w.normalization,
            "classes": classes,
            "counts": counts.counts,
            "weights": w.weights,
            "ignored_pixels": counts.ignored,
        }),
    )?;
    write_json(&rc.out.join("weights.run.json"), &rc.echo("weights", &ids))?;
    for ((id, n), wt) in classes.iter().zip(&counts.counts).zip(&w.weights) {
        println!("{id:<24} {n:>12} {wt:>12.6}");
    }
    Ok(failed)
}

pub fn synth(spec_path: &Path, out: &Path) -> Result<Failures> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("reading spec {}", spec_path.display()))?;
    let spec: FieldSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing spec {}", spec_path.display()))?;
    let tax = spec
        .taxonomy
        .as_deref()
        .context("the spec names no taxonomy")?;
    let tax_path = spec_path.parent().unwrap_or(Path::new(".")).join(tax);
    let tree = load_taxonomy(&tax_path)?;
    let (map, mask) = generate_field(&spec, &tree)?;
    let tax_path = tax_path.canonicalize().unwrap_or(tax_path);
    let echo = FieldSpec {
        taxonomy: Some(tax_path.to_string_lossy().into_owned()),
        ..spec.clone()
    };

    let name = &spec.name;
    write_atomic(&out.join(format!("{name}.npy")), &store_prob_map(&map))?;
    write_atomic(&out.join(format!("{name}.png")), &store_label_mask(&mask)?)?;
    write_json(&out.join(format!("{name}.spec.json")), &echo)?;
    write_json(
        &out.join(format!("{name}.run.json")),
        &json!({
            "command": "synth",
            "spec": spec,
            "taxonomy": tax_path,
            "taxonomy_sha256": tree.content_hash(),
        }),
    )?;
    Ok(Vec::new())
}
