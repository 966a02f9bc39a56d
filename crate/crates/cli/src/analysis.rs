//! Evaluation, heatmaps, correlation and report stages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ovdprobe_core::detection::{load_predictions, PredictionSet};
use ovdprobe_core::eval::{
    evaluate, fn_correlation, heatmap as accumulate, location_samples, EvalConfig, EvalResult, FnVector,
    GroundTruthImage, HeatmapGrid, HEATMAP_SCORE_FLOOR,
};
use ovdprobe_core::report::{emit_correlation, emit_tables, read_results_csv, render_heatmap, results_text, HeatmapMode};
use serde_json::json;

use crate::manifest::Manifest;
use crate::{load_scenes, write_json, Ctx, CorrelateArgs, EvalArgs, HeatmapArgs, ReportArgs};

fn load_sets(paths: &[PathBuf], m: &mut Manifest) -> Result<Vec<PredictionSet>> {
    let mut sets = Vec::new();
    let mut seen = BTreeSet::new();
    for p in paths {
        m.input(p)?;
        for set in load_predictions(p)? {
            let key = (set.image_id.clone(), set.model_name.clone(), set.prompt_id.clone());
            if !seen.insert(key) {
                bail!(
                    "{}: image {} / model {} / prompt {} also appears in an earlier prediction file",
                    p.display(),
                    set.image_id,
                    set.model_name,
                    set.prompt_id
                );
            }
            sets.push(set);
        }
    }
    Ok(sets)
}

fn eval_config(ctx: &mut Ctx, iou: Option<f64>, score_floor: Option<f64>, nms_iou: Option<f64>, floor_key: &str, floor_default: f64) -> Result<EvalConfig> {
    let cfg = EvalConfig {
        iou_thresh: ctx.resolver.get("iou", iou, None, 0.5f64)?,
        score_floor: ctx.resolver.get(floor_key, score_floor, None, floor_default)?,
        nms_iou: ctx.resolver.get("nms_iou", nms_iou, None, 0.5f64)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<()> {
    let scenes = load_scenes(&a.gt, a.image_root.as_deref())?;
    let gt: Vec<GroundTruthImage> = scenes.iter().map(GroundTruthImage::from).collect();
    let cfg = eval_config(ctx, a.iou, a.score_floor, a.nms_iou, "score_floor", 0.1)?;
    let dataset_id = match &a.dataset_id {
        Some(d) => d.clone(),
        None => a
            .gt
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
    };
    let mut m = ctx.manifest("eval");
    m.input(&a.gt)?;
    let sets = load_sets(&a.preds, &mut m)?;
    let out = evaluate(&dataset_id, &gt, &sets, &cfg)?;
    if out.results.is_empty() {
        bail!("the prediction files contain no prediction sets");
    }
    let paths = emit_tables(&out.results, &a.out)?;
    let fn_path = a.out.join("fn_vectors.json");
    write_json(&out.fn_vectors, &fn_path)?;
    m.output(&paths.csv);
    m.output(&paths.text);
    m.output(&fn_path);
    m.summary = json!({
        "dataset_id": dataset_id,
        "images": gt.len(),
        "ground_truth_objects": gt.iter().map(|g| g.gts.len()).sum::<usize>(),
        "rows": out.results.len(),
        "eval": cfg,
    });
    ctx.finish(&mut m);
    m.write(&a.out.join("manifest.json"))?;
    print!("{}", results_text(&out.results));
    Ok(())
}

fn parse_modes(mode: &str) -> Result<Vec<HeatmapMode>> {
    if mode == "both" {
        return Ok(vec![HeatmapMode::Recall, HeatmapMode::FnCount]);
    }
    HeatmapMode::parse(mode)
        .map(|m| vec![m])
        .with_context(|| format!("unknown heatmap mode {mode}; expected recall, fn_count or both"))
}

fn mode_name(mode: HeatmapMode) -> &'static str {
    match mode {
        HeatmapMode::Recall => "recall",
        HeatmapMode::FnCount => "fn_count",
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn render_all(grid: &HeatmapGrid, stem: &str, dir: &Path, modes: &[HeatmapMode], m: &mut Manifest) -> Result<Vec<serde_json::Value>> {
    let mut legends = Vec::new();
    for &mode in modes {
        let path = dir.join(format!("{stem}_{}.png", mode_name(mode)));
        let legend = render_heatmap(grid, &path, mode)?;
        m.output(&path);
        legends.push(json!({ "image": path.display().to_string(), "legend": legend }));
    }
    Ok(legends)
}

pub fn heatmap(ctx: &mut Ctx, a: &HeatmapArgs) -> Result<()> {
    let modes = parse_modes(&a.mode)?;
    let scenes = load_scenes(&a.gt, a.image_root.as_deref())?;
    let Some(first) = scenes.first() else {
        bail!("{} has no images", a.gt.display());
    };
    let (w, h) = (first.width, first.height);
    if let Some(s) = scenes.iter().find(|s| (s.width, s.height) != (w, h)) {
        bail!(
            "heatmaps need images of one size: {} is {}x{}, {} is {w}x{h}",
            s.scene_id,
            s.width,
            s.height,
            first.scene_id
        );
    }
    let gt: Vec<GroundTruthImage> = scenes.iter().map(GroundTruthImage::from).collect();
    let cfg = eval_config(ctx, a.iou, a.score_floor, a.nms_iou, "heatmap_score_floor", HEATMAP_SCORE_FLOOR)?;
    let mut m = ctx.manifest("heatmap");
    m.input(&a.gt)?;
    let sets = load_sets(&a.preds, &mut m)?;
    let pairs: BTreeSet<(String, String)> = sets
        .iter()
        .filter(|s| a.model.as_ref().is_none_or(|x| *x == s.model_name))
        .filter(|s| a.prompt.as_ref().is_none_or(|x| *x == s.prompt_id))
        .map(|s| (s.model_name.clone(), s.prompt_id.clone()))
        .collect();
    if pairs.is_empty() {
        bail!("no predictions match the requested model/prompt");
    }
    let mut rendered = Vec::new();
    for (model, prompt) in &pairs {
        let samples = location_samples(&gt, &sets, model, prompt, cfg.iou_thresh, cfg.score_floor, cfg.nms_iou)?;
        let grid = accumulate(&samples, w, h);
        let stem = format!("heatmap_{}_{}", file_safe(model), file_safe(prompt));
        let grid_path = a.out.join(format!("{stem}.grid.json"));
        std::fs::create_dir_all(&a.out)?;
        std::fs::write(&grid_path, grid.to_json()?)?;
        m.output(&grid_path);
        let legends = render_all(&grid, &stem, &a.out, &modes, &mut m)?;
        rendered.push(json!({
            "model": model,
            "prompt": prompt,
            "samples": samples.len(),
            "grid": grid_path.display().to_string(),
            "renders": legends,
        }));
    }
    m.summary = json!({ "width": w, "height": h, "eval": cfg, "heatmaps": rendered });
    ctx.finish(&mut m);
    m.write(&a.out.join("manifest.json"))?;
    println!("{} heatmap(s) written to {}", pairs.len(), a.out.display());
    Ok(())
}

/// Restricts every vector to the scenes all of them share.
fn align(vectors: Vec<FnVector>) -> Vec<FnVector> {
    let mut common: Option<BTreeSet<String>> = None;
    for v in &vectors {
        let ids: BTreeSet<String> = v.scene_ids.iter().cloned().collect();
        common = Some(match common {
            None => ids,
            Some(c) => c.intersection(&ids).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    vectors
        .into_iter()
        .map(|v| {
            let by_scene: BTreeMap<&String, u64> = v.scene_ids.iter().zip(v.counts.iter().copied()).collect();
            if by_scene.len() != common.len() {
                tracing::warn!(
                    "{}: using {} of {} scenes shared by all vectors",
                    v.dataset_id,
                    common.len(),
                    by_scene.len()
                );
            }
            FnVector {
                counts: common.iter().map(|s| by_scene[s]).collect(),
                scene_ids: common.iter().cloned().collect(),
                dataset_id: v.dataset_id.clone(),
            }
        })
        .collect()
}

pub fn correlate(ctx: &mut Ctx, a: &CorrelateArgs) -> Result<()> {
    let mut m = ctx.manifest("correlate");
    let mut vectors = Vec::new();
    for p in &a.fn_vectors {
        m.input(p)?;
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let vs: Vec<FnVector> = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        vectors.extend(vs);
    }
    if !a.select.is_empty() {
        vectors.retain(|v| a.select.contains(&v.dataset_id));
        for s in &a.select {
            if !vectors.iter().any(|v| &v.dataset_id == s) {
                bail!("no FN vector labelled {s}");
            }
        }
    }
    let mut labels = BTreeSet::new();
    for v in &vectors {
        if !labels.insert(v.dataset_id.clone()) {
            bail!("FN vector label {} appears twice", v.dataset_id);
        }
    }
    let aligned = align(vectors);
    let matrix = fn_correlation(&aligned)?;
    let path = emit_correlation(&matrix, &a.out)?;
    m.output(&path);
    m.summary = json!({
        "vectors": aligned.len(),
        "scenes": aligned.first().map_or(0, |v| v.scene_ids.len()),
        "undefined_entries": matrix.pearson.iter().flatten().filter(|v| v.is_none()).count(),
    });
    ctx.finish(&mut m);
    m.write(&a.out.join("manifest.json"))?;
    for (method, rows) in [("pearson", &matrix.pearson), ("spearman", &matrix.spearman)] {
        println!("{method}");
        for (label, row) in matrix.labels.iter().zip(rows) {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map_or_else(|| "    NA".to_string(), |v| format!("{v:6.3}")))
                .collect();
            println!("  {label}: {}", cells.join(" "));
        }
    }
    Ok(())
}

pub fn report(ctx: &mut Ctx, a: &ReportArgs) -> Result<()> {
    if a.results.is_empty() && a.grid.is_empty() {
        bail!("nothing to report; pass --results and/or --grid");
    }
    let modes = parse_modes(&a.mode)?;
    let mut m = ctx.manifest("report");
    let mut merged: Vec<EvalResult> = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &a.results {
        m.input(p)?;
        for r in read_results_csv(p)? {
            let key = (r.dataset_id.clone(), r.model_name.clone(), r.prompt_id.clone(), r.iou_threshold.to_bits());
            if !seen.insert(key) {
                bail!(
                    "{}: row {}/{}/{} at IoU {} already present",
                    p.display(),
                    r.dataset_id,
                    r.model_name,
                    r.prompt_id,
                    r.iou_threshold
                );
            }
            merged.push(r);
        }
    }
    if !merged.is_empty() {
        let paths = emit_tables(&merged, &a.out)?;
        m.output(&paths.csv);
        m.output(&paths.text);
        print!("{}", results_text(&merged));
    }
    let mut renders = Vec::new();
    for g in &a.grid {
        m.input(g)?;
        let bytes = std::fs::read(g).with_context(|| format!("reading {}", g.display()))?;
        let grid = HeatmapGrid::from_json(&bytes)?;
        let name = g.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let stem = name.strip_suffix(".grid.json").or_else(|| name.strip_suffix(".json")).unwrap_or(&name);
        renders.extend(render_all(&grid, stem, &a.out, &modes, &mut m)?);
    }
    m.summary = json!({ "rows": merged.len(), "heatmaps": renders });
    ctx.finish(&mut m);
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}
