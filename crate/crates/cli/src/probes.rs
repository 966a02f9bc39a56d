//! The `probe` stage: altered copies of scenes, or the removed-object set.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::DynamicImage;
use ovdprobe_core::dataset::{write_entries, AnnotationEntry};
use ovdprobe_core::generation::{
    generated_annotations, read_discard_list, read_outcomes, select_discarded, GenerationOutcome, OutcomeStatus,
};
use ovdprobe_core::imaging::{load_rgb, save_png};
use ovdprobe_core::probe::{apply_probe, auto_source_rect, ProbeKind, ProbeOutcome, ProbeSpec, BRIGHTNESS_THRESHOLD, GREY, WHITE};
use serde::Serialize;
use serde_json::json;

use crate::manifest::Manifest;
use crate::{load_scenes, write_jsonl, Ctx, ProbeArgs};

pub(crate) fn parse_color(s: &str) -> Result<[u8; 3]> {
    match s.trim().to_ascii_lowercase().as_str() {
        "white" => return Ok(WHITE),
        "grey" | "gray" => return Ok(GREY),
        _ => {}
    }
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("color {s:?}: expected white, grey or R,G,B");
    }
    let mut c = [0u8; 3];
    for (slot, p) in c.iter_mut().zip(&parts) {
        *slot = p.parse().with_context(|| format!("color {s:?}: {p:?} is not a value in 0..=255"))?;
    }
    Ok(c)
}

#[derive(Serialize)]
struct ProbeRecord {
    image_id: String,
    scene_id: String,
    outcomes: Vec<ProbeOutcome>,
}

pub fn probe(ctx: &mut Ctx, a: &ProbeArgs) -> Result<()> {
    let Some(kind) = ProbeKind::parse(&a.kind) else {
        let names: Vec<&str> = ProbeKind::ALL.iter().map(|k| k.name()).collect();
        bail!("unknown probe kind {}; expected one of {}", a.kind, names.join(", "));
    };
    let mut m = ctx.manifest("probe");
    if kind == ProbeKind::Removed {
        removed(a, &mut m)?;
    } else {
        altered(kind, a, &mut m)?;
    }
    ctx.finish(&mut m);
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn removed(a: &ProbeArgs, m: &mut Manifest) -> Result<()> {
    let (Some(outcomes_path), Some(discard_path)) = (&a.outcomes, &a.discard_file) else {
        bail!("--kind removed needs --outcomes and --discard-file");
    };
    m.input(outcomes_path)?;
    m.input(discard_path)?;
    let ok: Vec<GenerationOutcome> = read_outcomes(outcomes_path)?
        .into_iter()
        .filter(|o| o.status == OutcomeStatus::Ok)
        .collect();
    let discard = read_discard_list(discard_path)?;
    let selected = select_discarded(&ok, &discard);
    for id in &discard {
        if !selected.iter().any(|o| &o.output_id == id) {
            tracing::warn!("discard list entry {id} matches no generated image");
        }
    }
    if selected.is_empty() {
        bail!("no generated image is on the discard list");
    }
    let base = outcomes_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let mut entries = generated_annotations(&selected);
    for e in &mut entries {
        e.image = std::path::absolute(base.join(&e.image))?.display().to_string();
    }
    let ann = a.out.join("annotations.jsonl");
    std::fs::create_dir_all(&a.out)?;
    write_entries(&entries, &ann)?;
    m.output(&ann);
    m.summary = json!({ "kind": "removed", "discard_entries": discard.len(), "images": entries.len() });
    println!("{} removed-object images selected", entries.len());
    Ok(())
}

fn altered(kind: ProbeKind, a: &ProbeArgs, m: &mut Manifest) -> Result<()> {
    let Some(scenes_path) = &a.scenes else {
        bail!("--kind {} needs --scenes", kind.name());
    };
    let color = a.color.as_deref().map(parse_color).transpose()?;
    let threshold = a.threshold.unwrap_or(BRIGHTNESS_THRESHOLD);
    let scenes = load_scenes(scenes_path, a.image_root.as_deref())?;
    m.input(scenes_path)?;
    let images_dir = a.out.join("images");
    std::fs::create_dir_all(&images_dir)?;

    let mut entries = Vec::new();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    'scenes: for scene in &scenes {
        let mut img = load_rgb(&scene.image_path)?;
        let mut outcomes = Vec::new();
        for obj in &scene.objects {
            let mut spec = ProbeSpec {
                kind,
                target_bbox: obj.bbox,
                color: None,
                source_rect: None,
                threshold: None,
            };
            match kind {
                ProbeKind::NoiseWhite | ProbeKind::NoiseGrey => spec.color = color,
                ProbeKind::BrightnessSmooth => spec.threshold = Some(threshold),
                ProbeKind::Pattern => {
                    let target = obj
                        .bbox
                        .pixel_span(scene.width, scene.height)
                        .context("object bbox covers no pixel")?;
                    let found = auto_source_rect(scene.width, scene.height, &target, scene.road_mask.as_ref(), a.source_step);
                    let Some(src) = found else {
                        tracing::warn!("{}: no on-road source rectangle for {}", scene.scene_id, obj.bbox);
                        skipped.push(json!({ "scene_id": scene.scene_id, "reason": "no source rectangle" }));
                        continue 'scenes;
                    };
                    spec.source_rect = Some(src);
                }
                ProbeKind::Removed => unreachable!(),
            }
            match apply_probe(&img, &spec) {
                Ok((out, outcome)) => {
                    img = out;
                    outcomes.push(outcome);
                }
                Err(e) => {
                    tracing::warn!("{}: {e}", scene.scene_id);
                    skipped.push(json!({ "scene_id": scene.scene_id, "reason": e.to_string() }));
                    continue 'scenes;
                }
            }
        }
        let id = format!("{}_{}", scene.scene_id, kind.name());
        let rel = format!("images/{id}.png");
        save_png(&DynamicImage::ImageRgb8(img), &a.out.join(&rel))?;
        let mut e = AnnotationEntry::from(scene);
        e.scene_id = id.clone();
        e.image = rel;
        e.road_mask = None;
        e.source_scene = Some(scene.origin().to_string());
        entries.push(e);
        records.push(ProbeRecord {
            image_id: id,
            scene_id: scene.scene_id.clone(),
            outcomes,
        });
    }
    if entries.is_empty() {
        bail!("the probe produced no images");
    }
    let ann = a.out.join("annotations.jsonl");
    write_entries(&entries, &ann)?;
    let probes = a.out.join("probes.jsonl");
    write_jsonl(&records, &probes)?;
    m.output(&ann);
    m.output(&probes);
    m.output(&images_dir);
    m.summary = json!({
        "kind": kind.name(),
        "scenes": scenes.len(),
        "images": entries.len(),
        "skipped": skipped,
    });
    println!("{} {} images written, {} scenes skipped", entries.len(), kind.name(), skipped.len());
    Ok(())
}
