//! Ingest and the planning stages.

use anyhow::{bail, Context, Result};
use ovdprobe_core::dataset::{filter_eligible, load_dataset, write_entries, Eligibility};
use ovdprobe_core::generation::{
    apply_discard_list, plan_hybrid_dataset, plan_random_location_dataset, plan_single_concept_dataset,
    read_discard_list, write_jobs, GenerationParams, InpaintJob, LocationPrompt, SingleConceptRule,
};
use ovdprobe_core::placement::{build_sample_sets, sample_plan, SamplingConfig};
use ovdprobe_core::prompts::{read_word_list, single_concept_prompt, KeywordList};
use serde_json::json;

use crate::{absolute_entries, image_root, load_scenes, write_jsonl, Ctx, IngestArgs, PlanHybridArgs, PlanRandomArgs, PlanSingleArgs};

pub fn ingest(ctx: &mut Ctx, a: &IngestArgs) -> Result<()> {
    let root = image_root(&a.annotations, a.image_root.as_deref());
    let loaded = load_dataset(&a.annotations, &root)?;
    let rule = Eligibility {
        min_area: a.min_area,
        require_single_object: !a.allow_multi_object,
    };
    let eligible = filter_eligible(&loaded.scenes, rule);
    let mut m = ctx.manifest("ingest");
    m.input(&a.annotations)?;
    for (name, scenes) in [("scenes.jsonl", &loaded.scenes), ("eligible.jsonl", &eligible)] {
        let path = a.out.join(name);
        write_entries(&absolute_entries(scenes, &root)?, &path)?;
        m.output(&path);
    }
    m.summary = json!({
        "scenes": loaded.scenes.len(),
        "eligible": eligible.len(),
        "min_area": a.min_area,
        "require_single_object": rule.require_single_object,
        "warnings": loaded.warnings,
    });
    ctx.finish(&mut m);
    m.write(&a.out.join("manifest.json"))?;
    println!("{} scenes, {} eligible", loaded.scenes.len(), eligible.len());
    Ok(())
}

fn resolve_params(
    ctx: &mut Ctx,
    flag: Option<String>,
    default: &str,
    repeats: Option<u32>,
    batch_size: Option<u32>,
) -> Result<GenerationParams> {
    let name: String = ctx.resolver.get("preset", flag, None, default.to_string())?;
    let Some(mut params) = GenerationParams::preset(&name) else {
        bail!(
            "preset {name} has no parameter values; choose one of {}",
            GenerationParams::PRESET_NAMES
                .iter()
                .filter(|n| GenerationParams::preset(n).is_some())
                .copied()
                .collect::<Vec<_>>()
                .join(", ")
        );
    };
    if let Some(r) = repeats {
        params.repeats = r;
    }
    if let Some(b) = batch_size {
        params.batch_size = b;
    }
    params.validate()?;
    Ok(params)
}

fn drop_discarded(jobs: Vec<InpaintJob>, discard: Option<&std::path::Path>, m: &mut crate::manifest::Manifest) -> Result<(Vec<InpaintJob>, usize)> {
    let Some(path) = discard else {
        return Ok((jobs, 0));
    };
    m.input(path)?;
    let ids = read_discard_list(path)?;
    let (kept, report) = apply_discard_list(&jobs, &ids);
    for id in &report.unknown_ids {
        tracing::warn!("discard list entry {id} matches no job");
    }
    Ok((kept, report.removed))
}

fn finish_plan(ctx: &mut Ctx, mut m: crate::manifest::Manifest, jobs: &[InpaintJob], out: &std::path::Path, summary: serde_json::Value) -> Result<()> {
    let path = out.join("jobs.jsonl");
    write_jobs(jobs, &path)?;
    m.output(&path);
    m.summary = summary;
    ctx.finish(&mut m);
    m.write(&out.join("manifest.json"))?;
    println!("{} jobs written to {}", jobs.len(), path.display());
    Ok(())
}

pub fn plan_hybrid(ctx: &mut Ctx, a: &PlanHybridArgs) -> Result<()> {
    let scenes = load_scenes(&a.scenes, a.image_root.as_deref())?;
    let params = resolve_params(ctx, a.preset.clone(), "V2", a.repeats, a.batch_size)?;
    let seed = ctx.resolver.get("seed", a.seed, None, 0u64)?;
    let nouns = read_word_list(&a.nouns)?;
    let mut m = ctx.manifest("plan-hybrid");
    m.input(&a.scenes)?;
    m.input(&a.nouns)?;
    m.seeds.insert("seed".into(), seed);
    let jobs = plan_hybrid_dataset(&scenes, &params, &nouns, seed)?;
    let planned = jobs.len();
    let (jobs, discarded) = drop_discarded(jobs, a.discard_file.as_deref(), &mut m)?;
    let summary = json!({
        "scenes": scenes.len(),
        "params": params,
        "planned": planned,
        "discarded": discarded,
        "jobs": jobs.len(),
    });
    finish_plan(ctx, m, &jobs, &a.out, summary)
}

pub fn plan_single(ctx: &mut Ctx, a: &PlanSingleArgs) -> Result<()> {
    let scenes = load_scenes(&a.scenes, a.image_root.as_deref())?;
    let params = resolve_params(ctx, a.preset.clone(), "single", a.repeats, a.batch_size)?;
    let seed = ctx.resolver.get("seed", a.seed, None, 0u64)?;
    let min_overlap = ctx.resolver.get("min_overlap", a.min_overlap, None, 0.5f64)?;
    if !(0.0..=1.0).contains(&min_overlap) {
        bail!("min_overlap {min_overlap} outside [0, 1]");
    }
    let mut m = ctx.manifest("plan-single");
    m.input(&a.scenes)?;
    let keywords = match &a.keywords {
        Some(p) => {
            m.input(p)?;
            KeywordList::from_file(p)?
        }
        None => KeywordList::builtin(),
    };
    m.seeds.insert("seed".into(), seed);
    let rule = SingleConceptRule {
        min_overlap,
        min_area: a.min_area,
    };
    let (jobs, skipped) = plan_single_concept_dataset(&scenes, &keywords, &params, rule, seed)?;
    let planned = jobs.len();
    let (jobs, discarded) = drop_discarded(jobs, a.discard_file.as_deref(), &mut m)?;
    let skipped_rows: Vec<_> = skipped
        .iter()
        .map(|s| json!({ "scene_id": s.scene_id, "reason": s.reason }))
        .collect();
    let skipped_path = a.out.join("skipped.jsonl");
    write_jsonl(&skipped_rows, &skipped_path)?;
    m.output(&skipped_path);
    let summary = json!({
        "scenes": scenes.len(),
        "skipped": skipped.len(),
        "params": params,
        "min_overlap": min_overlap,
        "min_area": a.min_area,
        "planned": planned,
        "discarded": discarded,
        "jobs": jobs.len(),
    });
    finish_plan(ctx, m, &jobs, &a.out, summary)
}

pub fn plan_random(ctx: &mut Ctx, a: &PlanRandomArgs) -> Result<()> {
    let scenes = load_scenes(&a.scenes, a.image_root.as_deref())?;
    let scene = scenes
        .iter()
        .find(|s| s.scene_id == a.scene_id)
        .with_context(|| format!("scene {} not in {}", a.scene_id, a.scenes.display()))?;
    let Some(road) = &scene.road_mask else {
        bail!("scene {} has no road mask", scene.scene_id);
    };
    let params = resolve_params(ctx, a.preset.clone(), "single", None, None)?;
    let seed = ctx.resolver.get("seed", a.seed, None, 0u64)?;
    let cfg = SamplingConfig {
        margin: a.margin,
        border_depth: a.border_depth,
        n_road: a.n_road,
        n_border: a.n_border,
        bbox_w: a.bbox_w,
        bbox_h: a.bbox_h,
    };
    let mut m = ctx.manifest("plan-random");
    m.input(&a.scenes)?;
    m.seeds.insert("seed".into(), seed);
    let sets = build_sample_sets(&scene.scene_id, road, cfg.margin, cfg.border_depth)?;
    let plan = sample_plan(&scene.scene_id, &sets, &cfg, seed)?;
    let prompt = match (&a.keyword, &a.nouns) {
        (Some(k), _) => LocationPrompt::Fixed(single_concept_prompt(k)?),
        (None, Some(p)) => {
            m.input(p)?;
            LocationPrompt::Hybrid(read_word_list(p)?)
        }
        (None, None) => unreachable!("clap requires one of --keyword and --nouns"),
    };
    let jobs = plan_random_location_dataset(scene, &plan, &prompt, &params)?;
    let plan_path = a.out.join("sample_plan.json");
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(&plan_path, plan.to_json()?)?;
    m.output(&plan_path);
    let summary = json!({
        "scene_id": scene.scene_id,
        "sampling": cfg,
        "road_only_pool": sets.road_only.len(),
        "border_pool": sets.border.len(),
        "centers": plan.centers.len(),
        "params": params,
        "jobs": jobs.len(),
    });
    finish_plan(ctx, m, &jobs, &a.out, summary)
}
