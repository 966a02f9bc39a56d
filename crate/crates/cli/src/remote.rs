//! Stages that talk to the inpainting and detector services.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Result};
use ovdprobe_core::dataset::write_entries;
use ovdprobe_core::detection::{fetch_predictions, save_predictions, DetectPrompt, DetectTarget, FetchConfig};
use ovdprobe_core::generation::{
    apply_discard_list, execute, generated_annotations, read_discard_list, read_jobs, write_outcomes,
    ExecuteConfig, GenerationOutcome, OutcomeStatus,
};
use ovdprobe_core::http::RetryPolicy;
use ovdprobe_core::prompts::{detection_prompt_text, DETECTION_PROMPTS};
use serde_json::json;

use crate::config::{DETECT_URL_ENV, INPAINT_URL_ENV};
use crate::{load_scenes, runtime, Ctx, DetectArgs, InpaintArgs};

fn retry_policy(ctx: &mut Ctx, max_retries: Option<u32>, delay_ms: u64, timeout_secs: u64) -> Result<RetryPolicy> {
    Ok(RetryPolicy {
        max_retries: ctx.resolver.get("max_retries", max_retries, None, 3u32)?,
        base_delay: Duration::from_millis(delay_ms),
        request_timeout: Duration::from_secs(timeout_secs),
    })
}

pub fn inpaint(ctx: &mut Ctx, a: &InpaintArgs) -> Result<()> {
    let jobs = read_jobs(&a.jobs)?;
    let url: String = ctx.resolver.require(
        "inpaint_url",
        a.service_url.clone(),
        Some(INPAINT_URL_ENV),
        "pass --service-url or set OVDPROBE_INPAINT_URL",
    )?;
    let concurrency = ctx.resolver.get("concurrency", a.concurrency, None, 4usize)?;
    let retry = retry_policy(ctx, a.max_retries, a.retry_delay_ms, a.timeout_secs)?;
    let mut m = ctx.manifest("inpaint");
    m.input(&a.jobs)?;
    let cfg = ExecuteConfig {
        service_url: url,
        concurrency,
        retry,
        output_dir: a.out.clone(),
    };
    let outcomes = runtime()?.block_on(execute(&jobs, &cfg));
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for o in &outcomes {
        let key = match o.status {
            OutcomeStatus::Ok => "ok",
            OutcomeStatus::FailedPermanent => "failed_permanent",
            OutcomeStatus::FailedTransient => "failed_transient",
        };
        *counts.entry(key).or_default() += 1;
        if let Some(e) = &o.error {
            tracing::warn!("{}: {e}", o.output_id);
        }
    }
    let outcomes_path = a.out.join("outcomes.jsonl");
    write_outcomes(&outcomes, &outcomes_path)?;
    m.output(&outcomes_path);

    let ok: Vec<GenerationOutcome> = outcomes
        .iter()
        .filter(|o| o.status == OutcomeStatus::Ok)
        .cloned()
        .collect();
    let (kept, discarded) = match &a.discard_file {
        Some(p) => {
            m.input(p)?;
            let (kept, report) = apply_discard_list(&ok, &read_discard_list(p)?);
            for id in &report.unknown_ids {
                tracing::warn!("discard list entry {id} matches no generated image");
            }
            (kept, report.removed)
        }
        None => (ok, 0),
    };
    let ann_path = a.out.join("annotations.jsonl");
    write_entries(&generated_annotations(&kept), &ann_path)?;
    m.output(&ann_path);
    m.summary = json!({
        "jobs": jobs.len(),
        "outcomes": counts,
        "discarded": discarded,
        "annotated_images": kept.len(),
    });
    ctx.finish(&mut m);
    m.write(&a.out.join("manifest.json"))?;
    let n_ok = counts.get("ok").copied().unwrap_or(0);
    println!("{n_ok}/{} jobs succeeded, {} images annotated", jobs.len(), kept.len());
    if n_ok == 0 && !jobs.is_empty() {
        bail!("every inpainting job failed; see {}", outcomes_path.display());
    }
    Ok(())
}

fn sidecar_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "predictions".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn detect(ctx: &mut Ctx, a: &DetectArgs) -> Result<()> {
    let scenes = load_scenes(&a.annotations, a.image_root.as_deref())?;
    let ids: Vec<String> = if a.prompts.is_empty() {
        DETECTION_PROMPTS.iter().map(|(id, _)| id.to_string()).collect()
    } else {
        a.prompts.clone()
    };
    let mut prompts = Vec::new();
    for id in ids {
        let Some(text) = detection_prompt_text(&id) else {
            bail!("unknown prompt id {id}; expected p1..p5");
        };
        prompts.push(DetectPrompt {
            id,
            text: text.to_string(),
        });
    }
    let url: String = ctx.resolver.require(
        "detect_url",
        a.service_url.clone(),
        Some(DETECT_URL_ENV),
        "pass --service-url or set OVDPROBE_DETECT_URL",
    )?;
    let score_floor = ctx.resolver.get("detect_score_floor", a.score_floor, None, 0.0f64)?;
    let concurrency = ctx.resolver.get("concurrency", a.concurrency, None, 4usize)?;
    let retry = retry_policy(ctx, a.max_retries, a.retry_delay_ms, a.timeout_secs)?;
    let mut m = ctx.manifest("detect");
    m.input(&a.annotations)?;
    let targets: Vec<DetectTarget> = scenes
        .iter()
        .map(|s| DetectTarget {
            image_id: s.scene_id.clone(),
            path: s.image_path.clone(),
        })
        .collect();
    let cfg = FetchConfig {
        service_url: url,
        model_name: a.model.clone(),
        concurrency,
        score_floor,
        retry,
    };
    let report = runtime()?.block_on(fetch_predictions(&targets, &prompts, &cfg));
    for f in &report.failures {
        tracing::warn!("{} / {}: {:?}: {}", f.image_id, f.prompt_id, f.kind, f.message);
    }
    save_predictions(&report.sets, &a.out)?;
    m.output(&a.out);
    let failures: Vec<_> = report
        .failures
        .iter()
        .map(|f| json!({ "image_id": f.image_id, "prompt_id": f.prompt_id, "kind": f.kind, "message": f.message }))
        .collect();
    m.summary = json!({
        "model": a.model,
        "prompts": prompts.iter().map(|p| json!({ "id": p.id, "text": p.text })).collect::<Vec<_>>(),
        "images": targets.len(),
        "sets": report.sets.len(),
        "predictions": report.sets.iter().map(|s| s.predictions.len()).sum::<usize>(),
        "failures": failures,
    });
    ctx.finish(&mut m);
    m.write(&sidecar_manifest(&a.out))?;
    println!(
        "{} prediction sets, {} failed requests",
        report.sets.len(),
        report.failures.len()
    );
    if report.sets.is_empty() && !targets.is_empty() {
        bail!("no detector request succeeded");
    }
    Ok(())
}
