//! Inpainting job planning, execution against the inpainting service, and
//! paste-back of generated frames into full scenes.
//!
//! Every job produces one output image. The job carries its crop frame, mask
//! geometry, prompt and service parameters so a job file fully describes the
//! run; planning is a pure function of scenes, parameters and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use image::{DynamicImage, RgbImage};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{AnnotationEntry, ObjectEntry, SceneRecord, MIN_OBJECT_PIXELS};
use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryRaster};
use crate::http::{self, FailureKind, RetryPolicy};
use crate::imaging;
use crate::placement::{self, CropFrame, SamplePlan, MODEL_SIDE};
use crate::prompts::{self, KeywordList, PromptSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub sampler_name: String,
    pub denoising_strength: f64,
    pub inpainting_fill: bool,
    pub sampling_steps: u32,
    pub padding_mask_crop: u32,
    pub batch_size: u32,
    pub repeats: u32,
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.sampler_name.trim().is_empty() {
            return bad("sampler_name is empty");
        }
        if !(self.denoising_strength > 0.0 && self.denoising_strength <= 1.0) {
            return bad("denoising_strength must be in (0, 1]");
        }
        if self.sampling_steps == 0 || self.batch_size == 0 || self.repeats == 0 {
            return bad("sampling_steps, batch_size and repeats must be positive");
        }
        Ok(())
    }

    fn hybrid(sampler: &str, denoising_strength: f64) -> Self {
        Self {
            sampler_name: sampler.to_string(),
            denoising_strength,
            inpainting_fill: false,
            sampling_steps: 30,
            padding_mask_crop: 0,
            batch_size: 2,
            repeats: 10,
        }
    }

    /// Built-in presets: `V2`, `V3`, `V4` (hybrid-concept variants) and
    /// `single` (single-concept). `V1` has no built-in values and must be
    /// supplied through configuration.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "V2" => Some(Self::hybrid("Euler a", 0.7)),
            "V3" => Some(Self::hybrid("DPM++ 2S a", 0.7)),
            "V4" => Some(Self::hybrid("DPM++ 2S a", 1.0)),
            "single" => Some(Self {
                sampler_name: "Euler a".to_string(),
                denoising_strength: 0.75,
                inpainting_fill: false,
                sampling_steps: 80,
                padding_mask_crop: 32,
                batch_size: 1,
                repeats: 1,
            }),
            _ => None,
        }
    }

    pub const PRESET_NAMES: [&'static str; 5] = ["V1", "V2", "V3", "V4", "single"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    Oval,
    Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub shape: MaskShape,
    pub bbox: BBox,
}

impl MaskSpec {
    /// Mask raster over the frame (set = inpaint).
    pub fn raster(&self, frame: &CropFrame) -> Result<BinaryRaster> {
        match self.shape {
            MaskShape::Oval => Ok(placement::oval_mask(&self.bbox, frame)?.raster),
            MaskShape::Rect => placement::rect_mask(&self.bbox, frame),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintJob {
    pub output_id: String,
    pub scene_id: String,
    pub image_path: PathBuf,
    pub image_width: u32,
    pub image_height: u32,
    pub frame: CropFrame,
    pub mask: MaskSpec,
    pub prompt: PromptSpec,
    pub params: GenerationParams,
    pub repeat_index: u32,
    pub batch_index: u32,
    /// Seed forwarded to the inpainting service.
    pub seed: u64,
}

pub fn write_jobs(jobs: &[InpaintJob], path: &Path) -> Result<()> {
    write_jsonl(jobs, path)
}

pub fn read_jobs(path: &Path) -> Result<Vec<InpaintJob>> {
    read_jsonl(path)
}

pub(crate) fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn job_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.next_u32() as u64
}

/// Hybrid-concept jobs: `repeats x batch_size` per scene, each with a fresh
/// prompt, an oval mask over the scene's object and a 512 frame.
pub fn plan_hybrid_dataset(
    scenes: &[SceneRecord],
    params: &GenerationParams,
    nouns: &[String],
    seed: u64,
) -> Result<Vec<InpaintJob>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(scenes.len() * (params.repeats * params.batch_size) as usize);
    for scene in scenes {
        let [object] = scene.objects.as_slice() else {
            return Err(Error::InvalidScene {
                scene_id: scene.scene_id.clone(),
                message: format!(
                    "hybrid planning needs exactly one object, found {}",
                    scene.objects.len()
                ),
            });
        };
        let frame = placement::crop_frame_around(&object.bbox, scene.width, scene.height, MODEL_SIDE)?;
        for repeat_index in 0..params.repeats {
            for batch_index in 0..params.batch_size {
                let prompt = prompts::hybrid_prompt(nouns, rng.next_u64())?;
                jobs.push(InpaintJob {
                    output_id: format!("{}_r{repeat_index:02}_b{batch_index}", scene.scene_id),
                    scene_id: scene.scene_id.clone(),
                    image_path: scene.image_path.clone(),
                    image_width: scene.width,
                    image_height: scene.height,
                    frame,
                    mask: MaskSpec {
                        shape: MaskShape::Oval,
                        bbox: object.bbox,
                    },
                    prompt,
                    params: params.clone(),
                    repeat_index,
                    batch_index,
                    seed: job_seed(&mut rng),
                });
            }
        }
    }
    Ok(jobs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedScene {
    pub scene_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SingleConceptRule {
    pub min_overlap: f64,
    pub min_area: u64,
}

impl Default for SingleConceptRule {
    fn default() -> Self {
        Self {
            min_overlap: 0.5,
            min_area: MIN_OBJECT_PIXELS,
        }
    }
}

/// Single-concept jobs: one on-road target per scene replaced by a keyword
/// object, crop side chosen by the target's size.
pub fn plan_single_concept_dataset(
    scenes: &[SceneRecord],
    keywords: &KeywordList,
    params: &GenerationParams,
    rule: SingleConceptRule,
    seed: u64,
) -> Result<(Vec<InpaintJob>, Vec<SkippedScene>)> {
    params.validate()?;
    if keywords.entries.is_empty() {
        return Err(Error::Prompt("keyword list is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for scene in scenes {
        let skip = |reason: &str| SkippedScene {
            scene_id: scene.scene_id.clone(),
            reason: reason.to_string(),
        };
        let Some(road) = &scene.road_mask else {
            tracing::info!("scene {}: skipped, no road mask", scene.scene_id);
            skipped.push(skip("no road mask"));
            continue;
        };
        let qualifying: Vec<_> = scene
            .objects
            .iter()
            .filter(|o| {
                o.pixel_area >= rule.min_area
                    && placement::drivable_overlap(&o.bbox, road) >= rule.min_overlap
            })
            .collect();
        if qualifying.is_empty() {
            tracing::info!("scene {}: skipped, no qualifying on-road object", scene.scene_id);
            skipped.push(skip("no object meets the size and drivable-overlap requirements"));
            continue;
        }
        let target = qualifying[rng.random_range(0..qualifying.len())];
        let side = placement::crop_tier(&target.bbox);
        let frame = match placement::crop_frame_around(&target.bbox, scene.width, scene.height, side) {
            Ok(f) => f,
            Err(e) => {
                skipped.push(skip(&e.to_string()));
                continue;
            }
        };
        for repeat_index in 0..params.repeats {
            for batch_index in 0..params.batch_size {
                let keyword = &keywords.entries[rng.random_range(0..keywords.entries.len())];
                jobs.push(InpaintJob {
                    output_id: format!("{}_r{repeat_index:02}_b{batch_index}", scene.scene_id),
                    scene_id: scene.scene_id.clone(),
                    image_path: scene.image_path.clone(),
                    image_width: scene.width,
                    image_height: scene.height,
                    frame,
                    mask: MaskSpec {
                        shape: MaskShape::Rect,
                        bbox: target.bbox,
                    },
                    prompt: keywords.prompt(keyword)?,
                    params: params.clone(),
                    repeat_index,
                    batch_index,
                    seed: job_seed(&mut rng),
                });
            }
        }
    }
    Ok((jobs, skipped))
}

#[derive(Debug, Clone)]
pub enum LocationPrompt {
    /// Same prompt for every location.
    Fixed(PromptSpec),
    /// Fresh hybrid prompt per location.
    Hybrid(Vec<String>),
}

/// One job per sampled center: oval mask in the plan's box, 512 frame.
pub fn plan_random_location_dataset(
    scene: &SceneRecord,
    plan: &SamplePlan,
    prompt: &LocationPrompt,
    params: &GenerationParams,
) -> Result<Vec<InpaintJob>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(1);
    let mut jobs = Vec::with_capacity(plan.centers.len());
    for (i, center) in plan.centers.iter().enumerate() {
        let bbox = plan.bbox_for(center);
        let frame = placement::crop_frame_around(&bbox, scene.width, scene.height, MODEL_SIDE)?;
        let prompt = match prompt {
            LocationPrompt::Fixed(p) => p.clone(),
            LocationPrompt::Hybrid(nouns) => prompts::hybrid_prompt(nouns, rng.next_u64())?,
        };
        jobs.push(InpaintJob {
            output_id: format!("{}_loc{i:04}", scene.scene_id),
            scene_id: scene.scene_id.clone(),
            image_path: scene.image_path.clone(),
            image_width: scene.width,
            image_height: scene.height,
            frame,
            mask: MaskSpec {
                shape: MaskShape::Oval,
                bbox,
            },
            prompt,
            params: params.clone(),
            repeat_index: i as u32,
            batch_index: 0,
            seed: job_seed(&mut rng),
        });
    }
    Ok(jobs)
}

/// `POST /inpaint` request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub sampler_name: String,
    pub steps: u32,
    pub denoising_strength: f64,
    pub inpainting_fill: bool,
    pub padding_mask_crop: u32,
    pub batch_size: u32,
    pub seed: u64,
}

/// `POST /inpaint` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub images: Vec<String>,
    #[serde(default)]
    pub info: String,
}

/// Crops the job's frame, upscales it to the model side and encodes the
/// request. Each job asks the service for a single image.
pub fn build_request(job: &InpaintJob, source: &RgbImage) -> Result<InpaintRequest> {
    let frame = &job.frame;
    if !frame.rect.fits(source.width(), source.height()) {
        return Err(Error::Geometry(format!(
            "{}: frame exceeds {}x{} source image",
            job.output_id,
            source.width(),
            source.height()
        )));
    }
    let crop = imaging::crop(source, &frame.rect);
    let side = frame.scale_to.max(frame.side());
    let image = imaging::resize_square(&crop, side);
    let mask = imaging::resize_mask(&job.mask.raster(frame)?.to_luma(), side);
    Ok(InpaintRequest {
        image: imaging::png_base64(&DynamicImage::ImageRgb8(image))?,
        mask: imaging::png_base64(&DynamicImage::ImageLuma8(mask))?,
        prompt: job.prompt.text.clone(),
        sampler_name: job.params.sampler_name.clone(),
        steps: job.params.sampling_steps,
        denoising_strength: job.params.denoising_strength,
        inpainting_fill: job.params.inpainting_fill,
        padding_mask_crop: job.params.padding_mask_crop,
        batch_size: 1,
        seed: job.seed,
    })
}

/// Scales the generated frame back to the crop size and writes it into a
/// copy of the source at the frame offset.
pub fn paste_back(source: &RgbImage, job: &InpaintJob, generated: &RgbImage) -> RgbImage {
    let side = job.frame.side();
    let patch = if generated.dimensions() == (side, side) {
        generated.clone()
    } else {
        image::imageops::resize(generated, side, side, imaging::RESAMPLE_FILTER)
    };
    imaging::paste(source, &patch, &job.frame.rect)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    FailedPermanent,
    FailedTransient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub output_id: String,
    pub scene_id: String,
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    /// Output image, relative to the run's output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_sha256: Option<String>,
    pub resample_filter: String,
    pub prompt: String,
    pub target_bbox: BBox,
    pub image_width: u32,
    pub image_height: u32,
}

impl GenerationOutcome {
    fn for_job(job: &InpaintJob) -> Self {
        Self {
            output_id: job.output_id.clone(),
            scene_id: job.scene_id.clone(),
            status: OutcomeStatus::Ok,
            error: None,
            attempts: 0,
            output_path: None,
            request_sha256: None,
            resample_filter: imaging::RESAMPLE_FILTER_NAME.to_string(),
            prompt: job.prompt.text.clone(),
            target_bbox: job.mask.bbox,
            image_width: job.image_width,
            image_height: job.image_height,
        }
    }

    fn failed(mut self, kind: FailureKind, message: String) -> Self {
        self.status = match kind {
            FailureKind::Permanent => OutcomeStatus::FailedPermanent,
            FailureKind::Transient => OutcomeStatus::FailedTransient,
        };
        self.error = Some(message);
        self
    }
}

pub fn write_outcomes(outcomes: &[GenerationOutcome], path: &Path) -> Result<()> {
    write_jsonl(outcomes, path)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<GenerationOutcome>> {
    read_jsonl(path)
}

#[derive(Debug, Clone)]
pub struct ExecuteConfig {
    pub service_url: String,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub output_dir: PathBuf,
}

fn inpaint_endpoint(base: &str) -> String {
    format!("{}/inpaint", base.trim_end_matches('/'))
}

/// Runs every job against the service. Failures are recorded per job and do
/// not stop the run. Outcomes are sorted by `output_id`.
pub async fn execute(jobs: &[InpaintJob], config: &ExecuteConfig) -> Vec<GenerationOutcome> {
    let client = http::build_client(&config.retry);
    let url = inpaint_endpoint(&config.service_url);
    let mut by_image: BTreeMap<&Path, Vec<&InpaintJob>> = BTreeMap::new();
    for job in jobs {
        by_image.entry(job.image_path.as_path()).or_default().push(job);
    }
    let mut outcomes = Vec::with_capacity(jobs.len());
    // one decoded source image alive at a time
    for (image_path, group) in by_image {
        let path = image_path.to_path_buf();
        let source = match tokio::task::spawn_blocking(move || imaging::load_rgb(&path)).await {
            Ok(Ok(img)) => Arc::new(img),
            Ok(Err(e)) => {
                outcomes.extend(group.iter().map(|j| {
                    GenerationOutcome::for_job(j).failed(FailureKind::Permanent, e.to_string())
                }));
                continue;
            }
            Err(e) => {
                outcomes.extend(group.iter().map(|j| {
                    GenerationOutcome::for_job(j).failed(FailureKind::Permanent, e.to_string())
                }));
                continue;
            }
        };
        let done: Vec<GenerationOutcome> = stream::iter(group)
            .map(|job| run_job(job, source.clone(), &client, &url, config))
            .buffer_unordered(config.concurrency.max(1))
            .collect()
            .await;
        outcomes.extend(done);
    }
    outcomes.sort_by(|a, b| a.output_id.cmp(&b.output_id));
    outcomes
}

async fn run_job(
    job: &InpaintJob,
    source: Arc<RgbImage>,
    client: &reqwest::Client,
    url: &str,
    config: &ExecuteConfig,
) -> GenerationOutcome {
    let mut outcome = GenerationOutcome::for_job(job);
    let prepared = {
        let job = job.clone();
        let source = source.clone();
        tokio::task::spawn_blocking(move || -> Result<Vec<u8>> {
            Ok(serde_json::to_vec(&build_request(&job, &source)?)?)
        })
        .await
    };
    let body = match prepared {
        Ok(Ok(b)) => b,
        Ok(Err(e)) => return outcome.failed(FailureKind::Permanent, e.to_string()),
        Err(e) => return outcome.failed(FailureKind::Permanent, e.to_string()),
    };
    outcome.request_sha256 = Some(format!("{:x}", Sha256::digest(&body)));
    let response: InpaintResponse = match http::post_json(client, url, &body, &config.retry).await {
        Ok((r, attempts)) => {
            outcome.attempts = attempts;
            r
        }
        Err(e) => {
            outcome.attempts = e.attempts;
            return outcome.failed(e.kind, e.message);
        }
    };
    let Some(first) = response.images.first() else {
        return outcome.failed(FailureKind::Permanent, "response contained no images".into());
    };
    let generated = match imaging::decode_base64_image(first) {
        Ok(img) => img.to_rgb8(),
        Err(e) => return outcome.failed(FailureKind::Permanent, e),
    };
    let rel = format!("images/{}.png", job.output_id);
    let dest = config.output_dir.join(&rel);
    let job_c = job.clone();
    let written = tokio::task::spawn_blocking(move || {
        let out = paste_back(&source, &job_c, &generated);
        imaging::save_png(&DynamicImage::ImageRgb8(out), &dest)
    })
    .await;
    match written {
        Ok(Ok(())) => {
            outcome.output_path = Some(rel);
            outcome
        }
        Ok(Err(e)) => outcome.failed(FailureKind::Permanent, e.to_string()),
        Err(e) => outcome.failed(FailureKind::Permanent, e.to_string()),
    }
}

#[derive(Debug, Default)]
pub struct DiscardReport {
    pub removed: usize,
    pub unknown_ids: Vec<String>,
}

pub fn read_discard_list(path: &Path) -> Result<Vec<String>> {
    prompts::read_word_list(path)
}

/// Items implement this to be filtered by a discard list.
pub trait OutputId {
    fn output_id(&self) -> &str;
}

impl OutputId for GenerationOutcome {
    fn output_id(&self) -> &str {
        &self.output_id
    }
}

impl OutputId for InpaintJob {
    fn output_id(&self) -> &str {
        &self.output_id
    }
}

/// Removes manually rejected outputs.
pub fn apply_discard_list<T: OutputId + Clone>(items: &[T], discard: &[String]) -> (Vec<T>, DiscardReport) {
    let listed: BTreeSet<&str> = discard.iter().map(String::as_str).collect();
    let present: BTreeSet<&str> = items.iter().map(|o| o.output_id()).collect();
    let kept: Vec<T> = items
        .iter()
        .filter(|o| !listed.contains(o.output_id()))
        .cloned()
        .collect();
    let unknown_ids: Vec<String> = listed
        .iter()
        .filter(|id| !present.contains(*id))
        .map(|id| id.to_string())
        .collect();
    for id in &unknown_ids {
        tracing::warn!("discard list entry {id} matches no output");
    }
    let report = DiscardReport {
        removed: items.len() - kept.len(),
        unknown_ids,
    };
    tracing::info!("discarded {} of {} outputs", report.removed, items.len());
    (kept, report)
}

/// Complement of [`apply_discard_list`]: only the listed outputs.
pub fn select_discarded<T: OutputId + Clone>(items: &[T], discard: &[String]) -> Vec<T> {
    let listed: BTreeSet<&str> = discard.iter().map(String::as_str).collect();
    items
        .iter()
        .filter(|o| listed.contains(o.output_id()))
        .cloned()
        .collect()
}

/// Annotation entries for the successfully generated images; the target box
/// is the ground truth of each image.
pub fn generated_annotations(outcomes: &[GenerationOutcome]) -> Vec<AnnotationEntry> {
    outcomes
        .iter()
        .filter(|o| o.status == OutcomeStatus::Ok)
        .filter_map(|o| {
            let image = o.output_path.clone()?;
            Some(AnnotationEntry {
                scene_id: o.output_id.clone(),
                image,
                width: o.image_width,
                height: o.image_height,
                objects: vec![ObjectEntry {
                    bbox: o.target_bbox,
                    pixel_area: None,
                    label: Some(o.prompt.clone()),
                }],
                road_mask: None,
                location_group: None,
                source_scene: Some(o.scene_id.clone()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GroundTruthObject;

    fn scene(id: &str, bbox: BBox) -> SceneRecord {
        SceneRecord {
            scene_id: id.into(),
            image: format!("{id}.png"),
            image_path: PathBuf::from(format!("{id}.png")),
            width: 2048,
            height: 1024,
            objects: vec![GroundTruthObject {
                bbox,
                pixel_area: bbox.area() as u64,
                class_label: None,
            }],
            road_mask_file: None,
            road_mask: None,
            location_group: None,
            source_scene: None,
        }
    }

    fn nouns() -> Vec<String> {
        ["anvil", "kite", "fern", "otter", "lamp"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn presets_follow_the_parameter_table() {
        let v2 = GenerationParams::preset("V2").unwrap();
        assert_eq!((v2.sampler_name.as_str(), v2.denoising_strength), ("Euler a", 0.7));
        let v3 = GenerationParams::preset("V3").unwrap();
        assert_eq!((v3.sampler_name.as_str(), v3.denoising_strength), ("DPM++ 2S a", 0.7));
        let v4 = GenerationParams::preset("V4").unwrap();
        assert_eq!((v4.sampler_name.as_str(), v4.denoising_strength), ("DPM++ 2S a", 1.0));
        for p in [&v2, &v3, &v4] {
            assert_eq!(p.sampling_steps, 30);
            assert!(!p.inpainting_fill);
            assert_eq!((p.repeats, p.batch_size), (10, 2));
        }
        let single = GenerationParams::preset("single").unwrap();
        assert_eq!((single.sampling_steps, single.padding_mask_crop), (80, 32));
        assert!(GenerationParams::preset("V1").is_none());
    }

    #[test]
    fn params_validation() {
        let mut p = GenerationParams::preset("V4").unwrap();
        assert!(p.validate().is_ok());
        p.denoising_strength = 1.5;
        assert!(p.validate().is_err());
        p.denoising_strength = 0.5;
        p.repeats = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn hybrid_plan_counts_and_replay() {
        let scenes = vec![
            scene("a", BBox::new(900.0, 500.0, 980.0, 580.0).unwrap()),
            scene("b", BBox::new(100.0, 800.0, 180.0, 900.0).unwrap()),
        ];
        let params = GenerationParams::preset("V4").unwrap();
        let jobs = plan_hybrid_dataset(&scenes, &params, &nouns(), 5).unwrap();
        assert_eq!(jobs.len(), 40);
        assert_eq!(jobs, plan_hybrid_dataset(&scenes, &params, &nouns(), 5).unwrap());
        let ids: BTreeSet<_> = jobs.iter().map(|j| j.output_id.clone()).collect();
        assert_eq!(ids.len(), 40);
        assert!(jobs.iter().all(|j| j.frame.side() == 512 && j.prompt.text.ends_with("_hybrid")));

        let one = GenerationParams {
            repeats: 1,
            batch_size: 1,
            ..params
        };
        assert_eq!(plan_hybrid_dataset(&scenes[..1], &one, &nouns(), 0).unwrap().len(), 1);
    }

    #[test]
    fn single_concept_picks_on_road_objects() {
        let bbox = BBox::new(600.0, 600.0, 700.0, 700.0).unwrap();
        let mut s = scene("a", bbox);
        s.road_mask = Some(BinaryRaster::from_fn(2048, 1024, |_, y| y >= 610));
        let mut off_road = scene("b", bbox);
        off_road.road_mask = Some(BinaryRaster::new(2048, 1024));
        let no_mask = scene("c", bbox);
        let params = GenerationParams::preset("single").unwrap();
        let (jobs, skipped) = plan_single_concept_dataset(
            &[s, off_road, no_mask],
            &KeywordList::builtin(),
            &params,
            SingleConceptRule::default(),
            3,
        )
        .unwrap();
        assert_eq!(jobs.len(), 1);
        assert_eq!(jobs[0].mask.bbox, bbox);
        assert_eq!(jobs[0].mask.shape, MaskShape::Rect);
        assert_eq!(jobs[0].frame.side(), 128);
        assert!(jobs[0].prompt.text.ends_with(", high resolution, standing on the road"));
        assert_eq!(skipped.len(), 2);
    }

    #[test]
    fn request_upscales_small_tiers() {
        let source = RgbImage::from_fn(600, 400, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let bbox = BBox::new(100.0, 100.0, 160.0, 150.0).unwrap();
        let frame = placement::crop_frame_around(&bbox, 600, 400, 128).unwrap();
        let job = InpaintJob {
            output_id: "x".into(),
            scene_id: "x".into(),
            image_path: PathBuf::from("x.png"),
            image_width: 600,
            image_height: 400,
            frame,
            mask: MaskSpec {
                shape: MaskShape::Rect,
                bbox,
            },
            prompt: prompts::single_concept_prompt("robot").unwrap(),
            params: GenerationParams::preset("single").unwrap(),
            repeat_index: 0,
            batch_index: 0,
            seed: 1,
        };
        let req = build_request(&job, &source).unwrap();
        let img = imaging::decode_base64_image(&req.image).unwrap();
        let mask = imaging::decode_base64_image(&req.mask).unwrap().to_luma8();
        assert_eq!((img.width(), img.height()), (512, 512));
        assert_eq!((mask.width(), mask.height()), (512, 512));
        assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        assert_eq!(req.steps, 80);
        assert_eq!(req.padding_mask_crop, 32);
    }

    #[test]
    fn identity_paste_at_512_changes_nothing() {
        let source = RgbImage::from_fn(700, 600, |x, y| image::Rgb([(x * 3) as u8, (y * 5) as u8, (x ^ y) as u8]));
        let bbox = BBox::new(300.0, 300.0, 380.0, 390.0).unwrap();
        let frame = placement::crop_frame_around(&bbox, 700, 600, 512).unwrap();
        let job = InpaintJob {
            output_id: "x".into(),
            scene_id: "x".into(),
            image_path: PathBuf::from("x.png"),
            image_width: 700,
            image_height: 600,
            frame,
            mask: MaskSpec {
                shape: MaskShape::Oval,
                bbox,
            },
            prompt: prompts::single_concept_prompt("robot").unwrap(),
            params: GenerationParams::preset("V4").unwrap(),
            repeat_index: 0,
            batch_index: 0,
            seed: 1,
        };
        let req = build_request(&job, &source).unwrap();
        let echoed = imaging::decode_base64_image(&req.image).unwrap().to_rgb8();
        assert_eq!(paste_back(&source, &job, &echoed), source);
    }

    #[test]
    fn discard_list_behaviour() {
        let items: Vec<InpaintJob> = plan_hybrid_dataset(
            &[scene("a", BBox::new(900.0, 500.0, 980.0, 580.0).unwrap())],
            &GenerationParams::preset("V4").unwrap(),
            &nouns(),
            0,
        )
        .unwrap();
        let (kept, report) = apply_discard_list(&items, &[]);
        assert_eq!(kept, items);
        assert_eq!(report.removed, 0);

        let ids: Vec<String> = items.iter().map(|j| j.output_id.clone()).collect();
        let (kept, _) = apply_discard_list(&items, &ids);
        assert!(kept.is_empty());

        let (kept, report) = apply_discard_list(&items, &[ids[0].clone(), "nope".into()]);
        assert_eq!(kept.len(), 19);
        assert_eq!(report.unknown_ids, vec!["nope".to_string()]);
        assert_eq!(select_discarded(&items, &ids[..3]).len(), 3);
    }
}
