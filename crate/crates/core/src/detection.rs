//! Detector predictions: the line-delimited prediction file and the
//! detector service client.
//!
//! Prediction file, one JSON record per line:
//!
//! ```text
//! {"image_id": "s001_r00_b0", "model": "gdino", "prompt_id": "p3", "bbox": [10, 20, 110, 150], "score": 0.83}
//! ```
//!
//! A record without `bbox` and `score` declares a set that has no
//! predictions, so images a model returned nothing for survive a round trip.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::http::{self, FailureKind, RetryPolicy};
use crate::imaging;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub image_id: String,
    pub model_name: String,
    pub prompt_id: String,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.image_id, &self.model_name, &self.prompt_id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    image_id: String,
    model: String,
    prompt_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

fn check_score(score: f64) -> std::result::Result<f64, String> {
    if (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(format!("score {score} outside [0, 1]"))
    }
}

fn to_prediction(bbox: [f64; 4], score: f64) -> std::result::Result<Prediction, String> {
    Ok(Prediction {
        bbox: BBox::try_from(bbox).map_err(|e| e.to_string())?,
        score: check_score(score)?,
    })
}

/// Parses prediction records and groups them by (image, model, prompt).
/// Sets are sorted by that key; predictions keep file order within a set.
pub fn parse_predictions(text: &str, origin: &Path) -> Result<Vec<PredictionSet>> {
    let mut groups: BTreeMap<(String, String, String), Vec<Prediction>> = BTreeMap::new();
    for (record_index, (line_no, line)) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .enumerate()
    {
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no + 1,
            message: format!("record {record_index}: {message}"),
        };
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let entry = groups
            .entry((rec.image_id, rec.model, rec.prompt_id))
            .or_default();
        match (rec.bbox, rec.score) {
            (Some(bbox), Some(score)) => entry.push(to_prediction(bbox, score).map_err(err)?),
            (None, None) => {}
            _ => return Err(err("bbox and score must appear together".into())),
        }
    }
    Ok(groups
        .into_iter()
        .map(|((image_id, model_name, prompt_id), predictions)| PredictionSet {
            image_id,
            model_name,
            prompt_id,
            predictions,
        })
        .collect())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}

pub fn format_predictions(sets: &[PredictionSet]) -> Result<String> {
    let mut out = String::new();
    for set in sets {
        let record = |p: Option<&Prediction>| PredictionRecord {
            image_id: set.image_id.clone(),
            model: set.model_name.clone(),
            prompt_id: set.prompt_id.clone(),
            bbox: p.map(|p| p.bbox.into()),
            score: p.map(|p| p.score),
        };
        if set.predictions.is_empty() {
            out.push_str(&serde_json::to_string(&record(None))?);
            out.push('\n');
        }
        for p in &set.predictions {
            out.push_str(&serde_json::to_string(&record(Some(p)))?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn save_predictions(sets: &[PredictionSet], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format_predictions(sets)?).map_err(|e| Error::io(path, e))
}

/// `POST /detect` request body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: String,
    pub prompt: String,
    pub score_floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDetection {
    pub bbox: [f64; 4],
    pub score: f64,
}

/// `POST /detect` response body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<RawDetection>,
}

#[derive(Debug, Clone)]
pub struct DetectTarget {
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectPrompt {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub service_url: String,
    pub model_name: String,
    pub concurrency: usize,
    pub score_floor: f64,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchFailure {
    pub image_id: String,
    pub prompt_id: String,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct FetchReport {
    pub sets: Vec<PredictionSet>,
    pub failures: Vec<FetchFailure>,
}

fn validate_response(resp: DetectResponse) -> std::result::Result<Vec<Prediction>, String> {
    resp.detections
        .into_iter()
        .enumerate()
        .map(|(i, d)| to_prediction(d.bbox, d.score).map_err(|e| format!("detection {i}: {e}")))
        .collect()
}

/// Queries the detector for every (image, prompt) pair. A failed pair is
/// reported and does not affect the others.
pub async fn fetch_predictions(
    images: &[DetectTarget],
    prompts: &[DetectPrompt],
    config: &FetchConfig,
) -> FetchReport {
    let client = http::build_client(&config.retry);
    let url = format!("{}/detect", config.service_url.trim_end_matches('/'));
    let mut report = FetchReport::default();
    for target in images {
        let path = target.path.clone();
        let encoded = tokio::task::spawn_blocking(move || -> Result<String> {
            let img = imaging::load_rgb(&path)?;
            imaging::png_base64(&DynamicImage::ImageRgb8(img))
        })
        .await;
        let encoded = match encoded {
            Ok(Ok(e)) => e,
            Ok(Err(e)) => {
                report.failures.extend(prompts.iter().map(|p| FetchFailure {
                    image_id: target.image_id.clone(),
                    prompt_id: p.id.clone(),
                    kind: FailureKind::Permanent,
                    message: e.to_string(),
                }));
                continue;
            }
            Err(e) => {
                report.failures.extend(prompts.iter().map(|p| FetchFailure {
                    image_id: target.image_id.clone(),
                    prompt_id: p.id.clone(),
                    kind: FailureKind::Permanent,
                    message: e.to_string(),
                }));
                continue;
            }
        };
        let results: Vec<_> = stream::iter(prompts)
            .map(|prompt| {
                let body = serde_json::to_vec(&DetectRequest {
                    image: encoded.clone(),
                    prompt: prompt.text.clone(),
                    score_floor: config.score_floor,
                })
                .expect("request serializes");
                let client = &client;
                let url = &url;
                async move {
                    let res = http::post_json::<DetectResponse>(client, url, &body, &config.retry)
                        .await
                        .map_err(|e| (e.kind, e.message))
                        .and_then(|(r, _)| {
                            validate_response(r).map_err(|m| (FailureKind::Permanent, m))
                        });
                    (prompt, res)
                }
            })
            .buffer_unordered(config.concurrency.max(1))
            .collect()
            .await;
        for (prompt, res) in results {
            match res {
                Ok(predictions) => report.sets.push(PredictionSet {
                    image_id: target.image_id.clone(),
                    model_name: config.model_name.clone(),
                    prompt_id: prompt.id.clone(),
                    predictions,
                }),
                Err((kind, message)) => report.failures.push(FetchFailure {
                    image_id: target.image_id.clone(),
                    prompt_id: prompt.id.clone(),
                    kind,
                    message,
                }),
            }
        }
    }
    report.sets.sort_by(|a, b| a.key().cmp(&b.key()));
    report
        .failures
        .sort_by(|a, b| (&a.image_id, &a.prompt_id).cmp(&(&b.image_id, &b.prompt_id)));
    report
}
