//! Detection metrics: matching, NMS, PR curves, COCO AP/AR, location
//! heatmaps and FN correlation.

pub mod coco;
pub mod correlation;
pub mod heatmap;
pub mod matching;
pub mod pr;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use coco::{coco_ap_ar, CocoSummary};
pub use correlation::{fn_correlation, pearson, spearman, CorrelationMatrix, FnVector};
pub use heatmap::{heatmap, HeatmapGrid, HeatmapSample, SampleOutcome, HEATMAP_SCORE_FLOOR};
pub use matching::{iou, match_predictions, nms, MatchResult, MatchedPair};
pub use pr::{pr_curve_auprc, PrCurve, PrPoint};

use crate::dataset::SceneRecord;
use crate::detection::{Prediction, PredictionSet};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    pub score_floor: f64,
    pub nms_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            score_floor: 0.1,
            nms_iou: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iou_thresh", self.iou_thresh),
            ("score_floor", self.score_floor),
            ("nms_iou", self.nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset_id: String,
    pub model_name: String,
    pub prompt_id: String,
    pub iou_threshold: f64,
    pub auprc: f64,
    pub ap_50_95: f64,
    pub ar_50_95: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthImage {
    pub image_id: String,
    /// Scene the image was derived from; FN vectors are indexed by it.
    pub origin_scene: String,
    pub gts: Vec<BBox>,
}

impl From<&SceneRecord> for GroundTruthImage {
    fn from(s: &SceneRecord) -> Self {
        Self {
            image_id: s.scene_id.clone(),
            origin_scene: s.origin().to_string(),
            gts: s.objects.iter().map(|o| o.bbox).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOutput {
    /// Sorted by (model, prompt).
    pub results: Vec<EvalResult>,
    /// One per result, same order.
    pub fn_vectors: Vec<FnVector>,
}

type Groups<'a> = BTreeMap<(&'a str, &'a str), HashMap<&'a str, Vec<Prediction>>>;

/// Groups prediction sets by (model, prompt) and applies NMS to each image.
/// Images without a set get no predictions. Fails on image ids missing from
/// the ground truth.
fn grouped_after_nms<'a>(
    gt: &[GroundTruthImage],
    sets: &'a [PredictionSet],
    nms_iou: f64,
) -> Result<Groups<'a>> {
    let known: BTreeSet<&str> = gt.iter().map(|g| g.image_id.as_str()).collect();
    let mut groups = Groups::new();
    for set in sets {
        if !known.contains(set.image_id.as_str()) {
            return Err(Error::InvalidParameter(format!(
                "predictions for unknown image {} (model {}, prompt {})",
                set.image_id, set.model_name, set.prompt_id
            )));
        }
        groups
            .entry((&set.model_name, &set.prompt_id))
            .or_default()
            .entry(&set.image_id)
            .or_default()
            .extend(set.predictions.iter().cloned());
    }
    for per_image in groups.values_mut() {
        for preds in per_image.values_mut() {
            *preds = nms(preds, nms_iou);
        }
    }
    Ok(groups)
}

/// Evaluates every (model, prompt) pair found in `sets` against `gt`.
pub fn evaluate(
    dataset_id: &str,
    gt: &[GroundTruthImage],
    sets: &[PredictionSet],
    cfg: &EvalConfig,
) -> Result<EvalOutput> {
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    for g in gt {
        if !seen.insert(g.image_id.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate image id {}", g.image_id)));
        }
    }
    let scenes: Vec<String> = gt
        .iter()
        .map(|g| g.origin_scene.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let scene_index: HashMap<&str, usize> =
        scenes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let empty: Vec<Prediction> = Vec::new();
    let mut out = EvalOutput::default();
    for ((model, prompt), per_image) in grouped_after_nms(gt, sets, cfg.nms_iou)? {
        let images: Vec<(&[Prediction], &[BBox])> = gt
            .iter()
            .map(|g| {
                let preds = per_image.get(g.image_id.as_str()).unwrap_or(&empty);
                (preds.as_slice(), g.gts.as_slice())
            })
            .collect();
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let mut fn_counts = vec![0u64; scenes.len()];
        for (g, (preds, gts)) in gt.iter().zip(&images) {
            let m = match_predictions(preds, gts, cfg.iou_thresh, cfg.score_floor);
            tp += m.tp;
            fp += m.fp;
            fn_ += m.fn_;
            fn_counts[scene_index[g.origin_scene.as_str()]] += m.fn_ as u64;
        }
        let curve = pr_curve_auprc(&images, cfg.iou_thresh);
        let coco = coco_ap_ar(&images);
        out.results.push(EvalResult {
            dataset_id: dataset_id.to_string(),
            model_name: model.to_string(),
            prompt_id: prompt.to_string(),
            iou_threshold: cfg.iou_thresh,
            auprc: curve.auprc,
            ap_50_95: coco.ap_50_95,
            ar_50_95: coco.ar_50_95,
            tp,
            fp,
            fn_,
        });
        out.fn_vectors.push(FnVector {
            dataset_id: format!("{dataset_id}/{model}/{prompt}"),
            scene_ids: scenes.clone(),
            counts: fn_counts,
        });
    }
    Ok(out)
}

/// Heatmap samples for one (model, prompt): every ground-truth box becomes a
/// TP sample when it is matched at `score_floor`, FN otherwise.
pub fn location_samples(
    gt: &[GroundTruthImage],
    sets: &[PredictionSet],
    model: &str,
    prompt: &str,
    iou_thresh: f64,
    score_floor: f64,
    nms_iou: f64,
) -> Result<Vec<HeatmapSample>> {
    let groups = grouped_after_nms(gt, sets, nms_iou)?;
    let per_image = groups.get(&(model, prompt));
    let mut samples = Vec::new();
    for g in gt {
        let preds = per_image
            .and_then(|m| m.get(g.image_id.as_str()))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let m = match_predictions(preds, &g.gts, iou_thresh, score_floor);
        let mut found = vec![false; g.gts.len()];
        for pair in &m.matched_pairs {
            found[pair.ground_truth] = true;
        }
        samples.extend(g.gts.iter().zip(found).map(|(bbox, hit)| HeatmapSample {
            bbox: *bbox,
            outcome: if hit { SampleOutcome::Tp } else { SampleOutcome::Fn },
        }));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn gt_image(id: &str, scene: &str, gts: Vec<BBox>) -> GroundTruthImage {
        GroundTruthImage {
            image_id: id.into(),
            origin_scene: scene.into(),
            gts,
        }
    }

    fn set(image: &str, model: &str, prompt: &str, preds: Vec<(BBox, f64)>) -> PredictionSet {
        PredictionSet {
            image_id: image.into(),
            model_name: model.into(),
            prompt_id: prompt.into(),
            predictions: preds.into_iter().map(|(bbox, score)| Prediction { bbox, score }).collect(),
        }
    }

    #[test]
    fn evaluates_per_model_and_prompt() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let gt = vec![
            gt_image("a_r00", "a", vec![g]),
            gt_image("a_r01", "a", vec![g]),
            gt_image("b_r00", "b", vec![g]),
        ];
        let sets = vec![
            set("a_r00", "m1", "p1", vec![(g, 0.9), (g, 0.8)]),
            set("b_r00", "m1", "p1", vec![(b(50.0, 50.0, 60.0, 60.0), 0.5)]),
            set("a_r00", "m2", "p1", vec![]),
        ];
        let out = evaluate("synth", &gt, &sets, &EvalConfig::default()).unwrap();
        assert_eq!(out.results.len(), 2);
        let r = &out.results[0];
        assert_eq!((r.model_name.as_str(), r.prompt_id.as_str()), ("m1", "p1"));
        // the duplicate is removed by NMS
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 2));
        assert_eq!(out.fn_vectors[0].scene_ids, vec!["a", "b"]);
        assert_eq!(out.fn_vectors[0].counts, vec![1, 1]);
        assert_eq!(out.fn_vectors[1].counts, vec![2, 1]);
        assert_eq!(out.results[1].auprc, 0.0);
    }

    #[test]
    fn unknown_image_is_an_error() {
        let gt = vec![gt_image("a", "a", vec![])];
        let sets = vec![set("zzz", "m", "p1", vec![])];
        assert!(evaluate("d", &gt, &sets, &EvalConfig::default()).is_err());
    }

    #[test]
    fn location_samples_follow_matching() {
        let g1 = b(0.0, 0.0, 10.0, 10.0);
        let g2 = b(20.0, 20.0, 30.0, 30.0);
        let gt = vec![gt_image("x", "x", vec![g1]), gt_image("y", "y", vec![g2])];
        let sets = vec![
            set("x", "m", "p1", vec![(g1, 0.3)]),
            set("y", "m", "p1", vec![(g2, 0.15)]),
        ];
        let s = location_samples(&gt, &sets, "m", "p1", 0.5, HEATMAP_SCORE_FLOOR, 0.5).unwrap();
        assert_eq!(s[0].outcome, SampleOutcome::Tp);
        assert_eq!(s[1].outcome, SampleOutcome::Fn);
    }
}
