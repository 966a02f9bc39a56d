use serde::{Deserialize, Serialize};

use crate::detection::Prediction;
use crate::geometry::BBox;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Indices ordered by descending score; ties keep input order.
pub(crate) fn by_score_desc(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited by descending score, ties by larger area and then
/// input order. A candidate is dropped when its IoU with any kept box exceeds
/// `iou_thresh`. Kept boxes are returned in visiting order.
pub fn nms(preds: &[Prediction], iou_thresh: f64) -> Vec<Prediction> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .total_cmp(&preds[a].score)
            .then(preds[b].bbox.area().total_cmp(&preds[a].bbox.area()))
    });
    let mut kept: Vec<Prediction> = Vec::new();
    for i in order {
        let cand = &preds[i];
        if kept.iter().all(|k| iou(&k.bbox, &cand.bbox) <= iou_thresh) {
            kept.push(cand.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matched_pairs: Vec<MatchedPair>,
}

/// Greedy score-ordered matching.
///
/// Predictions scoring below `score_floor` are ignored. Remaining ones are
/// visited by descending score (ties in input order); each takes the
/// unmatched ground truth of highest IoU (ties to the lower index) when that
/// IoU is strictly greater than `iou_thresh`.
pub fn match_predictions(
    preds: &[Prediction],
    gts: &[BBox],
    iou_thresh: f64,
    score_floor: f64,
) -> MatchResult {
    let mut gt_taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for pi in by_score_desc(preds) {
        let pred = &preds[pi];
        if pred.score < score_floor {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let v = iou(&pred.bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v > iou_thresh => {
                gt_taken[gi] = true;
                result.matched_pairs.push(MatchedPair {
                    prediction: pi,
                    ground_truth: gi,
                    iou: v,
                });
                result.tp += 1;
            }
            _ => result.fp += 1,
        }
    }
    result.fn_ = gts.len() - result.tp;
    result
}
