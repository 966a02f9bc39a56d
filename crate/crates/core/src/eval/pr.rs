//! Precision-recall sweep and the step-wise area under it.

use serde::{Deserialize, Serialize};

use super::matching::match_predictions;
use crate::detection::Prediction;
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, highest threshold first.
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

/// Sweeps thresholds over the distinct scores of `(score, is_true_positive)`
/// pairs and integrates `sum (R_i - R_{i-1}) * P_i` with `R_0 = 0`.
pub fn auprc_from_scored(scored: &[(f64, bool)], n_positives: usize) -> PrCurve {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = if n_positives == 0 {
            0.0
        } else {
            tp as f64 / n_positives as f64
        };
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall,
        });
    }
    let mut auprc = 0.0;
    let mut prev_recall = 0.0;
    for p in &points {
        auprc += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    PrCurve { points, auprc }
}

/// Marks every prediction as TP or FP under greedy matching with no score
/// floor. Because matching visits predictions by descending score, the
/// flags for the predictions above any threshold equal what matching with
/// that threshold as floor would produce.
pub fn score_flags(preds: &[Prediction], gts: &[BBox], iou_thresh: f64) -> Vec<(f64, bool)> {
    let result = match_predictions(preds, gts, iou_thresh, f64::NEG_INFINITY);
    let mut flags: Vec<(f64, bool)> = preds.iter().map(|p| (p.score, false)).collect();
    for pair in &result.matched_pairs {
        flags[pair.prediction].1 = true;
    }
    flags
}

/// PR curve and AUPRC pooled over images, each given as
/// `(predictions, ground truths)`.
pub fn pr_curve_auprc(images: &[(&[Prediction], &[BBox])], iou_thresh: f64) -> PrCurve {
    let mut scored = Vec::new();
    let mut n_gt = 0;
    for (preds, gts) in images {
        scored.extend(score_flags(preds, gts, iou_thresh));
        n_gt += gts.len();
    }
    auprc_from_scored(&scored, n_gt)
}
