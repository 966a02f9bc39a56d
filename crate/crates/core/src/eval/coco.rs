//! Class-agnostic COCO box AP/AR (area range "all", 100 detections per
//! image), following the reference evaluator's matching and accumulation
//! rules, including its `>=` IoU test and its preference for the last of
//! equally good ground truths.

use super::matching::{by_score_desc, iou};
use crate::detection::Prediction;
use crate::geometry::BBox;

pub const MAX_DETECTIONS: usize = 100;
const RECALL_POINTS: usize = 101;

/// `numpy.linspace(start, stop, n)` element `i`.
fn linspace(start: f64, stop: f64, n: usize, i: usize) -> f64 {
    if i == n - 1 {
        return stop;
    }
    let step = (stop - start) / (n - 1) as f64;
    i as f64 * step + start
}

pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| linspace(0.5, 0.95, 10, i))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CocoSummary {
    pub ap_50_95: f64,
    pub ar_50_95: f64,
}

struct ImageEval {
    /// Scores of the kept detections, sorted descending.
    scores: Vec<f64>,
    /// `matched[t][d]`: detection `d` matched at threshold `t`.
    matched: Vec<Vec<bool>>,
    n_gt: usize,
}

fn evaluate_image(preds: &[Prediction], gts: &[BBox], thresholds: &[f64]) -> ImageEval {
    let order: Vec<usize> = by_score_desc(preds).into_iter().take(MAX_DETECTIONS).collect();
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|&d| gts.iter().map(|g| iou(&preds[d].bbox, g)).collect())
        .collect();
    let matched = thresholds
        .iter()
        .map(|&t| {
            let mut gt_taken = vec![false; gts.len()];
            (0..order.len())
                .map(|d| {
                    let mut best = t.min(1.0 - 1e-10);
                    let mut m = None;
                    for g in 0..gts.len() {
                        if gt_taken[g] || ious[d][g] < best {
                            continue;
                        }
                        best = ious[d][g];
                        m = Some(g);
                    }
                    if let Some(g) = m {
                        gt_taken[g] = true;
                    }
                    m.is_some()
                })
                .collect()
        })
        .collect();
    ImageEval {
        scores: order.iter().map(|&d| preds[d].score).collect(),
        matched,
        n_gt: gts.len(),
    }
}

/// AP and AR averaged over IoU 0.50:0.05:0.95 for images given as
/// `(predictions, ground truths)`. Returns zeros when there is no ground
/// truth at all.
pub fn coco_ap_ar(images: &[(&[Prediction], &[BBox])]) -> CocoSummary {
    let thresholds = iou_thresholds();
    let evals: Vec<ImageEval> = images
        .iter()
        .filter(|(p, g)| !(p.is_empty() && g.is_empty()))
        .map(|(p, g)| evaluate_image(p, g, &thresholds))
        .collect();
    let n_gt: usize = evals.iter().map(|e| e.n_gt).sum();
    if n_gt == 0 {
        return CocoSummary {
            ap_50_95: 0.0,
            ar_50_95: 0.0,
        };
    }
    // concatenation in image order, then a stable sort by score
    let flat: Vec<(usize, usize, f64)> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, e)| e.scores.iter().enumerate().map(move |(d, &s)| (i, d, s)))
        .collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| flat[b].2.total_cmp(&flat[a].2));

    let mut ap_sum = 0.0;
    let mut ar_sum = 0.0;
    for t in 0..thresholds.len() {
        let mut precision = Vec::with_capacity(order.len());
        let mut recall = Vec::with_capacity(order.len());
        let (mut tp, mut fp) = (0f64, 0f64);
        for &k in &order {
            let (i, d, _) = flat[k];
            if evals[i].matched[t][d] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            recall.push(tp / n_gt as f64);
            precision.push(tp / (fp + tp + f64::EPSILON));
        }
        ar_sum += recall.last().copied().unwrap_or(0.0);
        for i in (1..precision.len()).rev() {
            if precision[i] > precision[i - 1] {
                precision[i - 1] = precision[i];
            }
        }
        let mut q_sum = 0.0;
        for r in 0..RECALL_POINTS {
            let target = linspace(0.0, 1.0, RECALL_POINTS, r);
            let idx = recall.partition_point(|&v| v < target);
            if idx >= precision.len() {
                break;
            }
            q_sum += precision[idx];
        }
        ap_sum += q_sum / RECALL_POINTS as f64;
    }
    CocoSummary {
        ap_50_95: ap_sum / thresholds.len() as f64,
        ar_50_95: ar_sum / thresholds.len() as f64,
    }
}
