//! Reference implementations written independently of the library, used as
//! test oracles. Boxes are plain `[x_min, y_min, x_max, y_max]` arrays.
#![allow(dead_code)]

pub type Box4 = [f64; 4];

pub fn iou(a: &Box4, b: &Box4) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    inter / union
}

fn area(b: &Box4) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

/// Greedy matching by repeated selection: take the highest-scoring
/// unvisited prediction (first on ties), give it the unmatched ground truth
/// of highest IoU (first on ties) if that IoU is above `thr`.
pub fn greedy_match(preds: &[(Box4, f64)], gts: &[Box4], thr: f64, floor: f64) -> (usize, usize, usize) {
    let mut visited = vec![false; preds.len()];
    let mut taken = vec![false; gts.len()];
    let (mut tp, mut fp) = (0, 0);
    loop {
        let mut pick: Option<usize> = None;
        for i in 0..preds.len() {
            if visited[i] || preds[i].1 < floor {
                continue;
            }
            match pick {
                Some(j) if preds[j].1 >= preds[i].1 => {}
                _ => pick = Some(i),
            }
        }
        let Some(i) = pick else { break };
        visited[i] = true;
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gts.len() {
            if taken[g] {
                continue;
            }
            let v = iou(&preds[i].0, &gts[g]);
            match best {
                Some((_, bv)) if bv >= v => {}
                _ => best = Some((g, v)),
            }
        }
        match best {
            Some((g, v)) if v > thr => {
                taken[g] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    (tp, fp, gts.len() - tp)
}

/// Quadratic NMS: repeatedly keep the best remaining box (score, then
/// area, then lowest index) and drop everything overlapping it above `thr`.
pub fn nms(preds: &[(Box4, f64)], thr: f64) -> Vec<(Box4, f64)> {
    let mut alive: Vec<usize> = (0..preds.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for k in 1..alive.len() {
            let (a, b) = (&preds[alive[k]], &preds[alive[best]]);
            if a.1 > b.1 || (a.1 == b.1 && area(&a.0) > area(&b.0)) {
                best = k;
            }
        }
        let chosen = preds[alive.remove(best)];
        alive.retain(|&i| iou(&preds[i].0, &chosen.0) <= thr);
        kept.push(chosen);
    }
    kept
}

/// Step-integral AUPRC by enumerating every distinct score as threshold
/// over `(score, is_positive)` pairs.
pub fn auprc_labels(scored: &[(f64, bool)], n_pos: usize) -> f64 {
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut total = 0.0;
    let mut prev_r = 0.0;
    for t in thresholds {
        let tp = scored.iter().filter(|s| s.0 >= t && s.1).count() as f64;
        let all = scored.iter().filter(|s| s.0 >= t).count() as f64;
        let r = if n_pos == 0 { 0.0 } else { tp / n_pos as f64 };
        total += (r - prev_r) * (tp / all);
        prev_r = r;
    }
    total
}

/// AUPRC over images by rerunning greedy matching with every distinct
/// score as the floor.
pub type ImageSet = (Vec<(Box4, f64)>, Vec<Box4>);

pub fn auprc_images(images: &[ImageSet], thr: f64) -> f64 {
    let mut thresholds: Vec<f64> = images.iter().flat_map(|(p, _)| p.iter().map(|x| x.1)).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let n_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
    let mut total = 0.0;
    let mut prev_r = 0.0;
    for t in thresholds {
        let (mut tp, mut fp) = (0, 0);
        for (p, g) in images {
            let (a, b, _) = greedy_match(p, g, thr, t);
            tp += a;
            fp += b;
        }
        let r = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        total += (r - prev_r) * (tp as f64 / (tp + fp) as f64);
        prev_r = r;
    }
    total
}

/// Per-pixel counts by testing every pixel center against every sample box.
pub fn heatmap_counts(samples: &[(Box4, bool)], w: u32, h: u32) -> (Vec<u32>, Vec<u32>) {
    let mut tp = vec![0; (w * h) as usize];
    let mut fneg = vec![0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            for (b, hit) in samples {
                if cx >= b[0] && cx < b[2] && cy >= b[1] && cy < b[3] {
                    if *hit {
                        tp[(y * w + x) as usize] += 1;
                    } else {
                        fneg[(y * w + x) as usize] += 1;
                    }
                }
            }
        }
    }
    (tp, fneg)
}

/// Pearson by the raw-sum formula.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Ranks with ties averaged, by counting smaller and equal elements.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|o| *o < v).count() as f64;
            let equal = x.iter().filter(|o| *o == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}
