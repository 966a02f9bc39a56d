//! Correlation of per-scene false-negative counts across datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnVector {
    /// Label of the run the counts come from, e.g. `dataset/model/prompt`.
    pub dataset_id: String,
    pub scene_ids: Vec<String>,
    pub counts: Vec<u64>,
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub pearson: Vec<Vec<Option<f64>>>,
    pub spearman: Vec<Vec<Option<f64>>>,
}

/// Pairwise Pearson and Spearman matrices over FN vectors that share one
/// scene order. Undefined entries (zero variance) are `None`.
pub fn fn_correlation(vectors: &[FnVector]) -> Result<CorrelationMatrix> {
    let Some(first) = vectors.first() else {
        return Err(Error::Correlation("no vectors given".into()));
    };
    if first.counts.len() < 2 {
        return Err(Error::Correlation("vectors need at least two scenes".into()));
    }
    for v in vectors {
        if v.counts.len() != v.scene_ids.len() {
            return Err(Error::Correlation(format!(
                "{}: {} counts for {} scenes",
                v.dataset_id,
                v.counts.len(),
                v.scene_ids.len()
            )));
        }
        if v.scene_ids != first.scene_ids {
            return Err(Error::Correlation(format!(
                "{} and {} cover different scenes",
                first.dataset_id, v.dataset_id
            )));
        }
    }
    let data: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.counts.iter().map(|&c| c as f64).collect())
        .collect();
    let build = |f: fn(&[f64], &[f64]) -> Option<f64>| -> Vec<Vec<Option<f64>>> {
        let n = data.len();
        let mut m = vec![vec![None; n]; n];
        for i in 0..n {
            let defined = f(&data[i], &data[i]).is_some();
            m[i][i] = defined.then_some(1.0);
            for j in i + 1..n {
                let r = f(&data[i], &data[j]);
                m[i][j] = r;
                m[j][i] = r;
            }
        }
        m
    };
    Ok(CorrelationMatrix {
        labels: vectors.iter().map(|v| v.dataset_id.clone()).collect(),
        pearson: build(pearson),
        spearman: build(spearman),
    })
}
