//! Per-pixel TP/FN accumulation over sampled object locations.

use serde::{Deserialize, Serialize};

use super::matching::match_predictions;
use crate::detection::Prediction;
use crate::geometry::BBox;

/// Score floor for the location-sensitivity heatmaps.
pub const HEATMAP_SCORE_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOutcome {
    Tp,
    Fn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSample {
    pub bbox: BBox,
    pub outcome: SampleOutcome,
}

/// Whether a single-object sample was found: TP when some prediction at or
/// above `score_floor` matches its box under the usual IoU rule.
pub fn sample_outcome(preds: &[Prediction], gt: &BBox, iou_thresh: f64, score_floor: f64) -> SampleOutcome {
    let r = match_predictions(preds, std::slice::from_ref(gt), iou_thresh, score_floor);
    if r.tp == 1 {
        SampleOutcome::Tp
    } else {
        SampleOutcome::Fn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub width: u32,
    pub height: u32,
    pub tp_count: Vec<u32>,
    pub fn_count: Vec<u32>,
}

impl HeatmapGrid {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            tp_count: vec![0; n],
            fn_count: vec![0; n],
        }
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn tp(&self, x: u32, y: u32) -> u32 {
        self.tp_count[self.idx(x, y)]
    }

    pub fn fn_(&self, x: u32, y: u32) -> u32 {
        self.fn_count[self.idx(x, y)]
    }

    /// `tp / (tp + fn)`, `None` where no sample covered the pixel.
    pub fn recall(&self, x: u32, y: u32) -> Option<f64> {
        let i = self.idx(x, y);
        let (tp, fneg) = (self.tp_count[i], self.fn_count[i]);
        (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64)
    }

    pub fn max_fn(&self) -> u32 {
        self.fn_count.iter().copied().max().unwrap_or(0)
    }

    /// Adds one sample; pixels outside the grid are ignored.
    pub fn add(&mut self, sample: &HeatmapSample) {
        let Some(span) = sample.bbox.pixel_span(self.width, self.height) else {
            return;
        };
        for y in span.y0..span.y1 {
            let row = y as usize * self.width as usize;
            let cells = row + span.x0 as usize..row + span.x1 as usize;
            let target = match sample.outcome {
                SampleOutcome::Tp => &mut self.tp_count[cells],
                SampleOutcome::Fn => &mut self.fn_count[cells],
            };
            target.iter_mut().for_each(|c| *c += 1);
        }
    }

    pub fn to_json(&self) -> crate::Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> crate::Result<Self> {
        let grid: HeatmapGrid = serde_json::from_slice(bytes)?;
        let n = grid.width as usize * grid.height as usize;
        if grid.tp_count.len() != n || grid.fn_count.len() != n {
            return Err(crate::Error::InvalidParameter(format!(
                "heatmap grid arrays do not match {}x{}",
                grid.width, grid.height
            )));
        }
        Ok(grid)
    }
}

pub fn heatmap(samples: &[HeatmapSample], width: u32, height: u32) -> HeatmapGrid {
    let mut grid = HeatmapGrid::new(width, height);
    for s in samples {
        grid.add(s);
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn single_tp_sample() {
        let bbox = b(2.0, 3.0, 6.0, 5.0);
        let grid = heatmap(
            &[HeatmapSample {
                bbox,
                outcome: SampleOutcome::Tp,
            }],
            10,
            8,
        );
        for y in 0..8 {
            for x in 0..10 {
                let expected = bbox.contains_pixel(x, y).then_some(1.0);
                assert_eq!(grid.recall(x, y), expected);
            }
        }
    }

    #[test]
    fn overlap_of_tp_and_fn_is_half() {
        let grid = heatmap(
            &[
                HeatmapSample {
                    bbox: b(0.0, 0.0, 6.0, 6.0),
                    outcome: SampleOutcome::Tp,
                },
                HeatmapSample {
                    bbox: b(3.0, 3.0, 9.0, 9.0),
                    outcome: SampleOutcome::Fn,
                },
            ],
            10,
            10,
        );
        assert_eq!(grid.recall(4, 4), Some(0.5));
        assert_eq!(grid.recall(1, 1), Some(1.0));
        assert_eq!(grid.recall(8, 8), Some(0.0));
        assert_eq!(grid.recall(9, 0), None);
        assert_eq!(grid.max_fn(), 1);
    }

    #[test]
    fn outcome_from_predictions() {
        let gt = b(0.0, 0.0, 10.0, 10.0);
        let hit = [Prediction { bbox: gt, score: 0.25 }];
        assert_eq!(sample_outcome(&hit, &gt, 0.5, HEATMAP_SCORE_FLOOR), SampleOutcome::Tp);
        let weak = [Prediction { bbox: gt, score: 0.15 }];
        assert_eq!(sample_outcome(&weak, &gt, 0.5, HEATMAP_SCORE_FLOOR), SampleOutcome::Fn);
    }

    #[test]
    fn json_round_trip_checks_lengths() {
        let grid = heatmap(&[], 3, 2);
        assert_eq!(HeatmapGrid::from_json(&grid.to_json().unwrap()).unwrap(), grid);
        let broken = br#"{"width":3,"height":2,"tp_count":[0],"fn_count":[0]}"#;
        assert!(HeatmapGrid::from_json(broken).is_err());
    }
}
