//! Inpainting geometry: oval masks, crop frames and tiers, drivable-surface
//! overlap, and the random-location sample sets.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryRaster, PixelRect};

/// Input side length preferred by the inpainting model.
pub const MODEL_SIDE: u32 = 512;
pub const CROP_TIERS: [u32; 3] = [512, 256, 128];

/// Square crop around a target; `scale_to` is the side sent to the service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropFrame {
    pub rect: PixelRect,
    pub scale_to: u32,
}

impl CropFrame {
    pub fn side(&self) -> u32 {
        self.rect.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvalMask {
    pub bbox: BBox,
    /// Frame the raster is expressed in.
    pub frame: PixelRect,
    pub raster: BinaryRaster,
}

/// Membership test for the axis-aligned ellipse inscribed in `bbox`,
/// evaluated at the center of pixel `(px, py)`.
pub fn in_ellipse(bbox: &BBox, px: u32, py: u32) -> bool {
    let (cx, cy) = bbox.center();
    let a = bbox.width() / 2.0;
    let b = bbox.height() / 2.0;
    let dx = (px as f64 + 0.5 - cx) / a;
    let dy = (py as f64 + 0.5 - cy) / b;
    dx * dx + dy * dy <= 1.0
}

fn frame_overlaps(bbox: &BBox, frame: &PixelRect) -> bool {
    bbox.intersection_area(&frame.to_bbox()) > 0.0
}

/// Rasterizes the ellipse inscribed in `bbox` over `frame`. Pixels of the
/// ellipse outside the frame are dropped.
pub fn oval_mask(bbox: &BBox, frame: &CropFrame) -> Result<OvalMask> {
    if bbox.width() < 2.0 || bbox.height() < 2.0 {
        return Err(Error::Geometry(format!(
            "bbox {bbox} too small for an oval mask"
        )));
    }
    let rect = frame.rect;
    if !frame_overlaps(bbox, &rect) {
        return Err(Error::Geometry(format!(
            "bbox {bbox} does not intersect frame {:?}",
            <[u32; 4]>::from(rect)
        )));
    }
    let raster = BinaryRaster::from_fn(rect.width(), rect.height(), |fx, fy| {
        in_ellipse(bbox, rect.x0 + fx, rect.y0 + fy)
    });
    Ok(OvalMask {
        bbox: *bbox,
        frame: rect,
        raster,
    })
}

/// Box-shaped mask over `frame`.
pub fn rect_mask(bbox: &BBox, frame: &CropFrame) -> Result<BinaryRaster> {
    let rect = frame.rect;
    if !frame_overlaps(bbox, &rect) {
        return Err(Error::Geometry(format!(
            "bbox {bbox} does not intersect frame"
        )));
    }
    Ok(BinaryRaster::from_fn(rect.width(), rect.height(), |fx, fy| {
        bbox.contains_pixel(rect.x0 + fx, rect.y0 + fy)
    }))
}

/// Square of `side` centered on the bbox center, shifted to fit the image.
pub fn crop_frame_around(bbox: &BBox, image_w: u32, image_h: u32, side: u32) -> Result<CropFrame> {
    if !CROP_TIERS.contains(&side) {
        return Err(Error::Geometry(format!("crop side {side} is not a tier")));
    }
    if image_w < side || image_h < side {
        return Err(Error::Geometry(format!(
            "image {image_w}x{image_h} smaller than {side}x{side} frame"
        )));
    }
    let (cx, cy) = bbox.center();
    let place = |c: f64, limit: u32| -> u32 {
        let start = (c - side as f64 / 2.0).round();
        start.clamp(0.0, (limit - side) as f64) as u32
    };
    let x0 = place(cx, image_w);
    let y0 = place(cy, image_h);
    Ok(CropFrame {
        rect: PixelRect {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        },
        scale_to: MODEL_SIDE,
    })
}

/// Crop side for a target: 512 if both sides reach 256, 256 if both reach
/// 128, otherwise 128.
pub fn crop_tier(bbox: &BBox) -> u32 {
    let short = bbox.width().min(bbox.height());
    if short >= 256.0 {
        512
    } else if short >= 128.0 {
        256
    } else {
        128
    }
}

/// Fraction of the bbox area covered by drivable pixels.
pub fn drivable_overlap(bbox: &BBox, road_mask: &BinaryRaster) -> f64 {
    let Some(span) = bbox.pixel_span(road_mask.width(), road_mask.height()) else {
        return 0.0;
    };
    (road_mask.count_in(&span) as f64 / bbox.area()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSet {
    RoadOnly,
    Border,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleSets {
    pub road_only: Vec<(u32, u32)>,
    pub border: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub margin: u32,
    pub border_depth: u32,
    pub n_road: usize,
    pub n_border: usize,
    pub bbox_w: u32,
    pub bbox_h: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            margin: 512,
            border_depth: 10,
            n_road: 1600,
            n_border: 400,
            bbox_w: 100,
            bbox_h: 130,
        }
    }
}

/// Squared Euclidean distance from every pixel to the nearest unset pixel
/// (`u64::MAX` when the raster has no unset pixel).
pub fn distance_to_unset_sq(raster: &BinaryRaster) -> Vec<u64> {
    const INF: f64 = 1e30;
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let mut grid = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            grid[y * w + x] = if raster.get(x as u32, y as u32) { INF } else { 0.0 };
        }
    }
    let mut col = vec![0f64; h];
    let mut out = vec![0f64; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        squared_edt_1d(&col, &mut out[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    let mut row = vec![0f64; w];
    for y in 0..h {
        row.copy_from_slice(&grid[y * w..(y + 1) * w]);
        squared_edt_1d(&row, &mut out[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid.into_iter()
        .map(|d| if d >= INF / 2.0 { u64::MAX } else { d.round() as u64 })
        .collect()
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn squared_edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            // z[0] is -inf, so this never pops the first parabola
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *out = diff * diff + f[p];
    }
}

/// Splits eligible road pixels into road-only and border sets.
///
/// Candidates are road pixels with `margin <= x < width - margin` and
/// likewise for `y`. A candidate is a border pixel when some non-road pixel
/// lies within `border_depth` (Euclidean) of it.
pub fn build_sample_sets(
    scene_id: &str,
    road_mask: &BinaryRaster,
    margin: u32,
    border_depth: u32,
) -> Result<SampleSets> {
    let (w, h) = (road_mask.width(), road_mask.height());
    let x_range = margin..w.saturating_sub(margin);
    let y_range = margin..h.saturating_sub(margin);
    let mut sets = SampleSets::default();
    if x_range.is_empty() || y_range.is_empty() {
        return Err(Error::Sampling(format!(
            "scene {scene_id}: no road pixel is {margin} px away from every edge of a {w}x{h} image"
        )));
    }
    let dist = distance_to_unset_sq(road_mask);
    let depth_sq = border_depth as u64 * border_depth as u64;
    for y in y_range {
        for x in x_range.clone() {
            if !road_mask.get(x, y) {
                continue;
            }
            if dist[y as usize * w as usize + x as usize] <= depth_sq {
                sets.border.push((x, y));
            } else {
                sets.road_only.push((x, y));
            }
        }
    }
    if sets.road_only.is_empty() && sets.border.is_empty() {
        return Err(Error::Sampling(format!(
            "scene {scene_id}: no road pixel is {margin} px away from every edge"
        )));
    }
    Ok(sets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCenter {
    pub x: u32,
    pub y: u32,
    pub set: SampleSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub scene_id: String,
    pub seed: u64,
    pub margin: u32,
    pub border_depth: u32,
    pub bbox_w: u32,
    pub bbox_h: u32,
    pub centers: Vec<SampleCenter>,
}

impl SamplePlan {
    /// Object box for a center: `bbox_w x bbox_h` centered on it.
    pub fn bbox_for(&self, center: &SampleCenter) -> BBox {
        BBox {
            x_min: center.x as f64 - self.bbox_w as f64 / 2.0,
            y_min: center.y as f64 - self.bbox_h as f64 / 2.0,
            x_max: center.x as f64 + self.bbox_w as f64 / 2.0,
            y_max: center.y as f64 + self.bbox_h as f64 / 2.0,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Draws road-only then border centers uniformly without replacement.
pub fn sample_plan(
    scene_id: &str,
    sets: &SampleSets,
    config: &SamplingConfig,
    seed: u64,
) -> Result<SamplePlan> {
    if sets.road_only.len() < config.n_road || sets.border.len() < config.n_border {
        return Err(Error::Sampling(format!(
            "scene {scene_id}: need {} road-only and {} border pixels, have {} and {}",
            config.n_road,
            config.n_border,
            sets.road_only.len(),
            sets.border.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(config.n_road + config.n_border);
    for (pool, n, set) in [
        (&sets.road_only, config.n_road, SampleSet::RoadOnly),
        (&sets.border, config.n_border, SampleSet::Border),
    ] {
        for i in index::sample(&mut rng, pool.len(), n) {
            let (x, y) = pool[i];
            centers.push(SampleCenter { x, y, set });
        }
    }
    Ok(SamplePlan {
        scene_id: scene_id.to_string(),
        seed,
        margin: config.margin,
        border_depth: config.border_depth,
        bbox_w: config.bbox_w,
        bbox_h: config.bbox_h,
        centers,
    })
}
