//! Control probes: noise ovals, road-pattern patches, the removed-object
//! selection and brightness smoothing.
//!
//! Every probe only touches pixels of its declared region: the target bbox
//! (noise, smoothing) or the target rectangle (pattern).

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryRaster, PixelRect};
use crate::placement::in_ellipse;

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const GREY: [u8; 3] = [128, 128, 128];
pub const BRIGHTNESS_THRESHOLD: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    NoiseWhite,
    NoiseGrey,
    Pattern,
    Removed,
    BrightnessSmooth,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 5] = [
        ProbeKind::NoiseWhite,
        ProbeKind::NoiseGrey,
        ProbeKind::Pattern,
        ProbeKind::Removed,
        ProbeKind::BrightnessSmooth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::NoiseWhite => "noise_white",
            ProbeKind::NoiseGrey => "noise_grey",
            ProbeKind::Pattern => "pattern",
            ProbeKind::Removed => "removed",
            ProbeKind::BrightnessSmooth => "brightness_smooth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub target_bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_rect: Option<PixelRect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// What a probe did to one image; `replaced` counts changed pixels for
/// brightness smoothing and `fill_color` is the color they received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub spec: ProbeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_color: Option<[u8; 3]>,
}

fn target_span(img: &RgbImage, bbox: &BBox) -> Result<PixelRect> {
    let (w, h) = img.dimensions();
    if !bbox.within(w as f64, h as f64) {
        return Err(Error::Probe(format!("bbox {bbox} outside {w}x{h} image")));
    }
    bbox.pixel_span(w, h)
        .ok_or_else(|| Error::Probe(format!("bbox {bbox} covers no pixel")))
}

/// Sets every pixel of the ellipse inscribed in `bbox` to `color`.
pub fn noise_oval(img: &RgbImage, bbox: &BBox, color: [u8; 3]) -> Result<RgbImage> {
    let span = target_span(img, bbox)?;
    let mut out = img.clone();
    for (x, y) in span.pixels() {
        if in_ellipse(bbox, x, y) {
            out.put_pixel(x, y, Rgb(color));
        }
    }
    Ok(out)
}

/// Copies the pixels of `source` over the pixels covered by `bbox`.
pub fn pattern_patch(img: &RgbImage, bbox: &BBox, source: &PixelRect) -> Result<RgbImage> {
    let target = target_span(img, bbox)?;
    let (w, h) = img.dimensions();
    if (source.width(), source.height()) != (target.width(), target.height()) {
        return Err(Error::Probe(format!(
            "source {}x{} does not match target {}x{}",
            source.width(),
            source.height(),
            target.width(),
            target.height()
        )));
    }
    if !source.fits(w, h) {
        return Err(Error::Probe(format!("source rect outside {w}x{h} image")));
    }
    if source.intersects(&target) {
        return Err(Error::Probe("source rect overlaps the target bbox".into()));
    }
    let mut out = img.clone();
    for dy in 0..target.height() {
        for dx in 0..target.width() {
            let p = *img.get_pixel(source.x0 + dx, source.y0 + dy);
            out.put_pixel(target.x0 + dx, target.y0 + dy, p);
        }
    }
    Ok(out)
}

/// Summed-area table over a raster, `(w+1) x (h+1)`.
fn integral(raster: &BinaryRaster) -> Vec<u64> {
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let mut s = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += raster.get(x as u32, y as u32) as u64;
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Picks a source rectangle for a pattern patch: the nearest placement (by
/// center distance, on a grid of `step` pixels) of a rectangle the size of
/// `target` that is disjoint from it and, when `road` is given, lies fully
/// on road pixels.
pub fn auto_source_rect(
    width: u32,
    height: u32,
    target: &PixelRect,
    road: Option<&BinaryRaster>,
    step: u32,
) -> Option<PixelRect> {
    let (tw, th) = (target.width(), target.height());
    if tw > width || th > height {
        return None;
    }
    let table = road.map(integral);
    let stride = width as usize + 1;
    let on_road = |r: &PixelRect| match &table {
        None => true,
        Some(s) => {
            let at = |x: u32, y: u32| s[y as usize * stride + x as usize];
            at(r.x1, r.y1) + at(r.x0, r.y0) - at(r.x0, r.y1) - at(r.x1, r.y0) == r.area()
        }
    };
    let step = step.max(1);
    let xs: Vec<u32> = (0..=width - tw).step_by(step as usize).chain([width - tw]).collect();
    let ys: Vec<u32> = (0..=height - th).step_by(step as usize).chain([height - th]).collect();
    let mut best: Option<(i64, PixelRect)> = None;
    for &y in &ys {
        for &x in &xs {
            let r = PixelRect {
                x0: x,
                y0: y,
                x1: x + tw,
                y1: y + th,
            };
            if r.intersects(target) || !on_road(&r) {
                continue;
            }
            let d = (x as i64 - target.x0 as i64).pow(2) + (y as i64 - target.y0 as i64).pow(2);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, r));
            }
        }
    }
    best.map(|(_, r)| r)
}

pub fn brightness(p: &Rgb<u8>) -> f64 {
    (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0
}

fn mean_color(pixels: impl Iterator<Item = Rgb<u8>>) -> Option<[u8; 3]> {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for p in pixels {
        for c in 0..3 {
            sum[c] += p[c] as u64;
        }
        n += 1;
    }
    (n > 0).then(|| sum.map(|s| (s as f64 / n as f64).round() as u8))
}

/// The ring around `bbox`: pixels of the bbox scaled by two about its
/// center, minus the bbox itself, clipped to the image.
pub fn surrounding_ring(bbox: &BBox, width: u32, height: u32) -> Vec<(u32, u32)> {
    let (cx, cy) = bbox.center();
    let Ok(outer) = BBox::centered(cx, cy, 2.0 * bbox.width(), 2.0 * bbox.height()) else {
        return Vec::new();
    };
    let inner = bbox.pixel_span(width, height);
    let Some(outer) = outer.pixel_span(width, height) else {
        return Vec::new();
    };
    outer
        .pixels()
        .filter(|&(x, y)| !inner.is_some_and(|r| r.contains(x, y)))
        .collect()
}

/// Replaces bbox pixels brighter than `threshold` with the mean color of
/// the surrounding ring. With an empty ring the mean of the kept bbox
/// pixels is used; when every bbox pixel is bright as well this fails.
pub fn brightness_smooth(img: &RgbImage, bbox: &BBox, threshold: f64) -> Result<(RgbImage, ProbeOutcome)> {
    let span = target_span(img, bbox)?;
    let (w, h) = img.dimensions();
    let bright: Vec<(u32, u32)> = span
        .pixels()
        .filter(|&(x, y)| brightness(img.get_pixel(x, y)) > threshold)
        .collect();
    let ring = surrounding_ring(bbox, w, h);
    let fill = match mean_color(ring.iter().map(|&(x, y)| *img.get_pixel(x, y))) {
        Some(c) => c,
        None => mean_color(
            span.pixels()
                .map(|(x, y)| *img.get_pixel(x, y))
                .filter(|p| brightness(p) <= threshold),
        )
        .ok_or_else(|| Error::Probe(format!("no reference pixels to smooth bbox {bbox}")))?,
    };
    let mut out = img.clone();
    for &(x, y) in &bright {
        out.put_pixel(x, y, Rgb(fill));
    }
    let outcome = ProbeOutcome {
        spec: ProbeSpec {
            kind: ProbeKind::BrightnessSmooth,
            target_bbox: *bbox,
            color: None,
            source_rect: None,
            threshold: Some(threshold),
        },
        replaced: Some(bright.len() as u64),
        fill_color: Some(fill),
    };
    Ok((out, outcome))
}

/// Applies an image-altering probe. `removed` selects images instead of
/// altering them and is rejected here.
pub fn apply_probe(img: &RgbImage, spec: &ProbeSpec) -> Result<(RgbImage, ProbeOutcome)> {
    let plain = |out: RgbImage| {
        (
            out,
            ProbeOutcome {
                spec: spec.clone(),
                replaced: None,
                fill_color: None,
            },
        )
    };
    match spec.kind {
        ProbeKind::NoiseWhite | ProbeKind::NoiseGrey => {
            let default = if spec.kind == ProbeKind::NoiseWhite { WHITE } else { GREY };
            let color = spec.color.unwrap_or(default);
            noise_oval(img, &spec.target_bbox, color).map(plain)
        }
        ProbeKind::Pattern => {
            let source = spec
                .source_rect
                .ok_or_else(|| Error::Probe("pattern probe needs a source rect".into()))?;
            pattern_patch(img, &spec.target_bbox, &source).map(plain)
        }
        ProbeKind::BrightnessSmooth => {
            let threshold = spec.threshold.unwrap_or(BRIGHTNESS_THRESHOLD);
            brightness_smooth(img, &spec.target_bbox, threshold)
        }
        ProbeKind::Removed => Err(Error::Probe(
            "the removed probe selects images from a discard list; it has no image operation".into(),
        )),
    }
}
