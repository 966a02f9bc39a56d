//! Scene annotations: loading, validation and eligibility filtering.
//!
//! A dataset is a single JSON Lines file, one scene per line:
//!
//! ```text
//! {"scene_id": "s001", "image": "img/s001.png", "width": 2048, "height": 1024,
//!  "objects": [{"bbox": [700, 500, 790, 580], "pixel_area": 5210, "label": "box"}],
//!  "road_mask": "road/s001.png", "location_group": 3}
//! ```
//!
//! `pixel_area`, `label`, `road_mask`, `location_group` and `source_scene`
//! are optional; unknown fields are ignored. Paths are relative to the image
//! root given at load time.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryRaster};
use crate::imaging;

/// Minimum object size used by both inpainting procedures.
pub const MIN_OBJECT_PIXELS: u64 = 3000;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub bbox: BBox,
    pub pixel_area: u64,
    pub class_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    /// Image path as written in the annotation file.
    pub image: String,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GroundTruthObject>,
    pub road_mask_file: Option<String>,
    pub road_mask: Option<BinaryRaster>,
    pub location_group: Option<u8>,
    /// Scene an inpainted image was derived from.
    pub source_scene: Option<String>,
}

impl SceneRecord {
    /// Scene id used for per-scene aggregation.
    pub fn origin(&self) -> &str {
        self.source_scene.as_deref().unwrap_or(&self.scene_id)
    }
}

#[derive(Debug, Default)]
pub struct LoadedDataset {
    pub scenes: Vec<SceneRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_area: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub scene_id: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub objects: Vec<ObjectEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_group: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_scene: Option<String>,
}

impl From<&SceneRecord> for AnnotationEntry {
    fn from(s: &SceneRecord) -> Self {
        AnnotationEntry {
            scene_id: s.scene_id.clone(),
            image: s.image.clone(),
            width: s.width,
            height: s.height,
            objects: s
                .objects
                .iter()
                .map(|o| ObjectEntry {
                    bbox: o.bbox,
                    pixel_area: Some(o.pixel_area),
                    label: o.class_label.clone(),
                })
                .collect(),
            road_mask: s.road_mask_file.clone(),
            location_group: s.location_group,
            source_scene: s.source_scene.clone(),
        }
    }
}

fn invalid(scene_id: &str, message: impl Into<String>) -> Error {
    Error::InvalidScene {
        scene_id: scene_id.to_string(),
        message: message.into(),
    }
}

/// Checks an entry's invariants and converts it, without touching the disk.
pub fn validate_entry(entry: AnnotationEntry, image_root: &Path) -> Result<SceneRecord> {
    let id = entry.scene_id.as_str();
    if id.is_empty() {
        return Err(invalid(id, "empty scene_id"));
    }
    if entry.width == 0 || entry.height == 0 {
        return Err(invalid(id, "image dimensions must be positive"));
    }
    if let Some(g) = entry.location_group {
        if !(1..=5).contains(&g) {
            return Err(invalid(id, format!("location_group {g} outside 1..=5")));
        }
    }
    let mut objects = Vec::with_capacity(entry.objects.len());
    for (i, o) in entry.objects.into_iter().enumerate() {
        if !o.bbox.within(entry.width as f64, entry.height as f64) {
            return Err(invalid(
                id,
                format!(
                    "object {i} bbox {} exceeds image bounds {}x{}",
                    o.bbox, entry.width, entry.height
                ),
            ));
        }
        let box_area = o.bbox.area();
        let pixel_area = o.pixel_area.unwrap_or_else(|| box_area.round() as u64);
        if pixel_area == 0 {
            return Err(invalid(id, format!("object {i} has zero pixel_area")));
        }
        if pixel_area as f64 > box_area.ceil() {
            return Err(invalid(
                id,
                format!("object {i} pixel_area {pixel_area} exceeds bbox area {box_area}"),
            ));
        }
        objects.push(GroundTruthObject {
            bbox: o.bbox,
            pixel_area,
            class_label: o.label,
        });
    }
    Ok(SceneRecord {
        scene_id: entry.scene_id.clone(),
        image_path: image_root.join(&entry.image),
        image: entry.image,
        width: entry.width,
        height: entry.height,
        objects,
        road_mask_file: entry.road_mask,
        road_mask: None,
        location_group: entry.location_group,
        source_scene: entry.source_scene,
    })
}

/// Parses annotation text. Blank lines are skipped.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<Vec<AnnotationEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<AnnotationEntry>(line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Loads and validates a dataset; attaches road masks.
///
/// Missing image or mask files are recorded as warnings and the scene is
/// kept. Scenes come back sorted by `scene_id`.
pub fn load_dataset(annotation_path: &Path, image_root: &Path) -> Result<LoadedDataset> {
    let text = fs::read_to_string(annotation_path).map_err(|e| Error::io(annotation_path, e))?;
    let entries = parse_annotations(&text, annotation_path)?;
    let mut out = LoadedDataset::default();
    let mut seen = BTreeSet::new();
    for entry in entries {
        let mut scene = validate_entry(entry, image_root)?;
        if !seen.insert(scene.scene_id.clone()) {
            return Err(invalid(&scene.scene_id, "duplicate scene_id"));
        }
        if !scene.image_path.is_file() {
            out.warnings.push(format!(
                "scene {}: image {} not found",
                scene.scene_id,
                scene.image_path.display()
            ));
        }
        if let Some(rel) = &scene.road_mask_file {
            let mask_path = image_root.join(rel);
            if mask_path.is_file() {
                let raster = BinaryRaster::from_luma(&imaging::load_luma(&mask_path)?);
                if (raster.width(), raster.height()) != (scene.width, scene.height) {
                    return Err(invalid(
                        &scene.scene_id,
                        format!(
                            "road mask is {}x{}, image is {}x{}",
                            raster.width(),
                            raster.height(),
                            scene.width,
                            scene.height
                        ),
                    ));
                }
                scene.road_mask = Some(raster);
            } else {
                out.warnings.push(format!(
                    "scene {}: road mask {} not found",
                    scene.scene_id,
                    mask_path.display()
                ));
            }
        }
        out.scenes.push(scene);
    }
    out.scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    for w in &out.warnings {
        tracing::warn!("{w}");
    }
    Ok(out)
}

pub fn write_annotations(scenes: &[SceneRecord], path: &Path) -> Result<()> {
    let entries: Vec<AnnotationEntry> = scenes.iter().map(AnnotationEntry::from).collect();
    write_entries(&entries, path)
}

pub fn write_entries(entries: &[AnnotationEntry], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy)]
pub struct Eligibility {
    pub min_area: u64,
    pub require_single_object: bool,
}

impl Default for Eligibility {
    fn default() -> Self {
        Self {
            min_area: MIN_OBJECT_PIXELS,
            require_single_object: true,
        }
    }
}

impl Eligibility {
    pub fn accepts(&self, scene: &SceneRecord) -> bool {
        if self.require_single_object {
            scene.objects.len() == 1 && scene.objects[0].pixel_area >= self.min_area
        } else {
            scene.objects.iter().any(|o| o.pixel_area >= self.min_area)
        }
    }
}

/// Scenes usable as inpainting targets; order preserved.
pub fn filter_eligible(scenes: &[SceneRecord], rule: Eligibility) -> Vec<SceneRecord> {
    scenes.iter().filter(|s| rule.accepts(s)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(id: &str, areas: &[u64]) -> SceneRecord {
        SceneRecord {
            scene_id: id.into(),
            image: format!("{id}.png"),
            image_path: PathBuf::from(format!("{id}.png")),
            width: 2048,
            height: 1024,
            objects: areas
                .iter()
                .map(|&a| GroundTruthObject {
                    bbox: BBox::new(0.0, 0.0, 100.0, 100.0).unwrap(),
                    pixel_area: a,
                    class_label: None,
                })
                .collect(),
            road_mask_file: None,
            road_mask: None,
            location_group: None,
            source_scene: None,
        }
    }

    #[test]
    fn area_threshold_is_inclusive() {
        let scenes = vec![scene("a", &[2999]), scene("b", &[3000]), scene("c", &[])];
        let kept = filter_eligible(&scenes, Eligibility::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].scene_id, "b");
    }

    #[test]
    fn multi_object_scenes_are_excluded() {
        let scenes = vec![scene("a", &[5000, 5000])];
        assert!(filter_eligible(&scenes, Eligibility::default()).is_empty());
        let relaxed = Eligibility {
            require_single_object: false,
            ..Default::default()
        };
        assert_eq!(filter_eligible(&scenes, relaxed).len(), 1);
    }

    #[test]
    fn missing_pixel_area_falls_back_to_box_area() {
        let e: AnnotationEntry = serde_json::from_str(
            r#"{"scene_id":"x","image":"x.png","width":100,"height":100,
                "objects":[{"bbox":[0,0,60,60]}],"extra_field":true}"#,
        )
        .unwrap();
        let s = validate_entry(e, Path::new("/r")).unwrap();
        assert_eq!(s.objects[0].pixel_area, 3600);
        assert_eq!(s.image_path, PathBuf::from("/r/x.png"));
    }

    #[test]
    fn out_of_bounds_box_names_the_scene() {
        let e: AnnotationEntry = serde_json::from_str(
            r#"{"scene_id":"bad_scene","image":"x.png","width":100,"height":100,
                "objects":[{"bbox":[50,50,120,60]}]}"#,
        )
        .unwrap();
        let err = validate_entry(e, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("bad_scene"), "{err}");
    }

    #[test]
    fn pixel_area_above_box_area_is_rejected() {
        let e: AnnotationEntry = serde_json::from_str(
            r#"{"scene_id":"s","image":"x.png","width":100,"height":100,
                "objects":[{"bbox":[0,0,10,10],"pixel_area":101}]}"#,
        )
        .unwrap();
        assert!(validate_entry(e, Path::new(".")).is_err());
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "{\"scene_id\":\"a\",\"image\":\"a.png\",\"width\":1,\"height\":1}\n\n{oops}\n";
        match parse_annotations(text, Path::new("ann.jsonl")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
