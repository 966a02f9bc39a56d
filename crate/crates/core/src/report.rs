//! Result tables, heatmap images and correlation tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CorrelationMatrix, EvalResult, HeatmapGrid};

pub const TABLE_COLUMNS: [&str; 10] = [
    "dataset", "model", "prompt", "iou", "auprc", "ap_50_95", "ar_50_95", "tp", "fp", "fn",
];

/// Recall ramp endpoints, linear in between.
pub const RECALL_ZERO: [u8; 3] = [255, 0, 0];
pub const RECALL_ONE: [u8; 3] = [0, 255, 0];
/// FN-count ramp endpoints: zero overlooked objects to the maximum count.
pub const FN_ZERO: [u8; 3] = [255, 255, 204];
pub const FN_MAX: [u8; 3] = [128, 0, 38];
/// Pixels no sample covered.
pub const UNDEFINED: [u8; 4] = [0, 0, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TablePaths {
    pub csv: PathBuf,
    pub text: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sorted(results: &[EvalResult]) -> Vec<&EvalResult> {
    let mut rows: Vec<&EvalResult> = results.iter().collect();
    rows.sort_by(|a, b| {
        (&a.dataset_id, &a.model_name, &a.prompt_id)
            .cmp(&(&b.dataset_id, &b.model_name, &b.prompt_id))
            .then(a.iou_threshold.total_cmp(&b.iou_threshold))
    });
    rows
}

fn row_fields(r: &EvalResult, float: impl Fn(f64) -> String) -> [String; 10] {
    [
        r.dataset_id.clone(),
        r.model_name.clone(),
        r.prompt_id.clone(),
        float(r.iou_threshold),
        float(r.auprc),
        float(r.ap_50_95),
        float(r.ar_50_95),
        r.tp.to_string(),
        r.fp.to_string(),
        r.fn_.to_string(),
    ]
}

pub fn results_csv(results: &[EvalResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    w.write_record(TABLE_COLUMNS).map_err(csv_err)?;
    for r in sorted(results) {
        w.write_record(row_fields(r, |v| v.to_string())).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))
}

/// Aligned plain-text rendering; rates use four decimals.
pub fn results_text(results: &[EvalResult]) -> String {
    let rows: Vec<[String; 10]> = sorted(results)
        .into_iter()
        .map(|r| row_fields(r, |v| format!("{v:.4}")))
        .collect();
    let mut widths: Vec<usize> = TABLE_COLUMNS.iter().map(|c| c.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&TABLE_COLUMNS);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &rows {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Writes `results.csv` and `results.txt` into `dir`.
pub fn emit_tables(results: &[EvalResult], dir: &Path) -> Result<TablePaths> {
    if results.is_empty() {
        return Err(Error::InvalidParameter("no results to tabulate".into()));
    }
    let paths = TablePaths {
        csv: dir.join("results.csv"),
        text: dir.join("results.txt"),
    };
    write_file(&paths.csv, &results_csv(results)?)?;
    write_file(&paths.text, results_text(results).as_bytes())?;
    Ok(paths)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<EvalResult>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse { path: path.into(), line: 0, message: e.to_string() })?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != TABLE_COLUMNS.len() {
            return Err(parse_err(format!("expected {} fields, got {}", TABLE_COLUMNS.len(), rec.len())));
        }
        let f = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| parse_err(format!("bad number {:?} in {}", &rec[k], TABLE_COLUMNS[k])))
        };
        let n = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| parse_err(format!("bad count {:?} in {}", &rec[k], TABLE_COLUMNS[k])))
        };
        out.push(EvalResult {
            dataset_id: rec[0].to_string(),
            model_name: rec[1].to_string(),
            prompt_id: rec[2].to_string(),
            iou_threshold: f(3)?,
            auprc: f(4)?,
            ap_50_95: f(5)?,
            ar_50_95: f(6)?,
            tp: n(7)?,
            fp: n(8)?,
            fn_: n(9)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    Recall,
    FnCount,
}

impl HeatmapMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "recall" => Some(Self::Recall),
            "fn_count" | "fn-count" => Some(Self::FnCount),
            _ => None,
        }
    }
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> Rgba<u8> {
    let c = |i: usize| (a[i] as f64 + (b[i] as f64 - a[i] as f64) * t).round() as u8;
    Rgba([c(0), c(1), c(2), 255])
}

pub fn recall_color(recall: f64) -> Rgba<u8> {
    lerp(RECALL_ZERO, RECALL_ONE, recall.clamp(0.0, 1.0))
}

pub fn fn_color(count: u32, max: u32) -> Rgba<u8> {
    let t = if max == 0 { 0.0 } else { count as f64 / max as f64 };
    lerp(FN_ZERO, FN_MAX, t)
}

/// Colors a grid; uncovered pixels are fully transparent in both modes.
pub fn heatmap_image(grid: &HeatmapGrid, mode: HeatmapMode) -> RgbaImage {
    let max = grid.max_fn();
    RgbaImage::from_fn(grid.width, grid.height, |x, y| match grid.recall(x, y) {
        None => Rgba(UNDEFINED),
        Some(r) => match mode {
            HeatmapMode::Recall => recall_color(r),
            HeatmapMode::FnCount => fn_color(grid.fn_(x, y), max),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapLegend {
    pub mode: HeatmapMode,
    pub width: u32,
    pub height: u32,
    pub covered_pixels: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_fn: Option<u32>,
    pub zero_color: [u8; 3],
    pub max_color: [u8; 3],
}

/// Writes the PNG and, next to it, `<name>.json` with the ramp legend
/// (including the maximum FN count in `fn_count` mode).
pub fn render_heatmap(grid: &HeatmapGrid, path: &Path, mode: HeatmapMode) -> Result<HeatmapLegend> {
    let img = image::DynamicImage::ImageRgba8(heatmap_image(grid, mode));
    crate::imaging::save_png(&img, path)?;
    let covered = (0..grid.height)
        .flat_map(|y| (0..grid.width).map(move |x| (x, y)))
        .filter(|&(x, y)| grid.recall(x, y).is_some())
        .count() as u64;
    let (zero_color, max_color, max_fn) = match mode {
        HeatmapMode::Recall => (RECALL_ZERO, RECALL_ONE, None),
        HeatmapMode::FnCount => (FN_ZERO, FN_MAX, Some(grid.max_fn())),
    };
    let legend = HeatmapLegend {
        mode,
        width: grid.width,
        height: grid.height,
        covered_pixels: covered,
        max_fn,
        zero_color,
        max_color,
    };
    let mut bytes = serde_json::to_vec_pretty(&legend)?;
    bytes.push(b'\n');
    write_file(&path.with_extension("json"), &bytes)?;
    Ok(legend)
}

/// Both correlation matrices as one CSV: `method,label,<labels...>`, with
/// undefined entries written as `NA`.
pub fn correlation_csv(m: &CorrelationMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    let header: Vec<&str> = ["method", "label"]
        .into_iter()
        .chain(m.labels.iter().map(String::as_str))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for (method, rows) in [("pearson", &m.pearson), ("spearman", &m.spearman)] {
        for (label, row) in m.labels.iter().zip(rows) {
            let mut rec = vec![method.to_string(), label.clone()];
            rec.extend(row.iter().map(|v| v.map_or("NA".to_string(), |v| v.to_string())));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))
}

pub fn emit_correlation(m: &CorrelationMatrix, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("correlation.csv");
    write_file(&path, &correlation_csv(m)?)?;
    let mut json = serde_json::to_vec_pretty(m)?;
    json.push(b'\n');
    write_file(&dir.join("correlation.json"), &json)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{heatmap, HeatmapSample, SampleOutcome};
    use crate::geometry::BBox;

    fn result(model: &str, prompt: &str) -> EvalResult {
        EvalResult {
            dataset_id: "synth".into(),
            model_name: model.into(),
            prompt_id: prompt.into(),
            iou_threshold: 0.5,
            auprc: 0.652,
            ap_50_95: 0.25,
            ar_50_95: 1.0 / 3.0,
            tp: 3,
            fp: 1,
            fn_: 2,
        }
    }

    #[test]
    fn tables_are_sorted_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let results = vec![result("b", "p2"), result("a", "p1"), result("b", "p1")];
        let paths = emit_tables(&results, dir.path()).unwrap();
        let back = read_results_csv(&paths.csv).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!((back[0].model_name.as_str(), back[2].prompt_id.as_str()), ("a", "p2"));
        assert_eq!(back[0], result("a", "p1"));
        let first = fs::read(&paths.text).unwrap();
        emit_tables(&results, dir.path()).unwrap();
        assert_eq!(fs::read(&paths.text).unwrap(), first);
        let text = String::from_utf8(first).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("0.6520"));
    }

    #[test]
    fn empty_results_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_tables(&[], dir.path()).is_err());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(recall_color(0.0).0, [255, 0, 0, 255]);
        assert_eq!(recall_color(1.0).0, [0, 255, 0, 255]);
        assert_eq!(recall_color(0.5).0, [128, 128, 0, 255]);
        assert_eq!(fn_color(4, 4).0[..3], FN_MAX);
    }

    #[test]
    fn all_fn_grid_is_red_and_uncovered_transparent() {
        let bbox = BBox::new(1.0, 1.0, 4.0, 3.0).unwrap();
        let grid = heatmap(&[HeatmapSample { bbox, outcome: SampleOutcome::Fn }], 6, 5);
        let img = heatmap_image(&grid, HeatmapMode::Recall);
        for (x, y, p) in img.enumerate_pixels() {
            let expected = if bbox.contains_pixel(x, y) { [255, 0, 0, 255] } else { UNDEFINED };
            assert_eq!(p.0, expected);
        }
        let dir = tempfile::tempdir().unwrap();
        let legend = render_heatmap(&grid, &dir.path().join("fn.png"), HeatmapMode::FnCount).unwrap();
        assert_eq!(legend.max_fn, Some(1));
        assert_eq!(legend.covered_pixels, 6);
        assert!(dir.path().join("fn.json").exists());
    }
}
