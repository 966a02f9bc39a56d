#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Luma, Rgb, RgbImage};
use ovdprobe_stubs::{spawn_detect, spawn_inpaint, DetectMode, InpaintMode, StubServer};
use serde_json::json;

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 560;
pub const ROAD_TOP: u32 = 280;
pub const FILL: [u8; 3] = [255, 0, 255];

/// Runs the `ovdprobe` binary and returns its exit code. Output is kept
/// and echoed only when the stage fails.
pub fn run(args: &[&str]) -> i32 {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ovdprobe"))
        .args(args)
        .env_remove("OVDPROBE_INPAINT_URL")
        .env_remove("OVDPROBE_DETECT_URL")
        .output()
        .expect("spawning ovdprobe");
    let code = out.status.code().unwrap_or(-1);
    if code != 0 {
        eprintln!("ovdprobe {} -> {code}", args.join(" "));
        eprint!("{}", String::from_utf8_lossy(&out.stderr));
    }
    code
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn object_bbox(i: usize) -> [f64; 4] {
    let x = 80.0 + 60.0 * i as f64;
    [x, 330.0, x + 90.0, 400.0]
}

/// Road scene: sky above `ROAD_TOP`, textured asphalt below, one dark
/// object with a bright spot on it.
pub fn scene_image(i: usize) -> RgbImage {
    let [x0, y0, x1, y1] = object_bbox(i);
    RgbImage::from_fn(WIDTH, HEIGHT, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        if fx >= x0 && fx < x1 && fy >= y0 && fy < y1 {
            if fx < x0 + 12.0 && fy < y0 + 10.0 {
                return Rgb([250, 250, 245]);
            }
            return Rgb([40, 30 + (i as u8) * 5, 35]);
        }
        if y < ROAD_TOP {
            Rgb([150, 190, 230])
        } else {
            let t = ((x * 7 + y * 13) % 17) as u8;
            Rgb([80 + t, 82 + t, 85 + t])
        }
    })
}

/// Writes `n` scenes with images, road masks and `annotations.jsonl`.
pub fn write_corpus(dir: &Path, n: usize) -> PathBuf {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    let mask = image::GrayImage::from_fn(WIDTH, HEIGHT, |_, y| Luma([if y >= ROAD_TOP { 255 } else { 0 }]));
    let mut lines = String::new();
    for i in 0..n {
        let id = format!("scene{i:02}");
        scene_image(i).save(dir.join(format!("images/{id}.png"))).unwrap();
        mask.save(dir.join(format!("masks/{id}.png"))).unwrap();
        let entry = json!({
            "scene_id": id,
            "image": format!("images/{id}.png"),
            "width": WIDTH,
            "height": HEIGHT,
            "objects": [{ "bbox": object_bbox(i), "label": "car" }],
            "road_mask": format!("masks/{id}.png"),
        });
        lines.push_str(&entry.to_string());
        lines.push('\n');
    }
    let path = dir.join("annotations.jsonl");
    std::fs::write(&path, lines).unwrap();
    path
}

pub fn write_nouns(dir: &Path) -> PathBuf {
    let path = dir.join("nouns.txt");
    std::fs::write(&path, "cat\nrobot\nsofa\ntraffic cone\npiano\nbicycle\n").unwrap();
    path
}

pub struct Stubs {
    pub rt: tokio::runtime::Runtime,
    pub inpaint: StubServer,
    pub detectors: Vec<StubServer>,
}

pub fn start_stubs(n_detectors: u64) -> Stubs {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let (inpaint, detectors) = rt.block_on(async {
        let inpaint = spawn_inpaint(InpaintMode::SolidFill(FILL)).await.unwrap();
        let mut detectors = Vec::new();
        for seed in 1..=n_detectors {
            detectors.push(spawn_detect(DetectMode::Content { target: FILL, seed }).await.unwrap());
        }
        (inpaint, detectors)
    });
    Stubs {
        rt,
        inpaint,
        detectors,
    }
}

pub struct Pipeline {
    pub eval_dir: PathBuf,
    pub heatmap_dir: PathBuf,
    pub report_dir: PathBuf,
    pub inpaint_dir: PathBuf,
    pub steps: Vec<(&'static str, i32)>,
}

impl Pipeline {
    pub fn ok(&self) -> bool {
        self.steps.iter().all(|(_, c)| *c == 0)
    }
}

/// ingest, plan-hybrid, inpaint, one detect per detector stub, eval and
/// heatmap and report, all through the CLI entry point.
pub fn run_pipeline(dir: &Path, n_scenes: usize, stubs: &Stubs) -> Pipeline {
    let corpus = write_corpus(&dir.join("corpus"), n_scenes);
    let nouns = write_nouns(dir);
    let ingest = dir.join("ingest");
    let plan = dir.join("plan");
    let inpaint_dir = dir.join("inpaint");
    let preds_dir = dir.join("preds");
    let eval_dir = dir.join("eval");
    let heatmap_dir = dir.join("heatmap");
    let mut steps = Vec::new();
    steps.push(("ingest", run(&["ingest", "--annotations", s(&corpus), "--out", s(&ingest)])));
    steps.push((
        "plan-hybrid",
        run(&[
            "plan-hybrid",
            "--scenes",
            s(&ingest.join("eligible.jsonl")),
            "--nouns",
            s(&nouns),
            "--seed",
            "7",
            "--repeats",
            "2",
            "--batch-size",
            "1",
            "--out",
            s(&plan),
        ]),
    ));
    let inpaint_url = stubs.inpaint.url();
    steps.push((
        "inpaint",
        run(&[
            "inpaint",
            "--jobs",
            s(&plan.join("jobs.jsonl")),
            "--service-url",
            &inpaint_url,
            "--out",
            s(&inpaint_dir),
        ]),
    ));
    let ann = inpaint_dir.join("annotations.jsonl");
    let mut pred_files = Vec::new();
    for (k, d) in stubs.detectors.iter().enumerate() {
        let out = preds_dir.join(format!("m{}.jsonl", k + 1));
        let model = format!("m{}", k + 1);
        let url = d.url();
        steps.push((
            "detect",
            run(&[
                "detect",
                "--annotations",
                s(&ann),
                "--service-url",
                &url,
                "--model",
                &model,
                "--out",
                s(&out),
            ]),
        ));
        pred_files.push(out);
    }
    let mut eval_args = vec!["eval", "--gt", s(&ann), "--out", s(&eval_dir)];
    for p in &pred_files {
        eval_args.push("--preds");
        eval_args.push(s(p));
    }
    steps.push(("eval", run(&eval_args)));
    let mut heat_args = vec!["heatmap", "--gt", s(&ann), "--model", "m1", "--out", s(&heatmap_dir)];
    for p in &pred_files {
        heat_args.push("--preds");
        heat_args.push(s(p));
    }
    steps.push(("heatmap", run(&heat_args)));
    let results = eval_dir.join("results.csv");
    let grid = heatmap_dir.join("heatmap_m1_p1.grid.json");
    let report_dir = dir.join("report");
    let report_args = ["report", "--results", s(&results), "--grid", s(&grid), "--out", s(&report_dir)];
    steps.push(("report", run(&report_args)));
    Pipeline {
        eval_dir,
        heatmap_dir,
        report_dir,
        inpaint_dir,
        steps,
    }
}

pub fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).map_or(0, |t| t.lines().skip(1).filter(|l| !l.is_empty()).count())
}

pub fn pngs_in(dir: &Path) -> Vec<PathBuf> {
    let Ok(rd) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut v: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    v.sort();
    v
}
