use std::path::{Path, PathBuf};
use std::time::Duration;

use image::{DynamicImage, Rgb, RgbImage};
use ovdprobe_core::detection::{fetch_predictions, DetectPrompt, DetectTarget, FetchConfig};
use ovdprobe_core::generation::{
    execute, ExecuteConfig, GenerationParams, InpaintJob, MaskShape, MaskSpec, OutcomeStatus,
};
use ovdprobe_core::http::{FailureKind, RetryPolicy};
use ovdprobe_core::placement::{crop_frame_around, crop_tier};
use ovdprobe_core::prompts::{detection_prompts, single_concept_prompt};
use ovdprobe_core::{imaging, BBox};
use ovdprobe_stubs::{spawn_detect, spawn_inpaint, DetectMode, Detection, InpaintMode};

const FILL: [u8; 3] = [255, 0, 255];

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(5),
        request_timeout: Duration::from_secs(20),
    }
}

fn scene_image(dir: &Path, w: u32, h: u32) -> PathBuf {
    let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 200) as u8, (y % 180) as u8, 90]));
    let path = dir.join("scene.png");
    imaging::save_png(&DynamicImage::ImageRgb8(img), &path).unwrap();
    path
}

fn job(path: &Path, w: u32, h: u32, bbox: BBox, id: &str) -> InpaintJob {
    let side = crop_tier(&bbox);
    InpaintJob {
        output_id: id.into(),
        scene_id: "scene".into(),
        image_path: path.to_path_buf(),
        image_width: w,
        image_height: h,
        frame: crop_frame_around(&bbox, w, h, side).unwrap(),
        mask: MaskSpec {
            shape: MaskShape::Rect,
            bbox,
        },
        prompt: single_concept_prompt("robot").unwrap(),
        params: GenerationParams::preset("single").unwrap(),
        repeat_index: 0,
        batch_index: 0,
        seed: 7,
    }
}

fn exec_config(url: String, out: &Path) -> ExecuteConfig {
    ExecuteConfig {
        service_url: url,
        concurrency: 4,
        retry: fast_retry(),
        output_dir: out.to_path_buf(),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn paste_back_is_local_to_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (700, 560);
    let src = scene_image(dir.path(), w, h);
    let stub = spawn_inpaint(InpaintMode::SolidFill(FILL)).await.unwrap();
    let jobs = vec![
        job(&src, w, h, BBox::new(100.0, 200.0, 180.0, 260.0).unwrap(), "small"),
        job(&src, w, h, BBox::new(300.0, 100.0, 620.0, 420.0).unwrap(), "large"),
    ];
    let outcomes = execute(&jobs, &exec_config(stub.url(), dir.path())).await;
    assert_eq!(stub.hits(), 2);
    let original = imaging::load_rgb(&src).unwrap();
    for (o, j) in outcomes.iter().zip([&jobs[1], &jobs[0]]) {
        assert_eq!(o.status, OutcomeStatus::Ok, "{:?}", o.error);
        assert_eq!(o.output_id, j.output_id);
        assert_eq!(o.attempts, 1);
        assert_eq!(o.request_sha256.as_ref().unwrap().len(), 64);
        let out = imaging::load_rgb(&dir.path().join(o.output_path.as_ref().unwrap())).unwrap();
        let mut changed_inside = 0;
        for (x, y, p) in out.enumerate_pixels() {
            if j.frame.rect.contains(x, y) {
                changed_inside += (p != original.get_pixel(x, y)) as u32;
            } else {
                assert_eq!(p, original.get_pixel(x, y), "({x},{y}) outside frame changed");
            }
        }
        assert!(changed_inside > 0);
        // center of the mask carries the fill color
        let (cx, cy) = j.mask.bbox.center();
        assert_eq!(out.get_pixel(cx as u32, cy as u32).0, FILL);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn transient_errors_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let src = scene_image(dir.path(), 600, 600);
    let bbox = BBox::new(250.0, 250.0, 350.0, 350.0).unwrap();
    let stub = spawn_inpaint(InpaintMode::FailFirst {
        n: 2,
        status: 503,
        color: FILL,
    })
    .await
    .unwrap();
    let outcomes = execute(&[job(&src, 600, 600, bbox, "a")], &exec_config(stub.url(), dir.path())).await;
    assert_eq!(outcomes[0].status, OutcomeStatus::Ok);
    assert_eq!(outcomes[0].attempts, 3);

    let always = spawn_inpaint(InpaintMode::Status(500)).await.unwrap();
    let outcomes = execute(&[job(&src, 600, 600, bbox, "b")], &exec_config(always.url(), dir.path())).await;
    assert_eq!(outcomes[0].status, OutcomeStatus::FailedTransient);
    assert_eq!(outcomes[0].attempts, 4);
    assert_eq!(always.hits(), 4);
}

#[tokio::test(flavor = "multi_thread")]
async fn client_errors_are_permanent_and_do_not_stop_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let src = scene_image(dir.path(), 600, 600);
    let bbox = BBox::new(250.0, 250.0, 350.0, 350.0).unwrap();
    let stub = spawn_inpaint(InpaintMode::Status(400)).await.unwrap();
    let mut missing = job(&src, 600, 600, bbox, "missing");
    missing.image_path = dir.path().join("nope.png");
    let jobs = vec![job(&src, 600, 600, bbox, "a"), job(&src, 600, 600, bbox, "b"), missing];
    let outcomes = execute(&jobs, &exec_config(stub.url(), dir.path())).await;
    assert_eq!(outcomes.len(), 3);
    assert!(outcomes.iter().all(|o| o.status == OutcomeStatus::FailedPermanent));
    assert_eq!(stub.hits(), 2);
    assert_eq!(outcomes[0].attempts, 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_service_is_transient() {
    let dir = tempfile::tempdir().unwrap();
    let src = scene_image(dir.path(), 600, 600);
    let bbox = BBox::new(250.0, 250.0, 350.0, 350.0).unwrap();
    let url = {
        let stub = spawn_inpaint(InpaintMode::Identity).await.unwrap();
        stub.url()
    };
    tokio::time::sleep(Duration::from_millis(50)).await;
    let outcomes = execute(&[job(&src, 600, 600, bbox, "a")], &exec_config(url, dir.path())).await;
    assert_eq!(outcomes[0].status, OutcomeStatus::FailedTransient);
}

fn fetch_config(url: String, model: &str) -> FetchConfig {
    FetchConfig {
        service_url: url,
        model_name: model.into(),
        concurrency: 4,
        score_floor: 0.0,
        retry: fast_retry(),
    }
}

fn targets(dir: &Path, n: usize) -> Vec<DetectTarget> {
    (0..n)
        .map(|i| {
            let path = dir.join(format!("img{i}.png"));
            let mut img = RgbImage::from_pixel(64, 48, Rgb([20, 20, 20]));
            for x in 10 + i as u32..30 {
                for y in 5..25 {
                    img.put_pixel(x, y, Rgb(FILL));
                }
            }
            imaging::save_png(&DynamicImage::ImageRgb8(img), &path).unwrap();
            DetectTarget {
                image_id: format!("img{i}"),
                path,
            }
        })
        .collect()
}

fn prompts() -> Vec<DetectPrompt> {
    detection_prompts()
        .into_iter()
        .enumerate()
        .map(|(i, p)| DetectPrompt {
            id: format!("p{}", i + 1),
            text: p.text,
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn fixed_box_stub_gives_one_set_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let stub = spawn_detect(DetectMode::Fixed(vec![Detection {
        bbox: [1.0, 2.0, 11.0, 12.0],
        score: 0.6,
    }]))
    .await
    .unwrap();
    let report = fetch_predictions(&targets(dir.path(), 3), &prompts(), &fetch_config(stub.url(), "fixed")).await;
    assert!(report.failures.is_empty());
    assert_eq!(report.sets.len(), 15);
    assert_eq!(report.sets.iter().map(|s| s.predictions.len()).sum::<usize>(), 15);
    assert_eq!(report.sets[0].model_name, "fixed");
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_and_empty_responses() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = targets(dir.path(), 2);
    let bad = spawn_detect(DetectMode::Malformed).await.unwrap();
    let report = fetch_predictions(&imgs, &prompts(), &fetch_config(bad.url(), "bad")).await;
    assert!(report.sets.is_empty());
    assert_eq!(report.failures.len(), 10);
    assert!(report.failures.iter().all(|f| f.kind == FailureKind::Permanent));

    let empty = spawn_detect(DetectMode::Empty).await.unwrap();
    let report = fetch_predictions(&imgs, &prompts(), &fetch_config(empty.url(), "none")).await;
    assert_eq!(report.sets.len(), 10);
    assert!(report.sets.iter().all(|s| s.predictions.is_empty()));
}

#[tokio::test(flavor = "multi_thread")]
async fn content_stub_finds_the_filled_region() {
    let dir = tempfile::tempdir().unwrap();
    let stub = spawn_detect(DetectMode::Content { target: FILL, seed: 3 }).await.unwrap();
    let report = fetch_predictions(&targets(dir.path(), 1), &prompts(), &fetch_config(stub.url(), "c")).await;
    assert_eq!(report.sets.len(), 5);
    for set in &report.sets {
        assert_eq!(set.predictions.len(), 1);
        let p = &set.predictions[0];
        assert!((0.0..=1.0).contains(&p.score));
        assert!(p.bbox.intersection_area(&BBox::new(10.0, 5.0, 30.0, 25.0).unwrap()) > 0.0);
    }
}
