use std::path::PathBuf;

use ovdprobe_core::dataset::{filter_eligible, Eligibility, GroundTruthObject, SceneRecord};
use ovdprobe_core::generation::{
    apply_discard_list, plan_hybrid_dataset, plan_random_location_dataset, GenerationParams, LocationPrompt,
};
use ovdprobe_core::placement::{build_sample_sets, sample_plan, SampleSet, SamplingConfig};
use ovdprobe_core::prompts::single_concept_prompt;
use ovdprobe_core::{BBox, BinaryRaster};

fn scene(i: usize, objects: Vec<(BBox, u64)>) -> SceneRecord {
    SceneRecord {
        scene_id: format!("s{i:03}"),
        image: format!("s{i:03}.png"),
        image_path: PathBuf::from(format!("s{i:03}.png")),
        width: 2048,
        height: 1024,
        objects: objects
            .into_iter()
            .map(|(bbox, pixel_area)| GroundTruthObject {
                bbox,
                pixel_area,
                class_label: None,
            })
            .collect(),
        road_mask_file: None,
        road_mask: None,
        location_group: None,
        source_scene: None,
    }
}

fn nouns() -> Vec<String> {
    ["cat", "robot", "sofa", "traffic cone", "piano"].map(String::from).to_vec()
}

#[test]
fn hybrid_plan_counts_and_discards() {
    let mut scenes = Vec::new();
    for i in 0..212 {
        let x = (i * 7 % 1500) as f64;
        let big = BBox::new(x, 500.0, x + 80.0, 580.0).unwrap();
        let objects = match i % 10 {
            // too small
            3 => vec![(big, 2999)],
            // two objects
            7 if i < 120 => vec![(big, 6400), (big, 6400)],
            _ => vec![(big, 6400)],
        };
        scenes.push(scene(i, objects));
    }
    let eligible = filter_eligible(&scenes, Eligibility::default());
    assert_eq!(eligible.len(), 179);
    let eligible = &eligible[..];
    let params = GenerationParams::preset("V2").unwrap();
    let jobs = plan_hybrid_dataset(eligible, &params, &nouns(), 42).unwrap();
    assert_eq!(jobs.len(), 3580);
    let again = plan_hybrid_dataset(eligible, &params, &nouns(), 42).unwrap();
    assert_eq!(jobs, again);
    let discard: Vec<String> = jobs.iter().step_by(80).take(41).map(|j| j.output_id.clone()).collect();
    let (kept, report) = apply_discard_list(&jobs, &discard);
    assert_eq!(kept.len(), 3539);
    assert_eq!(report.removed, 41);
}

#[test]
fn random_location_plan() {
    // road: lower half of the image, with a non-road hole in the middle
    let road = BinaryRaster::from_fn(2048, 1536, |x, y| y >= 500 && !(900..1100).contains(&x) || y >= 1300);
    let sets = build_sample_sets("loc", &road, 512, 10).unwrap();
    let cfg = SamplingConfig::default();
    let plan = sample_plan("loc", &sets, &cfg, 9).unwrap();
    assert_eq!(plan.centers.len(), 2000);
    assert_eq!(plan.centers.iter().filter(|c| c.set == SampleSet::RoadOnly).count(), 1600);
    for c in &plan.centers {
        assert!(c.x >= 512 && c.x < 2048 - 512 && c.y >= 512 && c.y < 1536 - 512);
        let pool = match c.set {
            SampleSet::RoadOnly => &sets.road_only,
            SampleSet::Border => &sets.border,
        };
        assert!(pool.contains(&(c.x, c.y)));
        let b = plan.bbox_for(c);
        assert_eq!((b.width(), b.height()), (100.0, 130.0));
    }
    assert_eq!(plan.to_json().unwrap(), sample_plan("loc", &sets, &cfg, 9).unwrap().to_json().unwrap());

    let mut s = scene(0, vec![]);
    s.width = 2048;
    s.height = 1536;
    let fixed = LocationPrompt::Fixed(single_concept_prompt("robot").unwrap());
    let jobs = plan_random_location_dataset(&s, &plan, &fixed, &GenerationParams::preset("single").unwrap()).unwrap();
    assert_eq!(jobs.len(), 2000);
    assert!(jobs.iter().all(|j| j.frame.side() == 512));
}
