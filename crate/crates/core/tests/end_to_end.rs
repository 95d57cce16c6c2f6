use std::path::{Path, PathBuf};

use orthoforge::exec::with_threads;
use orthoforge::fixtures::{self, BoxCityScene, BoxSpec, GroundPattern};
use orthoforge::pipeline::{self, process_cloud, run_pipeline, PipelineConfig, RunManifest};
use orthoforge::retrieval::{self, load_descriptor_pack};
use orthoforge::rng::stream_rng;
use orthoforge::{load_ply, save_ply, ColoredPointCloud, Error, ErrorCategory, OrthoImage, Parallelism};
use rand::Rng;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn one_box(seed: u64) -> BoxCityScene {
    BoxCityScene {
        ground_size: [40.0, 40.0],
        ground: GroundPattern::Checkerboard {
            cell: 5.0,
            a: [70, 130, 60],
            b: [150, 150, 140],
        },
        boxes: vec![BoxSpec {
            center: [20.0, 20.0],
            size: [12.0, 12.0],
            height: 8.0,
            roof: [200, 40, 40],
            wall: [255, 0, 255],
        }],
        density: 25.0,
        noise_sigma: 0.01,
        seed,
    }
}

#[test]
fn manifest_replay_is_bit_identical() {
    let dir = TempDir::new().unwrap();
    let cloud = one_box(3).sample_points().unwrap();
    let ply = dir.path().join("scene.ply");
    save_ply(&cloud, &ply).unwrap();

    let mut cfg = PipelineConfig {
        seed: 21,
        ..Default::default()
    };
    cfg.set("crop_frac", "0.05").unwrap();
    cfg.set("ransac_threshold", "0.05").unwrap();
    let first = dir.path().join("first.png");
    let manifest = run_pipeline(&ply, &first, &cfg).unwrap();
    assert_eq!(manifest.schema_version, 1);
    assert_eq!(manifest.points, cloud.len());

    let loaded = RunManifest::load(pipeline::manifest_path(&first)).unwrap();
    assert_eq!(loaded, manifest);
    let replayed_cfg = loaded.config().unwrap();
    assert_eq!(replayed_cfg, cfg);
    let second = dir.path().join("second.png");
    run_pipeline(&loaded.input, &second, &replayed_cfg).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("first.holes.png")).unwrap(),
        std::fs::read(dir.path().join("second.holes.png")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_the_image() {
    let cloud = one_box(4).sample_points().unwrap();
    let run = |threads, par| {
        let mut cfg = PipelineConfig {
            seed: 2,
            ..Default::default()
        };
        cfg.render.raster.parallelism = par;
        cfg.render.ransac.parallelism = par;
        with_threads(Some(threads), || process_cloud(&cloud, &cfg).unwrap().image)
    };
    let reference = run(1, Parallelism::Sequential);
    assert_eq!(run(3, Parallelism::Parallel), reference);
    assert_eq!(run(1, Parallelism::Parallel), reference);
}

#[test]
fn roof_footprint_matches_the_analytic_ground_truth() {
    let scene = one_box(5);
    let cloud = scene.sample_points().unwrap();
    let cfg = PipelineConfig {
        seed: 8,
        ..Default::default()
    };
    let out = process_cloud(&cloud, &cfg).unwrap();
    let img = &out.image;
    assert_eq!(img.hole_count(), 0);
    let (truth, boxes) = fixtures::ground_truth_for(&scene, &out.render.plane, img.georef, img.width, img.height);
    let roof: Vec<bool> = boxes.iter().map(Option::is_some).collect();
    // the outermost two pixel rings mix roof, wall and ground at this scale
    let (w, h) = (img.width, img.height);
    let interior: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            x >= 2
                && y >= 2
                && x + 2 < w
                && y + 2 < h
                && (y - 2..=y + 2).all(|yy| (x - 2..=x + 2).all(|xx| roof[yy * w + xx]))
        })
        .collect();
    assert!(interior.iter().filter(|&&r| r).count() > 500);
    let within = fixtures::fraction_within(img, &truth, 16.0, Some(&interior)).unwrap();
    assert_eq!(within, 1.0, "roof interior agreement {within}");
    let magenta = img
        .rgb
        .iter()
        .filter(|c| c[0] > 239.0 && c[1] < 16.0 && c[2] > 239.0)
        .count();
    assert_eq!(magenta, 0);
}

#[test]
fn flat_uniform_scene_renders_uniformly() {
    let scene = BoxCityScene {
        boxes: Vec::new(),
        ground: GroundPattern::Uniform { color: [60, 140, 70] },
        ..one_box(6)
    };
    let out = process_cloud(&scene.sample_points().unwrap(), &PipelineConfig::default()).unwrap();
    assert!(out.render.image.roof_alpha.iter().all(|&a| a == 0.0));
    for c in &out.image.rgb {
        for (k, want) in [60.0, 140.0, 70.0].into_iter().enumerate() {
            assert!((c[k] - want).abs() < 1e-3, "{c:?}");
        }
    }
}

#[test]
fn plane_free_cloud_is_reported_as_degenerate() {
    let mut rng = stream_rng(99, 0);
    let mut cloud = ColoredPointCloud::with_capacity(4000);
    while cloud.len() < 4000 {
        let p: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            cloud.push(p, [200; 3]).unwrap();
        }
    }
    let mut cfg = PipelineConfig::default();
    cfg.set("ransac_threshold", "0.001").unwrap();
    let err = process_cloud(&cloud, &cfg).unwrap_err();
    assert!(matches!(err, Error::NoPlane { .. }), "{err}");
    assert_eq!(err.category(), ErrorCategory::DegenerateGeometry);
}

#[test]
fn harmonize_reference_shifts_statistics() {
    let dir = TempDir::new().unwrap();
    let reference = dir.path().join("ref.png");
    OrthoImage::from_rgb(2, 1, vec![[100.0, 100.0, 100.0], [140.0, 140.0, 140.0]])
        .unwrap()
        .save_png(&reference)
        .unwrap();
    let mut cfg = PipelineConfig {
        seed: 1,
        ..Default::default()
    };
    cfg.harmonize_ref = Some(reference);
    let out = process_cloud(&one_box(7).sample_points().unwrap(), &cfg).unwrap();
    assert!(out.timings.iter().any(|(stage, _)| stage == "harmonize"));
    let n = out.image.len() as f64;
    for k in 0..3 {
        let mean = out.image.rgb.iter().map(|c| f64::from(c[k])).sum::<f64>() / n;
        assert!((mean - 120.0).abs() < 2.0, "channel {k} mean {mean}");
    }
}

#[test]
fn tiny_ply_fixture() {
    let load = load_ply(fixture("tiny_scene.ply")).unwrap();
    assert_eq!(load.declared, 14);
    assert_eq!(load.dropped_nonfinite, 0);
    let cloud = load.cloud;
    assert_eq!(cloud.points()[12], [0.75, 0.5, 2.0]);
    assert_eq!(cloud.colors()[12], [200, 40, 40]);
    let bb = cloud.bounding_box().unwrap();
    assert_eq!(bb.min, [0.0, 0.0, 0.0]);
    assert_eq!(bb.max, [1.5, 1.0, 2.0]);
}

#[test]
fn descriptor_pack_fixture() {
    let set = load_descriptor_pack(fixture("descriptors.pack")).unwrap();
    assert_eq!((set.len(), set.dim()), (6, 8));
    assert_eq!(set.metadata.get("producer").map(String::as_str), Some("fixture"));
    for d in set.iter() {
        let norm: f64 = d
            .vector
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(d.label.starts_with("class_"));
    }
    let report = retrieval::evaluate(&set, &set, &[1], "self", Parallelism::Sequential).unwrap();
    assert_eq!(report.recall_at[&1], 100.0);
}

#[test]
fn labeled_matrix_matches_pack() {
    let dir = TempDir::new().unwrap();
    let set = load_descriptor_pack(fixture("descriptors.pack")).unwrap();
    let labels = dir.path().join("labels.csv");
    let matrix = dir.path().join("matrix.f32");
    let csv: String = set.iter().map(|d| format!("{}, {}\n", d.id, d.label)).collect();
    std::fs::write(&labels, csv).unwrap();
    // scale rows to check that loading normalizes them
    let bytes: Vec<u8> = set
        .iter()
        .flat_map(|d| {
            d.vector
                .iter()
                .flat_map(|v| (v * 3.0).to_le_bytes())
                .collect::<Vec<_>>()
        })
        .collect();
    std::fs::write(&matrix, bytes).unwrap();
    let loaded = retrieval::load_labeled_matrix(&labels, &matrix).unwrap();
    assert_eq!(loaded.len(), set.len());
    for (a, b) in loaded.iter().zip(set.iter()) {
        assert_eq!((&a.id, &a.label), (&b.id, &b.label));
        for (x, y) in a.vector.iter().zip(&b.vector) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
