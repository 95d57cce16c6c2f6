//! Sequential vs parallel execution of the data-parallel kernels.
//!
//! Build with `--no-default-features` to compile out rayon; both variants
//! then run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use orthoforge::fixtures::BoxCityScene;
use orthoforge::plane::{self, RansacParams};
use orthoforge::raster::{self, RasterConfig};
use orthoforge::retrieval::{self, l2_normalize, Descriptor, DescriptorSet};
use orthoforge::rng::stream_rng;
use orthoforge::Parallelism;
use rand::Rng;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn scene_cloud() -> orthoforge::ColoredPointCloud {
    let mut scene = BoxCityScene::standard(1);
    scene.density = 10.0;
    scene.sample_points().expect("scene samples")
}

fn rasterize(c: &mut Criterion) {
    let cloud = scene_cloud();
    let fitted = plane::fit_plane_ransac(&cloud, &RansacParams::default()).unwrap();
    let (pts, _) = plane::fix_orientation(plane::to_plane_coords(&cloud, &fitted), fitted);
    let base = RasterConfig::default();
    let norm = raster::normalize_heights(&pts, &base).unwrap();
    let res = raster::choose_resolution(&pts, &base, &norm).unwrap();
    let mut group = c.benchmark_group("rasterize_layers");
    group.sample_size(10);
    for (name, par) in MODES {
        let cfg = RasterConfig {
            parallelism: par,
            ..base
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(raster::rasterize_layers(&pts, &cfg, &res, &norm)))
        });
    }
    group.finish();
}

fn ransac(c: &mut Criterion) {
    let cloud = scene_cloud();
    let mut group = c.benchmark_group("fit_plane_ransac");
    group.sample_size(10);
    for (name, par) in MODES {
        let params = RansacParams {
            parallelism: par,
            seed: 3,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(plane::fit_plane_ransac(&cloud, &params).unwrap()))
        });
    }
    group.finish();
}

fn descriptors(n: usize, dim: usize, stream: u64) -> DescriptorSet {
    let mut rng = stream_rng(5, stream);
    let items = (0..n).map(|i| {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Descriptor {
            id: format!("d{i}"),
            vector: l2_normalize(&v).unwrap(),
            label: format!("c{}", i % 50),
        }
    });
    DescriptorSet::from_descriptors(dim, items).unwrap()
}

fn rank_all(c: &mut Criterion) {
    let queries = descriptors(500, 256, 0);
    let refs = descriptors(2000, 256, 1);
    let mut group = c.benchmark_group("rank_all");
    group.sample_size(10);
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(retrieval::rank_all(&queries, &refs, par).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(kernels, rasterize, ransac, rank_all);
criterion_main!(kernels);
