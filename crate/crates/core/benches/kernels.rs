//! Hot kernels on one thread and on the full rayon pool.
//!
//! Build with `--no-default-features` to time the sequential fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dgns::aabb::Aabb;
use dgns::autodiff::Tape;
use dgns::gaussian::project_batch;
use dgns::mesh::extract_mesh;
use dgns::metrics::chamfer;
use dgns::pipeline::{orbit_camera, Model, TrainConfig};
use dgns::render::render_batch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = rayon::current_num_threads().max(1);
    let mut v = vec![("threads=1".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if all > 1 {
        v.push((format!("threads={all}"), rayon::ThreadPoolBuilder::new().num_threads(all).build().unwrap()));
    }
    v
}

fn model(n: usize) -> Model {
    let mut cfg = TrainConfig::desk();
    cfg.model.init_gaussians = n;
    cfg.model.init_opacity = 0.5;
    cfg.model.init_scale = Some(0.05);
    cfg.model.sphere_fit_steps = 0;
    Model::new(&cfg, Aabb::cube([0.0; 3], 1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn splats(c: &mut Criterion) {
    let m = model(4000);
    let cam = orbit_camera(0, 8, 128, 128);
    let mut g = c.benchmark_group("splat_forward_backward");
    g.sample_size(10);
    for (label, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                pool.install(|| {
                    let tape = Tape::new();
                    let gv = m.gaussian_vars(&tape, 0.5, true);
                    let batch = project_batch(&gv, &cam, m.gaussians.sh_degree, 0.01);
                    let r = render_batch(&batch, cam.width, cam.height, &m.config.raster);
                    let loss = r.color.sum() + r.alpha.sum();
                    tape.backward(loss).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn sdf_field(c: &mut Criterion) {
    let m = model(10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<[f64; 3]> = (0..4096).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let mut g = c.benchmark_group("sdf_values_4096");
    g.sample_size(10);
    for (label, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(|| pool.install(|| m.surface.sdf_values(&m.store, &pts, 0.3))));
    }
    g.finish();
}

fn marching_cubes(c: &mut Criterion) {
    let bounds = Aabb::cube([0.0; 3], 1.0);
    let sphere = |pts: &[[f64; 3]]| pts.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.6).collect::<Vec<f64>>();
    let mut g = c.benchmark_group("marching_cubes_96");
    g.sample_size(10);
    for (label, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(|| pool.install(|| extract_mesh(sphere, &bounds, 96).unwrap())));
    }
    g.finish();
}

fn chamfer_distance(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cloud = |n: usize| -> Vec<[f64; 3]> { (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect() };
    let (a, b) = (cloud(10_000), cloud(10_000));
    let mut g = c.benchmark_group("chamfer_10k");
    g.sample_size(10);
    for (label, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(label), |bch| bch.iter(|| pool.install(|| chamfer(&a, &b))));
    }
    g.finish();
}

criterion_group!(kernels, splats, sdf_field, marching_cubes, chamfer_distance);
criterion_main!(kernels);
