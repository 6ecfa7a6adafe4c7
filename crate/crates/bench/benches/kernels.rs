use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use iarap_core::arap::{batch_weights, record_losses, HandleSet};
use iarap_core::deform::{DeformationField, DeformerSpec};
use iarap_core::mc::{marching_cubes, GridSpec};
use iarap_core::nn::Tape;
use iarap_core::patch::delaunay::triangulate;
use iarap_core::patch::{build_patch_batch, sample_disk, DiskDistribution, PatchTemplate};
use iarap_core::sampling::{uniform_in_domain, ProjectionConfig};
use iarap_core::sdf::{AnalyticSdf, NeuralSdf};
use iarap_core::{ScalarField, SeedStream, Vec3};

fn points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = SeedStream::new(seed).rng("bench/points");
    (0..n).map(|_| uniform_in_domain(&mut rng)).collect()
}

fn neural_sdf(c: &mut Criterion) {
    let sdf = NeuralSdf::new(NeuralSdf::default_spec(), &mut SeedStream::new(1).rng("init")).unwrap();
    let pts = points(1024, 2);
    let mut g = c.benchmark_group("neural_sdf_1024");
    g.sample_size(10);
    g.bench_function("values", |b| b.iter(|| sdf.values(black_box(&pts))));
    g.bench_function("values_and_gradients", |b| b.iter(|| sdf.values_and_gradients(black_box(&pts))));
    g.finish();
}

fn delaunay(c: &mut Criterion) {
    let mut rng = SeedStream::new(3).rng("disk");
    let pts = sample_disk(256, 1.0, DiskDistribution::UniformRandom, &mut rng);
    c.bench_function("delaunay_256", |b| b.iter(|| triangulate(black_box(&pts)).unwrap()));
}

fn mc(c: &mut Criterion) {
    let sphere = AnalyticSdf::sphere(0.6);
    let grid = GridSpec::new(64, 0.0).unwrap();
    let mut g = c.benchmark_group("marching_cubes");
    g.sample_size(10);
    g.bench_function("sphere_64", |b| b.iter(|| marching_cubes(&sphere, black_box(&grid)).unwrap()));
    g.finish();
}

fn patches(c: &mut Criterion) {
    let sphere = AnalyticSdf::sphere(0.6);
    let seeds = SeedStream::new(4);
    let tmpl = PatchTemplate::new(30, 0.03, DiskDistribution::UniformRandom, &mut seeds.rng("t")).unwrap();
    let proj = ProjectionConfig::default();
    let mut g = c.benchmark_group("patch_batch");
    g.sample_size(10);
    g.bench_function("sphere_512x30", |b| {
        b.iter_batched(
            || seeds.rng("p"),
            |mut rng| build_patch_batch(&sphere, &tmpl, 512, 0.8, &[], &proj, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn arap_step(c: &mut Criterion) {
    let sphere = AnalyticSdf::sphere(0.6);
    let seeds = SeedStream::new(5);
    let tmpl = PatchTemplate::new(30, 0.03, DiskDistribution::UniformRandom, &mut seeds.rng("t")).unwrap();
    let batch =
        build_patch_batch(&sphere, &tmpl, 128, 0.8, &[], &ProjectionConfig::default(), &mut seeds.rng("p")).unwrap();
    let (_, weights, _) = batch_weights(&batch);
    let mut handles = HandleSet::new();
    handles.push_moving(Vec3::new(0.0, 0.0, 0.6), Vec3::new(0.0, 0.1, 0.6));
    handles.push_static(Vec3::new(0.0, 0.0, -0.6));
    let mut g = c.benchmark_group("deform_loss_and_gradient_128x30");
    g.sample_size(10);
    for spec in [DeformerSpec::mlp(), DeformerSpec::invertible()] {
        let d = DeformationField::new(spec.clone(), &mut seeds.rng("d")).unwrap();
        g.bench_function(spec.variant.name(), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let v = record_losses(&mut tape, &d, &batch, &weights, &handles).unwrap();
                let h = v.handle.unwrap();
                let root = tape.add(v.arap, h);
                tape.backward(root).unwrap().params(d.params())
            })
        });
    }
    g.finish();
}

fn field_eval(c: &mut Criterion) {
    let sphere = AnalyticSdf::sphere(0.6);
    let pts = points(4096, 6);
    c.bench_function("analytic_sphere_4096", |b| b.iter(|| sphere.values(black_box(&pts))));
}

criterion_group!(benches, neural_sdf, delaunay, mc, patches, arap_step, field_eval);
criterion_main!(benches);
