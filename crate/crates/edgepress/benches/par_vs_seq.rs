//! Parallel (rayon) vs sequential paths of the data-parallel inner loops:
//! group sketching, bitwise matvec rows, and the per-subnet passes of one
//! joint training step. Build with `--no-default-features` to confirm the
//! sequential fallback compiles to the same numbers.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use edgepress::bitexec::{multibit_matvec, multibit_matvec_seq, PackedVector, QuantizedActivation};
use edgepress::dress::{dress_train_step, loss_weights, SparsityLadder};
use edgepress::mbq::{GroupedLayer, GroupingStructure};
use edgepress::model::{synth_blobs, LrSchedule, MlpModel, ModelOptimizer};
use edgepress::numerics::{seeded_rng, AmsGradHyper, Tensor};
use rand::Rng;

fn random_tensor(rng: &mut edgepress::numerics::Rng64, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn bench_sketch(c: &mut Criterion) {
    let mut group = c.benchmark_group("sketch_layer");
    for &(rows, cols) in &[(64usize, 128usize), (128, 784)] {
        let mut rng = seeded_rng(1);
        let w = random_tensor(&mut rng, &[rows, cols]);
        group.bench_with_input(BenchmarkId::new("parallel", format!("{rows}x{cols}")), &w, |b, w| {
            b.iter(|| GroupedLayer::sketch(w, GroupingStructure::Channelwise, 4, 0.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", format!("{rows}x{cols}")), &w, |b, w| {
            b.iter(|| GroupedLayer::sketch_seq(w, GroupingStructure::Channelwise, 4, 0.0).unwrap())
        });
    }
    group.finish();
}

fn bench_matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("multibit_matvec");
    let mut rng = seeded_rng(2);
    let w = random_tensor(&mut rng, &[128, 784]);
    let layer = GroupedLayer::sketch(&w, GroupingStructure::Channelwise, 3, 0.0).unwrap();
    let gammas: Vec<f64> = (0..2).map(|_| rng.gen_range(0.05..1.0)).collect();
    let columns: Vec<PackedVector> = (0..2)
        .map(|_| {
            let s: Vec<f64> = (0..784).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            PackedVector::from_signs(&s).unwrap()
        })
        .collect();
    let act = QuantizedActivation::new(0.3, gammas, columns).unwrap();
    group.bench_function("parallel", |b| b.iter(|| multibit_matvec(&layer, &act).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| multibit_matvec_seq(&layer, &act).unwrap()));
    group.finish();
}

fn bench_dress_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("dress_train_step");
    group.sample_size(20);
    let data = synth_blobs(3, 128, 16, 4);
    let ladder = SparsityLadder::new(vec![0.5, 0.75, 0.875], 0.5);
    let sparsities: Vec<Vec<f64>> = ladder.levels.iter().map(|&s| vec![s, s]).collect();
    let pi = loss_weights(0.5, &ladder.levels);
    group.bench_function("three_subnets", |b| {
        b.iter_batched(
            || {
                let model = MlpModel::new(&[16, 64, 4], 9);
                let opt = ModelOptimizer::new(&model, LrSchedule::constant(0.01), AmsGradHyper::default());
                (model, opt)
            },
            |(mut model, mut opt)| {
                dress_train_step(&mut model, &mut opt, &[16, 64], &sparsities, &pi, &data).unwrap()
            },
            criterion::BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_sketch, bench_matvec, bench_dress_step);
criterion_main!(benches);
