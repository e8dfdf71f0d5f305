//! Criterion benchmarks over the reconstruction pipeline at desk scale
//! (64×64, 4 coils). The `benches/pipeline.rs` target runs [`benchmarks`].

use criterion::{black_box, BatchSize, Criterion};
use kinr::dataset::Record;
use kinr::encoder::encode;
use kinr::grappa::{extract_acs, grappa_calibrate, grappa_fill};
use kinr::model::prepare_input;
use kinr::train::Trainer;
use kinr::{
    apply_mask, fft_coils, ifft_coils, make_equispaced_mask, simulate_records, ssim, InrModel,
    KernelSpec, Normalization, TrainConfig,
};

const SIZE: usize = 64;
const COILS: usize = 4;

fn records(n: usize) -> Vec<Record> {
    simulate_records(n, SIZE, SIZE, COILS, 0.01, 7).expect("simulated records")
}

pub fn fft(c: &mut Criterion) {
    let k = records(1).remove(0).kspace;
    let img = ifft_coils(k.data());
    c.bench_function("fft/forward_4x64x64", |b| b.iter(|| fft_coils(black_box(&img))));
    c.bench_function("fft/inverse_4x64x64", |b| b.iter(|| ifft_coils(black_box(k.data()))));
}

pub fn encoder(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    let model = InrModel::<f32>::new(cfg.model_config(COILS), 0).unwrap();
    let rec = records(1).remove(0);
    let mask = make_equispaced_mask(SIZE, 4, cfg.acs_fraction).unwrap();
    let under = apply_mask(&rec.kspace, &mask).unwrap();
    let (input, _, _) = prepare_input::<f64>(&under, Normalization::ZeroFilledMax);
    let mags = ndarray::Array3::from_shape_vec((COILS, SIZE, SIZE), input).unwrap();
    c.bench_function("encoder/forward_desk", |b| {
        b.iter(|| encode(&model.encoder, &model.layout, &model.params, black_box(&mags), 4).unwrap())
    });
}

pub fn train_step(c: &mut Criterion) {
    let recs = records(4);
    let cfg = TrainConfig {
        scales: vec![4, 5, 6],
        iterations: 1_000_000,
        log_every: 0,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_desk_batch2", |b| {
        b.iter_batched(
            || Trainer::<f32>::new(&recs, &cfg).unwrap(),
            |mut t| t.step().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

pub fn grappa(c: &mut Criterion) {
    let rec = records(1).remove(0);
    let mask = make_equispaced_mask(SIZE, 2, 0.4).unwrap();
    let under = apply_mask(&rec.kspace, &mask).unwrap();
    let acs = extract_acs(&under, &mask);
    c.bench_function("grappa/calibrate_s2", |b| {
        b.iter(|| grappa_calibrate(black_box(&acs), KernelSpec::default(), 2).unwrap())
    });
    let wts = grappa_calibrate(&acs, KernelSpec::default(), 2).unwrap();
    c.bench_function("grappa/fill_s2", |b| b.iter(|| grappa_fill(black_box(&under), &mask, &wts).unwrap()));
}

pub fn metrics(c: &mut Criterion) {
    let rec = records(1).remove(0);
    let noisy = rec.sos.mapv(|v| v * 0.97 + 0.001);
    c.bench_function("metrics/ssim_64x64", |b| b.iter(|| ssim(black_box(&rec.sos), &noisy).unwrap()));
}

pub fn benchmarks(c: &mut Criterion) {
    fft(c);
    encoder(c);
    train_step(c);
    grappa(c);
    metrics(c);
}
