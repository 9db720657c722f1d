//! Kernel timings. A default build compares the global rayon pool (one
//! thread per core) against a one-thread pool; `--no-default-features` times the sequential fallback
//! under the `sequential` label so the reports line up.

use std::hint::black_box;

use cdlnet::model::{ModelConfig, ModelParams};
use cdlnet::synth::{synthetic_corpus, SynthConfig};
use cdlnet::tensor::{conv_analysis, conv_synthesis_into};
use cdlnet::training::{batch_gradient, make_batch, TrainConfig};
use cdlnet::{par, Image};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Runs `f` once per execution mode available in this build.
fn modes(mut f: impl FnMut(&str, &dyn Fn(&mut (dyn FnMut() + Send)))) {
    if par::is_parallel() {
        f("rayon-default", &|g: &mut (dyn FnMut() + Send)| g());
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        f("rayon-1thread", &|g: &mut (dyn FnMut() + Send)| single.install(|| g()));
    } else {
        f("sequential", &|g: &mut (dyn FnMut() + Send)| g());
    }
}

fn model() -> ModelParams<f32> {
    let cfg = ModelConfig {
        k: 10,
        ..ModelConfig::small()
    };
    ModelParams::init(cfg, 25.0 / 255.0).unwrap()
}

fn image(side: usize) -> Image<f32> {
    synthetic_corpus(1, &SynthConfig::new(side, side), 3).remove(0)
}

fn convolutions(c: &mut Criterion) {
    let params = model();
    let x = image(128);
    let z = conv_analysis(&x, &params.d).unwrap();
    let mut group = c.benchmark_group("conv_128x128_m32_p7");
    modes(|label, run| {
        group.bench_function(format!("analysis/{label}"), |b| {
            b.iter(|| run(&mut || {
                black_box(conv_analysis(black_box(&x), &params.d).unwrap());
            }))
        });
        group.bench_function(format!("synthesis/{label}"), |b| {
            b.iter(|| run(&mut || {
                black_box(conv_synthesis_into(black_box(&z), &params.d, 128, 128).unwrap());
            }))
        });
    });
    group.finish();
}

fn network(c: &mut Criterion) {
    let params = model();
    let y = image(96);
    let images: Vec<Image<f32>> = synthetic_corpus(4, &SynthConfig::new(72, 72), 9);
    let refs: Vec<&Image<f32>> = images.iter().collect();
    let cfg = TrainConfig {
        batch_size: 4,
        crop_size: 64,
        ..TrainConfig::default()
    };
    let batch = make_batch(&refs, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut group = c.benchmark_group("network_k10_m32");
    group.sample_size(10);
    modes(|label, run| {
        group.bench_function(format!("forward_96x96/{label}"), |b| {
            b.iter(|| run(&mut || {
                black_box(params.forward(black_box(&y), None).unwrap());
            }))
        });
        group.bench_function(format!("batch_gradient_4x64x64/{label}"), |b| {
            b.iter(|| run(&mut || {
                black_box(batch_gradient(&params, black_box(&batch)).unwrap());
            }))
        });
    });
    group.finish();
}

criterion_group!(benches, convolutions, network);
criterion_main!(benches);
