use criterion::{criterion_group, criterion_main, Criterion};
use recognet_bench::phantom_case;
use recognet_core::data::sample_subsequence;
use recognet_core::model::{Checkpoint, ModelConfig};
use recognet_core::tensorcore::{AdamConfig, AdamState};
use recognet_core::training::train_step;

fn micro(c: &mut Criterion) {
    let case = phantom_case(1);
    let mask = case.mask.clone().unwrap();
    let ckpt = Checkpoint::fresh(ModelConfig::micro(), 0).unwrap();
    let input = case.volume.to_tensor();
    c.bench_function("micro forward 12x64x64", |b| b.iter(|| ckpt.logits(&input).unwrap()));

    let (v, m) = sample_subsequence(&case.volume, &mask, 10, &mut recognet_bench::rng(2)).unwrap();
    let sub = v.to_tensor();
    let mut train = ckpt.clone();
    let mut state = AdamState::for_params(AdamConfig::with_lr(1e-3), train.params.tensors()).unwrap();
    let mut group = c.benchmark_group("micro");
    group.sample_size(20);
    group.bench_function("train step 10x64x64", |b| {
        b.iter(|| train_step(&mut train, &mut state, &sub, &m, 1.0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, micro);
criterion_main!(benches);
