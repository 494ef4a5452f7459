use criterion::{criterion_group, criterion_main, Criterion};
use rcn_bench::{toy_model, toy_sequences};
use rcn_core::training::{batch_gradient, pair_similarity, Label, Pair, PairBatch};
use std::hint::black_box;

fn pair(c: &mut Criterion) {
    let (arch, params) = toy_model();
    let (a, b) = toy_sequences(&arch);
    let mut group = c.benchmark_group("pair_toy");
    group.sample_size(20);
    group.bench_function("forward", |bench| {
        bench.iter(|| black_box(pair_similarity(&arch, &params, &a, &b).unwrap()))
    });
    let batch = PairBatch {
        pairs: vec![Pair {
            a: a.clone(),
            b: b.clone(),
            label: Label::Dissimilar,
            person_a: "p000".into(),
            person_b: "p001".into(),
        }],
    };
    group.bench_function("forward_backward", |bench| {
        bench.iter(|| black_box(batch_gradient(&arch, &params, &batch, None).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, pair);
criterion_main!(benches);
