use criterion::{criterion_group, criterion_main, Criterion};
use prosody_core::synth::{generate_corpus, generate_corpus_sequential, GenConfig};

fn bench_generation(c: &mut Criterion) {
    let config = GenConfig {
        n_train: 64,
        n_dev: 0,
        n_test: 0,
        ..GenConfig::default()
    };
    let mut group = c.benchmark_group("generate_64_utterances");
    group.sample_size(20);
    group.bench_function("parallel", |b| b.iter(|| generate_corpus(&config).unwrap()));
    group.bench_function("sequential", |b| b.iter(|| generate_corpus_sequential(&config).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_generation);
criterion_main!(benches);
