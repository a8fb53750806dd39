//! Parallel map against the sequential fallback on the two workloads that
//! dominate a run: the log-mel front end and brute-force neighbor search.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use asd_core::corpus::{generate_clip, CorpusSpec};
use asd_core::dsp::{log_mel, MelConfig};
use asd_core::parallel;
use asd_core::smooth::{build_pool, DomainFilter, Metric, ScoredSample};
use asd_core::table::RowMeta;

fn bench_log_mel(c: &mut Criterion) {
    let mut spec = CorpusSpec::default_demo();
    spec.duration_s = 4.0;
    spec.n_train_source = 2;
    spec.n_train_target = 0;
    spec.n_test = 0;
    let plan = spec.plan().unwrap();
    let clips: Vec<_> = plan
        .iter()
        .take(8)
        .map(|m| generate_clip(&spec, m).unwrap())
        .collect();
    let mel = MelConfig::ae_preset();

    let mut group = c.benchmark_group("log_mel_8_clips");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| parallel::map(black_box(&clips), |clip| log_mel(clip, &mel).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| parallel::map_seq(black_box(&clips), |clip| log_mel(clip, &mel).unwrap()))
    });
    group.finish();
}

fn bench_knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let samples: Vec<ScoredSample> = (0..600)
        .map(|i| ScoredSample {
            meta: RowMeta {
                clip_id: format!("clip{i:04}"),
                machine: "m".into(),
                section: 0,
                domain: asd_core::corpus::Domain::Source,
                label: asd_core::corpus::Label::Normal,
            },
            feature: (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
            score_gen: rng.random_range(0.0..1.0),
        })
        .collect();
    let pool = build_pool(samples.clone(), DomainFilter::All, Metric::Euclidean).unwrap();

    let mut group = c.benchmark_group("knn_600x128");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| parallel::map(black_box(&samples), |s| pool.knn(s, 7).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| parallel::map_seq(black_box(&samples), |s| pool.knn(s, 7).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_log_mel, bench_knn);
criterion_main!(benches);
