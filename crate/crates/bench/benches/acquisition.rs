use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fewlabel::acquisition::{score_candidates, select, AcquisitionContext, AcquisitionKind};
use fewlabel::metrics::ContingencyStats;
use fewlabel::surrogate::ModelSpec;
use fewlabel::RngState;
use fewlabel_bench::fixture;

fn scoring(c: &mut Criterion) {
    let f = fixture(2000, 64, 8);
    let model = ModelSpec::default().build(64, 8, &mut RngState::new(1).rng()).unwrap();
    let labeled = 0..100;
    let stats = ContingencyStats::build(&f.test.harden(), labeled.map(|i| (i, f.truth[i])), 8).unwrap();
    let candidates: Vec<usize> = (100..2000).collect();
    let ctx = AcquisitionContext {
        surrogate: Some(&model),
        test: &f.test,
        labeled_stats: Some(stats),
        bald_passes: 10,
    };
    let mut group = c.benchmark_group("score_1900");
    group.sample_size(20);
    for kind in AcquisitionKind::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(kind), &kind, |b, &kind| {
            b.iter(|| score_candidates(kind, &ctx, &f.dataset, &candidates, &mut RngState::new(2).rng()).unwrap())
        });
    }
    group.finish();

    let scores: Vec<f64> = candidates.iter().map(|&i| (i % 17) as f64 / 17.0).collect();
    c.bench_function("select_50_of_1900", |b| {
        b.iter(|| select(&candidates, &scores, 50, &mut RngState::new(3).rng()).unwrap())
    });
}

criterion_group!(benches, scoring);
criterion_main!(benches);
