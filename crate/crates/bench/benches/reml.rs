use criterion::{criterion_group, criterion_main, Criterion};
use mixedform_bench::corpus_model;
use mixedform_core::reml::Reml;
use std::hint::black_box;

// One objective and one gradient evaluation at the default start.
fn objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("reml");
    group.sample_size(10);
    for (entry, model) in [
        ("gilmour", "idv"),
        ("gilmour", "ar1xar1"),
        ("chick", "us"),
        ("met", "diag"),
    ] {
        let spec = corpus_model(entry, model);
        let r = Reml::new(&spec);
        let w = r.to_working(&r.default_start()).unwrap();
        group.bench_function(format!("value/{entry}/{model}"), |b| {
            b.iter(|| r.value(black_box(&w)))
        });
        group.bench_function(format!("gradient/{entry}/{model}"), |b| {
            b.iter(|| r.value_and_gradient(black_box(&w)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, objective);
criterion_main!(benches);
