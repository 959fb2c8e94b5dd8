use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use qmiset::experiment::{identify, Method};
use qmiset::lti::hinf_norm;
use qmiset::synthesis::{error_system, synthesis_problem};
use qmiset::{synthesize_nominal, PlantRealization, SynthesisOptions};
use qmiset_bench::{dataset, lft};

fn set_construction(c: &mut Criterion) {
    let (_, ds) = dataset();
    c.bench_function("consistent sets", |b| b.iter(|| identify(black_box(&ds), Method::Consistent).unwrap()));
    c.bench_function("superset sets", |b| b.iter(|| identify(black_box(&ds), Method::Superset).unwrap()));
}

fn canonicalization(c: &mut Criterion) {
    let lft = lft(Method::Consistent);
    let opts = SynthesisOptions::default();
    c.bench_function("robust LMI canonicalization", |b| {
        b.iter(|| synthesis_problem(Some(black_box(&lft)), None, &opts).unwrap())
    });
}

fn nominal(c: &mut Criterion) {
    let plant = PlantRealization::fourth_order_benchmark();
    let opts = SynthesisOptions::default();
    let mut g = c.benchmark_group("synthesis");
    g.sample_size(10);
    g.bench_function("nominal estimator", |b| b.iter(|| synthesize_nominal(black_box(&plant), &opts).unwrap()));
    g.finish();
}

fn frequency_sweep(c: &mut Criterion) {
    let plant = PlantRealization::fourth_order_benchmark();
    let est = synthesize_nominal(&plant, &SynthesisOptions::default()).unwrap().estimator;
    let sys = error_system(&plant.theta_ab(), &plant.theta_cd(), &plant.cp, &plant.dp, &est).unwrap();
    c.bench_function("error system hinf norm", |b| b.iter(|| hinf_norm(black_box(&sys)).unwrap()));
}

criterion_group!(benches, set_construction, canonicalization, nominal, frequency_sweep);
criterion_main!(benches);
