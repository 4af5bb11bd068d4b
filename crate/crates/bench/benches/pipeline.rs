use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ppsync_bench::{ring, short_example2};
use ppsync_core::ppf::evaluate_clamped;
use ppsync_core::sim::run;
use ppsync_core::{build_matrices, transform, Simulator, TransformSpec, TransformVariant};

fn transforms(c: &mut Criterion) {
    let mut g = c.benchmark_group("transform");
    for v in [TransformVariant::SignSwitched, TransformVariant::ErfSmoothed] {
        let spec = TransformSpec::new(7.0, 1.0, v, 20.0).unwrap();
        g.bench_function(v.as_str(), |b| {
            b.iter(|| {
                let mut acc = 0.0;
                for k in 0..64 {
                    let e = -6.5 + 0.2 * k as f64;
                    acc += transform(&spec, black_box(e), 1.0).unwrap();
                }
                acc
            })
        });
        g.bench_function(format!("{}_clamped", v.as_str()), |b| {
            b.iter(|| evaluate_clamped(&spec, black_box(0.3), black_box(0.9), None))
        });
    }
    g.finish();
}

fn graph(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_matrices");
    for n in [5, 20, 50] {
        let d = ring(n);
        g.bench_function(format!("ring_{n}"), |b| b.iter(|| build_matrices(black_box(&d)).unwrap()));
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let sim = Simulator::new(short_example2(0.01)).unwrap();
    let state = sim.initial_state();
    c.bench_function("example2_rk4_step", |b| {
        b.iter(|| sim.step(black_box(&state), 5e-5).unwrap())
    });
    let mut g = c.benchmark_group("example2_run");
    g.sample_size(10);
    g.bench_function("0.1s", |b| b.iter(|| run(short_example2(0.1)).unwrap()));
    g.finish();
}

criterion_group!(benches, transforms, graph, simulation);
criterion_main!(benches);
