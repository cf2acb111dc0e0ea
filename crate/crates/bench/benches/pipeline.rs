use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use piezosim::analysis::{dissipativity_probe, spectrum};
use piezosim::integrate::simulate_closed;
use piezosim::StepperConfig;
use piezosim_bench::{reference_closed_loop, reference_system, smooth_state};

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for n in [20, 80] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| b.iter(|| reference_system(black_box(n))));
    }
    g.finish();
}

fn stepping(c: &mut Criterion) {
    let mut g = c.benchmark_group("midpoint_1000_steps");
    g.sample_size(20);
    for n in [20, 40] {
        let cl = reference_closed_loop(n);
        let x0 = smooth_state(&cl.base);
        let cfg = StepperConfig { sample_every: 1000, ..StepperConfig::midpoint(1e-4, 0.1) };
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| simulate_closed(black_box(&cl), &cfg, &x0).unwrap())
        });
    }
    g.finish();
}

fn analysis(c: &mut Criterion) {
    let cl = reference_closed_loop(20);
    let mut g = c.benchmark_group("analysis");
    g.sample_size(20);
    g.bench_function("spectrum_n20", |b| b.iter(|| spectrum(black_box(&cl)).unwrap()));
    g.bench_function("dissipativity_probe_n20", |b| b.iter(|| dissipativity_probe(black_box(&cl), 100, 7).unwrap()));
    g.finish();
}

criterion_group!(benches, assembly, stepping, analysis);
criterion_main!(benches);
