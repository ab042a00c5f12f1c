//! One-worker pool against the full pool on the Green solver setup and on the
//! spectral Poisson solve. Build with `--no-default-features` to time the
//! sequential fallback, where both variants run on the calling thread.

use calabi_core::harness::{poisson_stage, ExperimentConfig};
use calabi_core::mode_ode::{FundamentalPair, GreenConfig, GreenSolver, Mode, SourceBound};
use calabi_core::par;
use calabi_core::radial::RadialGrid;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::sync::Arc;

fn green(c: &mut Criterion) {
    let cfg = GreenConfig::default();
    let out = Arc::new(RadialGrid::panels(3, 1.0, 10.0, 20, 16).unwrap());
    let bound = SourceBound { c0: 1.0, delta: -2.0 };
    let mode = Mode::new(2.0, 1).unwrap();
    let mut g = c.benchmark_group("green_solve");
    g.sample_size(10);
    for threads in [1usize, 0] {
        let label = if threads == 1 { "one_worker" } else { "all_workers" };
        g.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            b.iter(|| {
                par::with_threads(t, || {
                    let pair = FundamentalPair::for_mode(3, &mode, &cfg.quadrature).unwrap();
                    let z_max = GreenSolver::suggest_z_max(&pair, 10.0, &bound, cfg.tail_tol).unwrap();
                    let s = GreenSolver::new(pair, 1.0, z_max, &cfg).unwrap();
                    s.solve(out.clone(), |z| z.powi(-2), &bound).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn poisson(c: &mut Criterion) {
    let config = ExperimentConfig::default();
    let mut g = c.benchmark_group("poisson_stage");
    g.sample_size(10);
    for threads in [1usize, 0] {
        let label = if threads == 1 { "one_worker" } else { "all_workers" };
        g.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || poisson_stage(&config).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, green, poisson);
criterion_main!(benches);
