use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gns_forge::functional::{cwm_fields, flat_space, qk, DiscreteQuotient};
use gns_forge::solver::{minimize, SolverOptions};
use gns_forge::tractor::{split, tderiv};
use gns_forge::{make_grid, Domain, RadialField};

fn flat(n_grid: usize) -> gns_forge::Smms {
    flat_space(&make_grid(Domain::HalfLine, n_grid, 1.0).unwrap(), 3, 1.0).unwrap()
}

fn profile(smms: &gns_forge::Smms) -> RadialField {
    RadialField::from_fn(smms.grid(), |r| (1.0 + r * r).powf(-1.0) * (1.0 + 0.2 * (-r * r).exp()))
}

fn operators(c: &mut Criterion) {
    let mut group = c.benchmark_group("operators");
    for n_grid in [1024, 4096] {
        let smms = flat(n_grid);
        let w = profile(&smms);
        group.bench_with_input(BenchmarkId::new("weighted_laplacian", n_grid), &w, |b, w| {
            b.iter(|| smms.weighted_laplacian(black_box(w)))
        });
        group.bench_with_input(BenchmarkId::new("tractor_derivative", n_grid), &w, |b, w| {
            b.iter(|| tderiv(smms.geom(), &split(smms.geom(), black_box(w)).unwrap()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("cwm_fields", n_grid), &w, |b, w| {
            b.iter(|| cwm_fields(&smms, &w.recip()).unwrap())
        });
    }
    group.finish();
}

fn quotient(c: &mut Criterion) {
    let mut group = c.benchmark_group("quotient");
    for n_grid in [1024, 4096] {
        let smms = flat(n_grid);
        let w = profile(&smms);
        group.bench_with_input(BenchmarkId::new("qk", n_grid), &w, |b, w| b.iter(|| qk(&smms, 1.0, black_box(w)).unwrap()));
        let dq = DiscreteQuotient::new(&smms, 1.0, false).unwrap();
        let base = dq.to_base(w.values());
        group.bench_with_input(BenchmarkId::new("discrete_gradient", n_grid), &base, |b, base| {
            b.iter(|| {
                let parts = dq.parts(black_box(base));
                dq.gradient(base, &parts)
            })
        });
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("minimize");
    group.sample_size(10);
    for n_grid in [1024, 4096] {
        let smms = flat(n_grid);
        group.bench_function(BenchmarkId::new("cold_start_k1", n_grid), |b| {
            b.iter(|| minimize(&smms, 1.0, &SolverOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(kernels, operators, quotient, solve);
criterion_main!(kernels);
