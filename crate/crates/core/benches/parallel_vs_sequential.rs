use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use insens_core::cascade::ControlSystem;
use insens_core::hum::observability_ratio_sample;
use insens_core::problem::{desk_config, DeskSpec};
use insens_core::weights::check_weight_properties;
use insens_core::{validate_problem, Exec, Nonlinearity};

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    if Exec::parallel_available() {
        m.push(("parallel", Exec::Parallel));
    }
    m
}

fn ratio_sweep(c: &mut Criterion) {
    let p = Arc::new(validate_problem(desk_config(&DeskSpec::default(), Nonlinearity::Zero).unwrap()).unwrap());
    let constants = p.constants().unwrap().clone();
    let sys = ControlSystem::linear(p);
    let mut group = c.benchmark_group("observability_ratio_16");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| observability_ratio_sample(&sys, &constants, 16, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn weight_sweep(c: &mut Criterion) {
    let spec = DeskSpec {
        n: 256,
        ..DeskSpec::default()
    };
    let p = validate_problem(desk_config(&spec, Nonlinearity::Zero).unwrap()).unwrap();
    let mut group = c.benchmark_group("weight_properties_n256");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| check_weight_properties(p.weights(), p.grid(), exec))
        });
    }
    group.finish();
}

criterion_group!(benches, ratio_sweep, weight_sweep);
criterion_main!(benches);
