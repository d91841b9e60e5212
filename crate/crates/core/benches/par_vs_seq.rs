use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nspda::checkpoint::Model;
use nspda::gradcheck::uoro_check;
use nspda::grammar::{sample_length_set, Grammar};
use nspda::harness::{error_pct, program};
use nspda::model::ModelOrder;
use nspda::par::Exec;

fn strategies() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::Sequential)];
    if Exec::parallel_available() {
        v.push(("parallel", Exec::Parallel));
    }
    v
}

fn eval_sweep(c: &mut Criterion) {
    let pda = Grammar::Dyck2.pda();
    let model = Model::Nspda(program(&pda, ModelOrder::Third, None).unwrap());
    let set = sample_length_set(&pda, 2000, 120, 1).unwrap();
    let mut group = c.benchmark_group("eval_sweep");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(error_pct(&model, &set, 5, exec).unwrap()))
        });
    }
    group.finish();
}

fn uoro_monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("uoro_monte_carlo");
    group.sample_size(10);
    for (name, exec) in strategies() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(uoro_check(2000, 3, exec).unwrap().max_z))
        });
    }
    group.finish();
}

criterion_group!(benches, eval_sweep, uoro_monte_carlo);
criterion_main!(benches);
