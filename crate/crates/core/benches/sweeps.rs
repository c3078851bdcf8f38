use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use multiflag::arm_model::ArmDims;
use multiflag::dynamics::{ControlSignal, IntegratorSettings};
use multiflag::flag_verifier::VerifyOptions;
use multiflag::sampling::RegularSampling;
use multiflag::sweep::{integrate_sweep, sample_configs, sample_rng, verify_sweep, Execution, SampleKind};

fn modes() -> Vec<Execution> {
    if cfg!(feature = "parallel") {
        vec![Execution::Sequential, Execution::Parallel]
    } else {
        vec![Execution::Sequential]
    }
}

fn verify(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify_sweep");
    group.sample_size(10);
    for (k, n) in [(1, 3), (2, 2), (3, 2)] {
        let dims = ArmDims::new(k, n).unwrap();
        let configs = sample_configs(
            dims,
            SampleKind::Regular(RegularSampling::default()),
            32,
            1,
            Execution::Sequential,
        );
        for exec in modes() {
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), format!("k{k}n{n}")),
                &configs,
                |b, cfgs| b.iter(|| verify_sweep(black_box(cfgs), VerifyOptions::default(), exec).unwrap()),
            );
        }
    }
    group.finish();
}

fn integrate(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrate_sweep");
    group.sample_size(10);
    let settings = IntegratorSettings::new(1e-3).unwrap().with_stride(100);
    for (k, n) in [(1, 3), (2, 3)] {
        let dims = ArmDims::new(k, n).unwrap();
        let configs = sample_configs(
            dims,
            SampleKind::Regular(RegularSampling::default()),
            16,
            2,
            Execution::Sequential,
        );
        let controls = move |i: usize| ControlSignal::random(k, &mut sample_rng(3, i));
        for exec in modes() {
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), format!("k{k}n{n}")),
                &configs,
                |b, cfgs| b.iter(|| integrate_sweep(black_box(cfgs), controls, 1.0, &settings, exec).unwrap()),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, verify, integrate);
criterion_main!(benches);
