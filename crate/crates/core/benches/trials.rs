//! Monte-Carlo trial throughput: rayon fan-out against the sequential twin.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use eft_spectra_core::qksd::{run_trials, run_trials_sequential, KrylovConfig, Regularization};
use eft_spectra_core::spectrum::synth_exponential;

fn trial_benches(c: &mut Criterion) {
    let mut energies = vec![-0.85];
    for i in 0..19 {
        energies.push(-0.45 + 1.3 * i as f64 / 18.0);
    }
    let s = synth_exponential(&energies, 0.5, 0.1, 0.0, 1.0).unwrap();
    let policy = Regularization::TopM(2);
    let m_total = 50_000;

    let mut group = c.benchmark_group("run_trials");
    for k_max in [8u64, 32] {
        let cfg = KrylovConfig::from_max_degree(k_max, 1).unwrap();
        group.bench_with_input(BenchmarkId::new("parallel", k_max), &cfg, |b, cfg| {
            b.iter(|| run_trials(&s, cfg, policy, m_total, 64, 7).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", k_max), &cfg, |b, cfg| {
            b.iter(|| run_trials_sequential(&s, cfg, policy, m_total, 64, 7).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, trial_benches);
criterion_main!(benches);
