use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mixsim::env_model::{EnvironmentSet, FeatureMap};
use mixsim::harness::{generate_perturbed_pair, random_policy, run_bound_suite};
use mixsim::learner::{run_training, TrainingConfig};
use mixsim::par::{self, Execution};
use mixsim::replay::{empirical_rb_expectation, interact_step, DrawMode, InitialStates, MixProcessState, ProcessRng, RewardOffset};
use mixsim::rng::{Purpose, SeededRng};
use nalgebra::DVector;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bound_suite(c: &mut Criterion) {
    let mut g = c.benchmark_group("bound_suite_100x3");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_bound_suite(5, 2, &[0.01, 0.05, 0.1], 100, 0, exec).unwrap())
        });
    }
    g.finish();
}

// Ten critic-only seeds of 20k steps each.
fn seed_fan_out(c: &mut Criterion) {
    let mut g = c.benchmark_group("seed_fan_out_10");
    g.sample_size(10);
    let cfg = TrainingConfig {
        steps: 20_000,
        n_batch: 8,
        freeze_actor: true,
        log_every: 20_000,
        ..Default::default()
    };
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map_range(exec, 10, |seed| {
                    let mut rng = SeededRng::for_purpose(seed as u64, Purpose::Generate, 0);
                    let (real, sim) = generate_perturbed_pair(&mut rng, 5, 2, 0.1).unwrap();
                    let pol = random_policy(&mut rng, 5, 2, 1.0);
                    let envs = EnvironmentSet::new(vec![real, sim], vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
                    let f = FeatureMap::tabular_anchored(5, 4).unwrap();
                    run_training(&envs, &f, &pol, &cfg, seed as u64).unwrap()
                })
            })
        });
    }
    g.finish();
}

// Eight independent streaming Monte-Carlo estimates of E[delta phi].
fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("monte_carlo_8x100k");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::map_range(exec, 8, |i| {
                    let mut rng = SeededRng::for_purpose(i as u64, Purpose::Generate, 2);
                    let (real, sim) = generate_perturbed_pair(&mut rng, 5, 2, 0.1).unwrap();
                    let pol = random_policy(&mut rng, 5, 2, 1.0);
                    let f = FeatureMap::random(&mut rng, 5, 4, 1e-3).unwrap();
                    let envs = EnvironmentSet::new(vec![real, sim], vec![0.4, 0.6], vec![0.3, 0.7]).unwrap();
                    let mut state = MixProcessState::new(&envs, 200, &InitialStates::Uniform, &mut rng).unwrap();
                    let mut prng = ProcessRng::new(i as u64, 2);
                    while !state.all_full() {
                        interact_step(&mut state, &envs, &pol, &mut prng);
                    }
                    let v = DVector::zeros(4);
                    let est = empirical_rb_expectation(
                        &mut state,
                        &envs,
                        &pol,
                        &f,
                        &v,
                        &RewardOffset::Shared(0.5),
                        100_000,
                        DrawMode::Streaming { batches: 100 },
                        &mut prng,
                    )
                    .unwrap();
                    black_box(est.mean)
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bound_suite, seed_fan_out, monte_carlo);
criterion_main!(benches);
