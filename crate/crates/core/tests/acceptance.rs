//! Acceptance suite. Each criterion prints one PASS/FAIL line with the
//! numbers behind it; the process exits nonzero if any criterion fails.
//!
//! Runs as a plain binary (no libtest harness) so the lines are visible in
//! `cargo test` output.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use mixsim::analysis::{
    actor_direction_and_bias, build_a_b_infinity, convex_stationarity_identity, ergodicity_coefficient, slow_chain,
    slow_mix_norm_bound, tv_bound_check,
};
use mixsim::env_model::{
    induced_transition_matrix, mixed_average_reward, stationary_of_matrix, EnvironmentSet, FeatureMap, FiniteMdp,
    TabularSoftmaxPolicy,
};
use mixsim::harness::{
    generate_perturbed_pair, random_policy, run_bound_suite, run_seed, ExperimentConfig, ExperimentSetup, RunRecord,
    Strategy,
};
use mixsim::learner::{run_training, TrainingConfig};
use mixsim::linalg::{eigenvalues_by_modulus, matching_distance};
use mixsim::par::{self, Execution};
use mixsim::replay::{
    empirical_rb_expectation, interact_step, sample_batch, snapshot_digest, DrawMode, InitialStates, MixProcessState,
    ProcessRng, RewardOffset,
};
use mixsim::rng::{Purpose, SeededRng};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn pair(seed: u64, index: u64, ns: usize, na: usize, eps: f64) -> (SeededRng, FiniteMdp, FiniteMdp) {
    let mut rng = SeededRng::for_purpose(seed, Purpose::Generate, index);
    let (real, sim) = generate_perturbed_pair(&mut rng, ns, na, eps).expect("generator");
    (rng, real, sim)
}

fn induced(m: &FiniteMdp, pol: &TabularSoftmaxPolicy) -> DMatrix<f64> {
    induced_transition_matrix(m, pol).expect("induced chain").into_matrix()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    (xs[(n - 1) / 2] + xs[n / 2]) / 2.0
}

/// Two-environment critic with a frozen random policy and single-sample
/// batches.
fn critic_convergence() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let results = par::map(Execution::Parallel, seeds, |seed| {
        let (mut rng, real, sim) = pair(seed, 7, 5, 2, 0.1);
        let policy = random_policy(&mut rng, 5, 2, 1.0);
        let features = FeatureMap::tabular_anchored(5, 4).expect("features");
        let envs = EnvironmentSet::new(vec![real, sim], vec![0.5, 0.5], vec![0.5, 0.5]).expect("envs");
        let cfg = TrainingConfig {
            steps: 2_000_000,
            n_batch: 1,
            capacity: 100_000,
            freeze_actor: true,
            log_every: 2_000_000,
            ..Default::default()
        };
        let start = Instant::now();
        let trace = run_training(&envs, &features, &policy, &cfg, seed).expect("training");
        let elapsed = start.elapsed();
        let last = *trace.last().expect("rows");
        let eta_bar = mixed_average_reward(&envs, &policy).expect("eta");
        (last.v_err, (last.eta - eta_bar).abs(), elapsed)
    });
    let ok = results
        .iter()
        .filter(|(v, e, t)| *v <= 0.05 && *e <= 0.01 && *t <= Duration::from_secs(60))
        .count();
    let worst_v = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_e = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let slowest = results.iter().map(|r| r.2).max().unwrap_or_default();
    outcome(
        ok >= 9,
        format!(
            "{ok}/10 seeds within tolerance; worst v_err {worst_v:.4}, worst eta err {worst_e:.4}, slowest seed {slowest:.1?}"
        ),
    )
}

/// Monte-Carlo mean of delta * phi over a streaming replay process against
/// the closed-form operators.
fn rb_expectation() -> Outcome {
    let (q, beta) = (vec![0.4, 0.6], vec![0.3, 0.7]);
    let results = par::map_range(Execution::Parallel, 20, |i| {
        let (mut rng, real, sim) = pair(i as u64, 2, 5, 2, 0.1);
        let policy = random_policy(&mut rng, 5, 2, 1.0);
        let features = FeatureMap::random(&mut rng, 5, 4, 1e-3).expect("features");
        let v = DVector::from_fn(4, |_, _| 2.0 * rng.uniform() - 1.0);
        let envs = EnvironmentSet::new(vec![real, sim], q.clone(), beta.clone()).expect("envs");
        let ops = build_a_b_infinity(&envs, &policy, &features).expect("operators");
        let target = &ops.a_mat * &v + &ops.b_vec;
        let init = InitialStates::Stationary(policy.clone());
        let mut state = MixProcessState::new(&envs, 200, &init, &mut rng).expect("state");
        let mut prng = ProcessRng::new(1000 + i as u64, 2);
        while !state.all_full() {
            interact_step(&mut state, &envs, &policy, &mut prng);
        }
        let est = empirical_rb_expectation(
            &mut state,
            &envs,
            &policy,
            &features,
            &v,
            &RewardOffset::PerEnvironment(ops.eta.clone()),
            1_000_000,
            DrawMode::Streaming { batches: 200 },
            &mut prng,
        )
        .expect("estimate");
        let z: Vec<f64> = est
            .mean
            .iter()
            .zip(est.std_error.iter())
            .zip(target.iter())
            .map(|((m, s), t)| (m - t) / s)
            .collect();
        z
    });
    let z: Vec<f64> = results.into_iter().flatten().collect();
    let max_z = z.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let chi2: f64 = z.iter().map(|x| x * x).sum();
    let p = 1.0 - ChiSquared::new(z.len() as f64).expect("dof").cdf(chi2);
    outcome(
        max_z <= 3.0,
        format!(
            "max |z| {max_z:.2} over {} coordinates; chi2 {chi2:.1} on {} dof (p = {p:.2})",
            z.len(),
            z.len()
        ),
    )
}

/// Closed-form actor direction against the finite-difference gradient minus
/// the bias term, plus the vanishing bias for complete tabular features.
fn actor_identity() -> Outcome {
    let results = par::map_range(Execution::Parallel, 20, |i| {
        let (mut rng, real, sim) = pair(i as u64, 3, 3, 2, 0.1);
        let policy = random_policy(&mut rng, 3, 2, 1.0);
        let features = FeatureMap::random(&mut rng, 3, 2, 1e-3).expect("features");
        let envs = EnvironmentSet::new(vec![real.clone(), sim], vec![0.5, 0.5], vec![0.5, 0.5]).expect("envs");
        let b = actor_direction_and_bias(&envs, &policy, &features, 1e-5).expect("bias");
        let identity = (&b.direction - (&b.grad - &b.xi)).amax();
        let tab = FeatureMap::tabular_anchored(3, 2).expect("features");
        let single = EnvironmentSet::single(real);
        let xi = actor_direction_and_bias(&single, &policy, &tab, 1e-5).expect("bias").xi.amax();
        (identity, xi)
    });
    let id = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let xi = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        id <= 1e-6 && xi <= 1e-8,
        format!("max identity error {id:.2e}; max tabular |xi| {xi:.2e}"),
    )
}

fn closeness_suite() -> Outcome {
    let start = Instant::now();
    let rows = run_bound_suite(5, 2, &[0.01, 0.05, 0.1], 100, 0, Execution::Parallel).expect("suite");
    let elapsed = start.elapsed();
    let n = rows.len();
    let count = |f: &dyn Fn(&mixsim::analysis::ClosenessReport) -> bool| rows.iter().filter(|r| f(&r.report)).count();
    let (p, mu, eta, v) = (
        count(&|r| r.p_holds()),
        count(&|r| r.mu_holds()),
        count(&|r| r.eta_holds()),
        count(&|r| r.v_holds()),
    );
    let ratio = |f: &dyn Fn(&mixsim::analysis::ClosenessReport) -> f64| {
        rows.iter().map(|r| f(&r.report)).fold(0.0, f64::max)
    };
    let worst_mu = ratio(&|r| r.actual_mu_gap / r.b_mu);
    outcome(
        p == n && mu == n && eta == n && v == n && elapsed <= Duration::from_secs(30),
        format!(
            "P {p}/{n}, mu {mu}/{n}, eta {eta}/{n}, v {v}/{n}; worst mu gap/bound {worst_mu:.2e}; {elapsed:.2?}"
        ),
    )
}

fn random_stochastic(rng: &mut SeededRng, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |_, _| -rng.uniform().ln());
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

fn spectral_lemmas() -> Outcome {
    let mut rng = SeededRng::for_purpose(5, Purpose::Aux, 0);
    let mut law = 0.0f64;
    let mut slack = f64::INFINITY;
    let mut identity = 0.0f64;
    for i in 0..100 {
        let n = 2 + i % 5;
        let px = random_stochastic(&mut rng, n);
        let py = random_stochastic(&mut rng, n);
        for p in [0.0, 0.25, 0.5, 1.0] {
            let s = slow_chain(&px, p).expect("slow chain");
            law = law.max(matching_distance(&eigenvalues_by_modulus(&s.matrix), &s.predicted_spectrum));
        }
        slack = slack.min(slow_mix_norm_bound(&px, &py, rng.uniform()).expect("bound").slack);
        let mu1 = stationary_of_matrix(&px).expect("mu1");
        let mu2 = stationary_of_matrix(&py).expect("mu2");
        identity = identity.max(convex_stationarity_identity(&mu1, &mu2, &px, &py, rng.uniform()).expect("identity"));
    }
    let ec = ergodicity_coefficient(&DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5]));
    outcome(
        law <= 1e-9 && slack >= 0.0 && identity < 1e-12 && (ec - 0.4).abs() < 1e-12,
        format!("eigen law {law:.2e}; min norm slack {slack:.3e}; identity {identity:.2e}; E = {ec}"),
    )
}

fn replay_determinism() -> Outcome {
    let results = par::map_range(Execution::Parallel, 1000, |i| {
        let (mut rng, real, sim) = pair(i as u64, 6, 4, 2, 0.1);
        let policy = random_policy(&mut rng, 4, 2, 1.0);
        let envs = EnvironmentSet::new(vec![real, sim], vec![0.3, 0.7], vec![0.6, 0.4]).expect("envs");
        let mut state = MixProcessState::new(&envs, 8 + i % 16, &InitialStates::Uniform, &mut rng).expect("state");
        let mut prng = ProcessRng::new(i as u64, 2);
        for _ in 0..(i % 50) + 10 {
            interact_step(&mut state, &envs, &policy, &mut prng);
        }
        while state.buffers().iter().any(|b| b.is_empty()) {
            interact_step(&mut state, &envs, &policy, &mut prng);
        }
        let before = snapshot_digest(&state);
        let (mut a, mut b) = (state.clone(), state);
        let (mut ra, mut rb) = (prng.clone(), prng);
        interact_step(&mut a, &envs, &policy, &mut ra);
        interact_step(&mut b, &envs, &policy, &mut rb);
        let ba = sample_batch(&mut a, &envs, 4, &mut ra).expect("batch");
        let bb = sample_batch(&mut b, &envs, 4, &mut rb).expect("batch");
        let (da, db) = (snapshot_digest(&a), snapshot_digest(&b));
        (da == db && ba == bb, da != before)
    });
    let equal = results.iter().filter(|r| r.0).count();
    let moved = results.iter().filter(|r| r.1).count();
    outcome(
        equal == 1000 && moved == 1000,
        format!("{equal}/1000 identical successors; {moved}/1000 successors differ from their predecessor"),
    )
}

fn strategy_trend() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/mixing_trend.json");
    let base = ExperimentConfig::load(path).expect("config");
    let setup = ExperimentSetup::from_config(&base).expect("setup");
    let run = |strategy: Strategy| -> Vec<RunRecord> {
        let cfg = base.clone().with_strategy(strategy);
        par::map(Execution::Parallel, cfg.seeds.clone(), |s| run_seed(&cfg, &setup, s).expect("run"))
    };
    let reach = |recs: &[RunRecord]| {
        median(
            recs.iter()
                .map(|r| r.real_to_threshold().map_or(f64::INFINITY, |x| x as f64))
                .collect(),
        )
    };
    let sim_only = run(Strategy::SimOnly);
    let sim_only_reached = sim_only.iter().filter(|r| r.real_to_threshold().is_some()).count();
    let sim_only_final = median(sim_only.iter().map(|r| r.last().trace.eta_real / setup.real_optimum).collect());
    let mixed = reach(&run(Strategy::Mixed));
    let real_only = reach(&run(Strategy::RealOnly));
    let sim_dep = reach(&run(Strategy::SimDependent));
    let sim_only_fails = sim_only_reached * 2 < sim_only.len();
    outcome(
        sim_only_fails && mixed < real_only && sim_dep <= mixed,
        format!(
            "sim_only reached {sim_only_reached}/10 (median final {sim_only_final:.3} of optimum); median real \
             interactions: mixed {mixed}, real_only {real_only}, sim_dependent {sim_dep}"
        ),
    )
}

fn tv_bound() -> Outcome {
    let results = par::map_range(Execution::Parallel, 20, |i| {
        let (mut rng, real, sim) = pair(i as u64, 8, 5, 2, 0.1);
        let policy = random_policy(&mut rng, 5, 2, 1.0);
        let (p1, p2) = (induced(&real, &policy), induced(&sim, &policy));
        let mut init = DVector::zeros(5);
        init[i % 5] = 1.0;
        tv_bound_check(&p1, &p2, 0.3, &init, 50, 200).expect("tv check")
    });
    let held = results.iter().filter(|c| c.holds()).count();
    let slack = results.iter().map(|c| c.min_slack()).fold(f64::INFINITY, f64::min);
    outcome(held == 20, format!("{held}/20 instances; min slack {slack:.3e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("critic convergence", critic_convergence),
        ("replay expectation oracle", rb_expectation),
        ("actor direction identity", actor_identity),
        ("closeness bound suite", closeness_suite),
        ("spectral lemmas", spectral_lemmas),
        ("replay determinism", replay_determinism),
        ("mixing strategy trend", strategy_trend),
        ("TV mixing bound", tv_bound),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        println!(
            "[{}] {} {name}: {} ({:.1?})",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed()
        );
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
