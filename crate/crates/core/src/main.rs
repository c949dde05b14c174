use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mixsim::analysis::{
    actor_direction_and_bias, build_a_b_infinity, closeness_bounds, critic_fixed_point, spectral_report,
    write_bound_suite_csv, ClosenessReport,
};
use mixsim::env_model::{
    average_reward, induced_transition_matrix, mixed_average_reward, optimal_average_reward, EnvironmentSet, TabularSoftmaxPolicy,
};
use mixsim::harness::{
    build_features, build_pair, mixing_vectors, run_bound_suite, run_experiment, validation_suite, ExperimentConfig,
    Strategy,
};
use mixsim::par::Execution;
use mixsim::{Error, Result};

#[derive(Parser)]
#[command(name = "mixsim", version, about = "Mixed sim/real replay actor-critic laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over the configured seeds and write traces, summary, and plot data.
    Run(CommonArgs),
    /// Closeness-bound suite on generated pairs, plus spectra for a configured pair.
    Bounds(BoundsArgs),
    /// Print analytic quantities for the configured pair under the initial policy.
    Oracle(CommonArgs),
    /// Check a config (when given) and sweep the core invariants.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma list (`0,3,7`) or half-open range (`0..10`).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Run seeds one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trial seeds; the default is `0..100`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value_t = 5)]
    states: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.05, 0.1])]
    eps: Vec<f64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long)]
    sequential: bool,
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn load_config(path: &PathBuf, seeds: Option<&str>, strategy: Option<Strategy>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(s) = strategy {
        cfg = cfg.with_strategy(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: CommonArgs) -> Result<bool> {
    let cfg = load_config(&args.config, args.seeds.as_deref(), args.strategy)?;
    let out = cfg.resolve_out_dir(args.out.as_deref());
    let output = run_experiment(&cfg, &out, exec(args.sequential))?;
    let reached = output.records.iter().filter(|r| r.real_to_threshold().is_some()).count();
    println!(
        "{} seeds, strategy {}, reached {:.4} on {reached}/{}; output in {}",
        output.records.len(),
        cfg.strategy,
        output.setup.target,
        output.records.len(),
        out.display()
    );
    Ok(true)
}

#[derive(Serialize)]
struct PairSpectra {
    closeness: ClosenessReport,
    real_lambda2: f64,
    real_gap: f64,
    real_ec: f64,
    sim_lambda2: f64,
    sim_gap: f64,
    sim_ec: f64,
}

fn cmd_bounds(args: BoundsArgs) -> Result<bool> {
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None => (0..100).collect(),
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    let mut rows = Vec::new();
    for seed in seeds {
        rows.extend(run_bound_suite(
            args.states,
            args.actions,
            &args.eps,
            1,
            seed,
            exec(args.sequential),
        )?);
    }
    write_bound_suite_csv(&rows, fs::File::create(out.join("bounds.csv"))?)?;
    let held = rows.iter().filter(|r| r.pass).count();
    println!("closeness bounds held on {held}/{} trials", rows.len());

    if let Some(path) = &args.config {
        let cfg = load_config(path, None, None)?;
        let (real, sim) = build_pair(&cfg.mdp)?;
        let policy = initial_policy(&cfg, &real)?;
        let pr = induced_transition_matrix(&real, &policy)?.into_matrix();
        let ps = induced_transition_matrix(&sim, &policy)?.into_matrix();
        let (r, s) = (spectral_report(&pr)?, spectral_report(&ps)?);
        let spectra = PairSpectra {
            closeness: closeness_bounds(&sim, &real, &policy)?,
            real_lambda2: r.lambda2,
            real_gap: r.gap,
            real_ec: r.ec,
            sim_lambda2: s.lambda2,
            sim_gap: s.gap,
            sim_ec: s.ec,
        };
        fs::write(out.join("spectra.json"), serde_json::to_string_pretty(&spectra)?)?;
        println!("pair spectra written to {}", out.join("spectra.json").display());
    }
    Ok(held == rows.len())
}

fn initial_policy(cfg: &ExperimentConfig, real: &mixsim::env_model::FiniteMdp) -> Result<TabularSoftmaxPolicy> {
    let (ns, na) = (real.num_states(), real.num_actions());
    TabularSoftmaxPolicy::with_temperature(ns, na, vec![0.0; ns * na], cfg.temperature)
}

#[derive(Serialize)]
struct OracleReport {
    strategy: Strategy,
    real_optimum: f64,
    real_optimal_actions: Vec<usize>,
    sim_optimum: f64,
    eta_real: f64,
    eta_sim: f64,
    eta_mixed: f64,
    eta_per_environment: Vec<f64>,
    v_pi: Vec<f64>,
    fixed_point_residual: f64,
    gradient: Vec<f64>,
    actor_direction: Vec<f64>,
    actor_bias: Vec<f64>,
    closeness: ClosenessReport,
}

fn cmd_oracle(args: CommonArgs) -> Result<bool> {
    let cfg = load_config(&args.config, args.seeds.as_deref(), args.strategy)?;
    let (real, sim) = build_pair(&cfg.mdp)?;
    let features = build_features(&cfg.features, real.num_states())?;
    let policy = initial_policy(&cfg, &real)?;
    let (q, b) = mixing_vectors(cfg.q_r, cfg.beta_r);
    let envs = EnvironmentSet::new(vec![real.clone(), sim.clone()], q, b)?;
    let ops = build_a_b_infinity(&envs, &policy, &features)?;
    let fp = critic_fixed_point(&ops.a_mat, &ops.b_vec)?;
    let bias = actor_direction_and_bias(&envs, &policy, &features, 1e-5)?;
    let (real_optimum, real_optimal_actions) = optimal_average_reward(&real)?;
    let report = OracleReport {
        strategy: cfg.strategy,
        real_optimum,
        real_optimal_actions,
        sim_optimum: optimal_average_reward(&sim)?.0,
        eta_real: average_reward(&real, &policy)?,
        eta_sim: average_reward(&sim, &policy)?,
        eta_mixed: mixed_average_reward(&envs, &policy)?,
        eta_per_environment: ops.eta.clone(),
        v_pi: fp.v_pi.iter().copied().collect(),
        fixed_point_residual: fp.residual,
        gradient: bias.grad.iter().copied().collect(),
        actor_direction: bias.direction.iter().copied().collect(),
        actor_bias: bias.xi.iter().copied().collect(),
        closeness: closeness_bounds(&sim, &real, &policy)?,
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("oracle.json"), &text)?;
    }
    println!("{text}");
    Ok(true)
}

fn cmd_validate(args: ValidateArgs) -> Result<bool> {
    if let Some(path) = &args.config {
        let cfg = load_config(path, None, args.strategy)?;
        build_pair(&cfg.mdp)?;
        println!("config ok: {}", path.display());
    }
    let checks = validation_suite(args.seed, args.trials, exec(args.sequential))?;
    let mut ok = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(2),
                Error::Divergence { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
