//! Experiment configuration, sim/real pair generation, mixing-strategy
//! scheduling, seeded fan-out, and CSV emission.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::analysis::{closeness_bounds, BoundSuiteRow};
use crate::env_model::{
    average_reward, optimal_average_reward, EnvironmentSet, FeatureMap, FiniteMdp,
    TabularSoftmaxPolicy,
};
use crate::error::{Error, Result};
use crate::learner::{TraceRow, Trainer, TrainingConfig};
use crate::par::{self, Execution};
use crate::rng::{Purpose, SeededRng};

/// Interaction steps counted as one episode.
pub const EPISODE_LENGTH: u64 = 50;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "MIXSIM_OUT_DIR";

/// Share of the real optimum that counts as success.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.9;

/// Uniform floor mixed into generated real rows so every policy is ergodic.
const GENERATOR_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mixed,
    RealOnly,
    SimOnly,
    SimFirst,
    SimDependent,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Mixed,
        Strategy::RealOnly,
        Strategy::SimOnly,
        Strategy::SimFirst,
        Strategy::SimDependent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mixed => "mixed",
            Strategy::RealOnly => "real_only",
            Strategy::SimOnly => "sim_only",
            Strategy::SimFirst => "sim_first",
            Strategy::SimDependent => "sim_dependent",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

/// Where the real and sim MDPs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    Generated {
        seed: u64,
        num_states: usize,
        num_actions: usize,
        eps_s2r: f64,
    },
    Files {
        real: PathBuf,
        sim: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    /// Indicators of every state but `anchor`.
    Tabular { anchor: usize },
    Random { dim: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub features: FeatureSpec,
    /// Real-environment share of collection.
    pub q_r: f64,
    /// Real-buffer share of optimization.
    pub beta_r: f64,
    pub strategy: Strategy,
    /// Sim-side average reward at which the staged strategies switch phase;
    /// defaults to the success level, 90% of the real optimum.
    #[serde(default)]
    pub switch_threshold: Option<f64>,
    pub seeds: Vec<u64>,
    /// Learner settings; `training.steps` is the run length.
    pub training: TrainingConfig,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("q_r", self.q_r), ("beta_r", self.beta_r)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name}={x} must lie in [0, 1]")));
            }
        }
        let forced = match self.strategy {
            Strategy::RealOnly => Some(1.0),
            Strategy::SimOnly => Some(0.0),
            _ => None,
        };
        if let Some(v) = forced {
            if self.q_r != v || self.beta_r != v {
                return Err(Error::Config(format!(
                    "strategy {} requires q_r = beta_r = {v}",
                    self.strategy
                )));
            }
        }
        if self.beta_r > 0.0 && self.q_r == 0.0 {
            return Err(Error::Config("beta_r > 0 needs q_r > 0".into()));
        }
        if self.beta_r < 1.0 && self.q_r == 1.0 {
            return Err(Error::Config("beta_r < 1 needs q_r < 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if let MdpSource::Generated { eps_s2r, num_states, num_actions, .. } = self.mdp {
            if !(0.0..1.0).contains(&eps_s2r) {
                return Err(Error::Config(format!("eps_s2r={eps_s2r} must lie in [0, 1)")));
            }
            if num_states < 2 || num_actions < 1 {
                return Err(Error::Config("need at least 2 states and 1 action".into()));
            }
        }
        if let Some(t) = self.switch_threshold {
            if !t.is_finite() {
                return Err(Error::Config("switch_threshold must be finite".into()));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        self.training.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Replace the strategy, forcing `(q_r, beta_r)` where it dictates them.
    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        match strategy {
            Strategy::RealOnly => (self.q_r, self.beta_r) = (1.0, 1.0),
            Strategy::SimOnly => (self.q_r, self.beta_r) = (0.0, 0.0),
            _ => {}
        }
        self
    }

    /// Output directory: explicit override, then the environment variable,
    /// then the configured value.
    pub fn resolve_out_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }
}

/// Random real MDP and a sim copy whose kernels differ by at most `eps` in
/// every entry. Rewards lie in `[0, 1]` and are shared.
pub fn generate_perturbed_pair(
    rng: &mut SeededRng,
    num_states: usize,
    num_actions: usize,
    eps: f64,
) -> Result<(FiniteMdp, FiniteMdp)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::OutOfRange(format!("eps={eps} must lie in [0, 1)")));
    }
    if num_states < 2 || num_actions == 0 {
        return Err(Error::Dimension("need at least 2 states and 1 action".into()));
    }
    let mut last = None;
    for _ in 0..100 {
        match try_generate(rng, num_states, num_actions, eps) {
            Ok(pair) => return Ok(pair),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Ergodicity(format!(
        "no ergodic pair after 100 attempts: {}",
        last.map_or_else(String::new, |e| e.to_string())
    )))
}

fn try_generate(
    rng: &mut SeededRng,
    ns: usize,
    na: usize,
    eps: f64,
) -> Result<(FiniteMdp, FiniteMdp)> {
    let mut real = Vec::with_capacity(ns * na * ns);
    let mut sim = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let w: Vec<f64> = (0..ns).map(|_| Exp1.sample(rng)).collect();
        let z: f64 = w.iter().sum();
        let row: Vec<f64> = w
            .iter()
            .map(|x| (1.0 - GENERATOR_FLOOR) * x / z + GENERATOR_FLOOR / ns as f64)
            .collect();
        let raw: Vec<f64> = (0..ns).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let mean = raw.iter().sum::<f64>() / ns as f64;
        let d: Vec<f64> = raw.iter().map(|x| x - mean).collect();
        let dmax = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut c = if dmax > 0.0 { eps / dmax } else { 0.0 };
        for (p, x) in row.iter().zip(&d) {
            if *x < 0.0 {
                c = c.min(p / -x);
            }
        }
        let mut perturbed: Vec<f64> = row.iter().zip(&d).map(|(p, x)| (p + c * x).max(0.0)).collect();
        // absorb rounding so the row sums to one exactly enough
        let s: f64 = perturbed.iter().sum();
        let (imax, _) = perturbed
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, x)| if *x > acc.1 { (i, *x) } else { acc });
        perturbed[imax] += 1.0 - s;
        real.extend_from_slice(&row);
        sim.extend(perturbed);
    }
    let reward: Vec<f64> = (0..ns * na).map(|_| rng.uniform()).collect();
    let real = FiniteMdp::new(ns, na, real, reward.clone())?;
    let sim = FiniteMdp::new(ns, na, sim, reward)?;
    let gap = sim.transition_gap(&real)?;
    if gap > eps + 1e-12 {
        return Err(Error::InvalidModel(format!("perturbation {gap} exceeds {eps}")));
    }
    Ok((real, sim))
}

/// `(q_r, beta_r)` for a strategy given whether the switch has fired.
pub fn strategy_mixing(strategy: Strategy, switched: bool, q_r: f64, beta_r: f64) -> (f64, f64) {
    match strategy {
        Strategy::Mixed => (q_r, beta_r),
        Strategy::RealOnly => (1.0, 1.0),
        Strategy::SimOnly => (0.0, 0.0),
        Strategy::SimFirst if switched => (1.0, 1.0),
        Strategy::SimDependent if switched => (q_r, beta_r),
        Strategy::SimFirst | Strategy::SimDependent => (0.0, 0.0),
    }
}

/// Phase tracker for the switching strategies. The switch latches: once the
/// sim-side average reward reaches the threshold the later phase persists.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyScheduler {
    pub strategy: Strategy,
    pub q_r: f64,
    pub beta_r: f64,
    pub threshold: f64,
    switched: bool,
}

impl StrategyScheduler {
    pub fn new(strategy: Strategy, q_r: f64, beta_r: f64, threshold: f64) -> Self {
        Self {
            strategy,
            q_r,
            beta_r,
            threshold,
            switched: false,
        }
    }

    pub fn switched(&self) -> bool {
        self.switched
    }

    pub fn current(&self) -> (f64, f64) {
        strategy_mixing(self.strategy, self.switched, self.q_r, self.beta_r)
    }

    /// Feed the latest sim-side performance; returns the mixing for the next
    /// phase.
    pub fn update(&mut self, sim_perf: f64) -> (f64, f64) {
        if matches!(self.strategy, Strategy::SimFirst | Strategy::SimDependent) && sim_perf >= self.threshold {
            self.switched = true;
        }
        self.current()
    }
}

/// Two-environment mixing vectors with the real MDP first.
pub fn mixing_vectors(q_r: f64, beta_r: f64) -> (Vec<f64>, Vec<f64>) {
    (vec![q_r, 1.0 - q_r], vec![beta_r, 1.0 - beta_r])
}

/// Real and sim MDPs described by a config.
pub fn build_pair(source: &MdpSource) -> Result<(FiniteMdp, FiniteMdp)> {
    match source {
        MdpSource::Generated { seed, num_states, num_actions, eps_s2r } => {
            let mut rng = SeededRng::for_purpose(*seed, Purpose::Generate, 0);
            generate_perturbed_pair(&mut rng, *num_states, *num_actions, *eps_s2r)
        }
        MdpSource::Files { real, sim } => {
            let r = FiniteMdp::load(real).map_err(|e| Error::Config(format!("{}: {e}", real.display())))?;
            let s = FiniteMdp::load(sim).map_err(|e| Error::Config(format!("{}: {e}", sim.display())))?;
            r.check_same_shape(&s).map_err(|e| Error::Config(e.to_string()))?;
            Ok((r, s))
        }
    }
}

pub fn build_features(spec: &FeatureSpec, num_states: usize) -> Result<FeatureMap> {
    match spec {
        FeatureSpec::Tabular { anchor } => FeatureMap::tabular_anchored(num_states, *anchor),
        FeatureSpec::Random { dim, seed } => {
            let mut rng = SeededRng::for_purpose(*seed, Purpose::Generate, 1);
            FeatureMap::random(&mut rng, num_states, *dim, 1e-3)
        }
    }
    .map_err(|e| Error::Config(e.to_string()))
}

/// Trace row plus the harness's view of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    #[serde(flatten)]
    pub trace: TraceRow,
    /// Exact average reward of the current policy in the sim MDP.
    pub eta_sim: f64,
    pub q_r: f64,
    pub beta_r: f64,
}

impl RunRow {
    pub fn total_interactions(&self) -> u64 {
        self.trace.real_interactions + self.trace.sim_interactions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub strategy: Strategy,
    pub threshold: f64,
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    /// Real interactions at the start of the final streak of logged rows
    /// whose real-side average reward stays at or above the threshold until
    /// the end of the run. Passing the threshold only transiently does not
    /// count as reaching it.
    pub fn real_to_threshold(&self) -> Option<u64> {
        let mut start = None;
        for r in &self.rows {
            if r.trace.eta_real >= self.threshold {
                start.get_or_insert(r.trace.real_interactions);
            } else {
                start = None;
            }
        }
        start
    }

    /// Real interactions at the first logged crossing of the threshold.
    pub fn real_to_first_crossing(&self) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.trace.eta_real >= self.threshold)
            .map(|r| r.trace.real_interactions)
    }

    pub fn last(&self) -> &RunRow {
        self.rows.last().expect("records hold at least the initial row")
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "tau",
            "eta",
            "eta_analytic",
            "v_err",
            "grad_norm",
            "real_interactions",
            "sim_interactions",
            "eta_real",
            "eta_sim",
            "q_r",
            "beta_r",
        ])?;
        for r in &self.rows {
            let t = &r.trace;
            w.write_record([
                t.tau.to_string(),
                t.eta.to_string(),
                t.eta_analytic.to_string(),
                t.v_err.to_string(),
                t.grad_norm.to_string(),
                t.real_interactions.to_string(),
                t.sim_interactions.to_string(),
                t.eta_real.to_string(),
                r.eta_sim.to_string(),
                r.q_r.to_string(),
                r.beta_r.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inputs shared by every seed of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub real: FiniteMdp,
    pub sim: FiniteMdp,
    pub features: FeatureMap,
    /// Real-side level a run must reach: a fixed share of the real optimum.
    pub target: f64,
    /// Sim-side level that triggers the staged strategies' switch.
    pub switch_threshold: f64,
    pub real_optimum: f64,
}

impl ExperimentSetup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (real, sim) = build_pair(&cfg.mdp)?;
        let features = build_features(&cfg.features, real.num_states())?;
        let (real_optimum, _) = optimal_average_reward(&real)?;
        let target = DEFAULT_THRESHOLD_FRACTION * real_optimum;
        let switch_threshold = cfg.switch_threshold.unwrap_or(target);
        Ok(Self {
            real,
            sim,
            features,
            target,
            switch_threshold,
            real_optimum,
        })
    }
}

/// One seed of an experiment.
pub fn run_seed(cfg: &ExperimentConfig, setup: &ExperimentSetup, seed: u64) -> Result<RunRecord> {
    let mut sched = StrategyScheduler::new(cfg.strategy, cfg.q_r, cfg.beta_r, setup.switch_threshold);
    let (q, b) = sched.current();
    let (collect, optimize) = mixing_vectors(q, b);
    let envs = EnvironmentSet::new(vec![setup.real.clone(), setup.sim.clone()], collect, optimize)?;
    let policy = TabularSoftmaxPolicy::with_temperature(
        setup.real.num_states(),
        setup.real.num_actions(),
        vec![0.0; setup.real.num_states() * setup.real.num_actions()],
        cfg.temperature,
    )?;
    let mut training = cfg.training.clone();
    training.analytic_trace = true;
    let mut trainer = Trainer::new(envs, setup.features.clone(), policy, training, seed)?;
    trainer.warm_up()?;
    let first = trainer.log_row()?;
    let mut rows = vec![RunRow {
        trace: first,
        eta_sim: average_reward(&setup.sim, trainer.policy())?,
        q_r: q,
        beta_r: b,
    }];
    let log_every = cfg.training.log_every;
    for _ in 0..cfg.training.steps {
        trainer.step()?;
        if trainer.tau() % log_every == 0 {
            let row = *trainer.trace().last().expect("step logged a row");
            let eta_sim = average_reward(&setup.sim, trainer.policy())?;
            let current = sched.current();
            rows.push(RunRow {
                trace: row,
                eta_sim,
                q_r: current.0,
                beta_r: current.1,
            });
            let next = sched.update(eta_sim);
            if next != current {
                let (collect, optimize) = mixing_vectors(next.0, next.1);
                trainer.set_mixing(collect, optimize)?;
            }
        }
    }
    Ok(RunRecord {
        seed,
        strategy: cfg.strategy,
        threshold: setup.target,
        rows,
    })
}

/// Aggregate of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub setup: ExperimentSetup,
    pub records: Vec<RunRecord>,
    pub out_dir: PathBuf,
}

/// Run every seed (in parallel when enabled), write per-run CSVs, the
/// summary, and the plot data under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, exec: Execution) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let setup = ExperimentSetup::from_config(cfg)?;
    let records = par::try_map_range(exec, cfg.seeds.len(), |i| run_seed(cfg, &setup, cfg.seeds[i]))?;
    fs::create_dir_all(out_dir)?;
    for r in &records {
        let f = fs::File::create(out_dir.join(format!("run_{}_seed{}.csv", r.strategy, r.seed)))?;
        r.write_csv(f)?;
    }
    write_summary(&records, fs::File::create(out_dir.join("summary.csv"))?)?;
    emit_plot_data(&records, out_dir)?;
    Ok(ExperimentOutput {
        setup,
        records,
        out_dir: out_dir.to_path_buf(),
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fmt_opt(x: Option<u64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// One row per seed plus a final `mean` row; the `_std` columns are zero on
/// per-seed rows and hold the population standard deviation on the last.
pub fn write_summary<W: std::io::Write>(records: &[RunRecord], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Precondition("no records to summarize".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed",
        "strategy",
        "final_eta_real",
        "final_eta_real_std",
        "real_interactions",
        "real_interactions_std",
        "sim_interactions",
        "sim_interactions_std",
        "real_episodes",
        "sim_episodes",
        "real_to_threshold",
        "reached",
    ])?;
    for r in records {
        let last = r.last();
        w.write_record([
            r.seed.to_string(),
            r.strategy.to_string(),
            last.trace.eta_real.to_string(),
            "0".into(),
            last.trace.real_interactions.to_string(),
            "0".into(),
            last.trace.sim_interactions.to_string(),
            "0".into(),
            (last.trace.real_interactions / EPISODE_LENGTH).to_string(),
            (last.trace.sim_interactions / EPISODE_LENGTH).to_string(),
            fmt_opt(r.real_to_threshold()),
            r.real_to_threshold().is_some().to_string(),
        ])?;
    }
    let col = |f: &dyn Fn(&RunRecord) -> f64| mean_std(&records.iter().map(f).collect::<Vec<_>>());
    let eta = col(&|r| r.last().trace.eta_real);
    let real = col(&|r| r.last().trace.real_interactions as f64);
    let sim = col(&|r| r.last().trace.sim_interactions as f64);
    let reached: Vec<u64> = records.iter().filter_map(RunRecord::real_to_threshold).collect();
    let reach_mean = if reached.is_empty() {
        String::new()
    } else {
        (reached.iter().sum::<u64>() as f64 / reached.len() as f64).to_string()
    };
    w.write_record([
        "mean".to_string(),
        records[0].strategy.to_string(),
        eta.0.to_string(),
        eta.1.to_string(),
        real.0.to_string(),
        real.1.to_string(),
        sim.0.to_string(),
        sim.1.to_string(),
        (real.0 / EPISODE_LENGTH as f64).to_string(),
        (sim.0 / EPISODE_LENGTH as f64).to_string(),
        reach_mean,
        format!("{}/{}", reached.len(), records.len()),
    ])?;
    w.flush()?;
    Ok(())
}

/// Plot data for the three panels, one row per logged step, each column as
/// mean and population std across records:
/// `perf_vs_steps.csv`, `perf_vs_real.csv`, `real_vs_sim.csv`.
pub fn emit_plot_data(records: &[RunRecord], out_dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Precondition("no records to plot".into()));
    }
    let len = records[0].rows.len();
    if records.iter().any(|r| r.rows.len() != len) {
        return Err(Error::Precondition("records have different trace lengths".into()));
    }
    let stat = |i: usize, f: &dyn Fn(&RunRow) -> f64| {
        mean_std(&records.iter().map(|r| f(&r.rows[i])).collect::<Vec<_>>())
    };
    let mut steps = csv::Writer::from_path(out_dir.join("perf_vs_steps.csv"))?;
    let mut real = csv::Writer::from_path(out_dir.join("perf_vs_real.csv"))?;
    let mut rs = csv::Writer::from_path(out_dir.join("real_vs_sim.csv"))?;
    steps.write_record(["tau", "eta_real_mean", "eta_real_std"])?;
    real.write_record([
        "real_interactions_mean",
        "real_interactions_std",
        "real_episodes_mean",
        "eta_real_mean",
        "eta_real_std",
    ])?;
    rs.write_record([
        "sim_episodes_mean",
        "sim_episodes_std",
        "real_episodes_mean",
        "real_episodes_std",
    ])?;
    let ep = EPISODE_LENGTH as f64;
    for i in 0..len {
        let tau = records[0].rows[i].trace.tau;
        let eta = stat(i, &|r| r.trace.eta_real);
        let ri = stat(i, &|r| r.trace.real_interactions as f64);
        let si = stat(i, &|r| r.trace.sim_interactions as f64);
        steps.write_record([tau.to_string(), eta.0.to_string(), eta.1.to_string()])?;
        real.write_record([
            ri.0.to_string(),
            ri.1.to_string(),
            (ri.0 / ep).to_string(),
            eta.0.to_string(),
            eta.1.to_string(),
        ])?;
        rs.write_record([
            (si.0 / ep).to_string(),
            (si.1 / ep).to_string(),
            (ri.0 / ep).to_string(),
            (ri.1 / ep).to_string(),
        ])?;
    }
    steps.flush()?;
    real.flush()?;
    rs.flush()?;
    Ok(())
}

/// Random softmax parameters with entries uniform in `[-scale, scale]`.
pub fn random_policy(rng: &mut SeededRng, num_states: usize, num_actions: usize, scale: f64) -> TabularSoftmaxPolicy {
    let theta = (0..num_states * num_actions)
        .map(|_| scale * (2.0 * rng.uniform() - 1.0))
        .collect();
    TabularSoftmaxPolicy::from_theta(num_states, num_actions, theta).expect("finite parameters")
}

/// Closeness-bound trials: for every `eps` and trial index a fresh pair and
/// a random policy, seeded by `base_seed + trial`.
pub fn run_bound_suite(
    num_states: usize,
    num_actions: usize,
    eps_list: &[f64],
    trials: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<Vec<BoundSuiteRow>> {
    let jobs: Vec<(f64, u64)> = eps_list
        .iter()
        .flat_map(|&e| (0..trials as u64).map(move |t| (e, base_seed + t)))
        .collect();
    let rows = par::map(exec, jobs, |(eps, seed)| {
        let mut rng = SeededRng::for_purpose(seed, Purpose::Generate, (eps * 1e6).round() as u64);
        let (real, sim) = generate_perturbed_pair(&mut rng, num_states, num_actions, eps)?;
        let policy = random_policy(&mut rng, num_states, num_actions, 2.0);
        let report = closeness_bounds(&sim, &real, &policy)?;
        Ok::<_, Error>(BoundSuiteRow {
            seed,
            eps,
            pass: report.all_hold(),
            report,
        })
    });
    rows.into_iter().collect()
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Quick invariant sweep over random desk-scale instances: generator bounds,
/// stationary laws, critic fixed points, the actor-direction identity,
/// spectral lemmas, the TV bound, and replay determinism.
pub fn validation_suite(seed: u64, trials: usize, exec: Execution) -> Result<Vec<CheckResult>> {
    use crate::analysis::{
        actor_direction_and_bias, build_a_b_infinity, convex_stationarity_identity,
        critic_fixed_point, slow_chain, slow_mix_norm_bound, tv_bound_check,
    };
    use crate::env_model::{induced_transition_matrix, stationary_distribution};
    use crate::linalg::{eigenvalues_by_modulus, matching_distance};
    use crate::replay::{interact_step, snapshot_digest, InitialStates, MixProcessState, ProcessRng};
    use nalgebra::DVector;

    struct Trial {
        gen_gap: f64,
        stationary_residual: f64,
        fixed_point_residual: f64,
        identity_error: f64,
        slow_law: f64,
        norm_slack: f64,
        convex_residual: f64,
        tv_ok: bool,
        digest_ok: bool,
    }

    let trials = par::try_map_range(exec, trials, |i| -> Result<Trial> {
        let s = seed.wrapping_add(i as u64);
        let mut rng = SeededRng::for_purpose(s, Purpose::Aux, 0);
        let eps = 0.05 + 0.1 * rng.uniform();
        let (real, sim) = generate_perturbed_pair(&mut rng, 4, 2, eps)?;
        let gen_gap = sim.transition_gap(&real)? - eps;
        let pol = random_policy(&mut rng, 4, 2, 1.5);
        let p1 = induced_transition_matrix(&real, &pol)?.into_matrix();
        let p2 = induced_transition_matrix(&sim, &pol)?.into_matrix();
        let mu1 = crate::env_model::stationary_of_matrix(&p1)?;
        let mu2 = stationary_distribution(&induced_transition_matrix(&sim, &pol)?)?;
        let stationary_residual = (p1.transpose() * &mu1 - &mu1).amax();
        let envs = EnvironmentSet::new(vec![real.clone(), sim.clone()], vec![0.5, 0.5], vec![0.4, 0.6])?;
        let features = FeatureMap::random(&mut rng, 4, 2, 1e-3)?;
        let ops = build_a_b_infinity(&envs, &pol, &features)?;
        let fixed_point_residual = critic_fixed_point(&ops.a_mat, &ops.b_vec)?.residual;
        let bias = actor_direction_and_bias(&envs, &pol, &features, 1e-5)?;
        let identity_error = (&bias.direction - (&bias.grad - &bias.xi)).amax();
        let p = rng.uniform();
        let slow = slow_chain(&p1, p)?;
        let slow_law = matching_distance(&eigenvalues_by_modulus(&slow.matrix), &slow.predicted_spectrum);
        let norm_slack = slow_mix_norm_bound(&p1, &p2, p)?.slack;
        let convex_residual = convex_stationarity_identity(&mu1, &mu2, &p1, &p2, rng.uniform())?;
        let init = DVector::from_element(4, 0.25);
        let tv_ok = tv_bound_check(&p1, &p2, rng.uniform(), &init, 50, 200)?.holds();
        let mut state = MixProcessState::new(&envs, 16, &InitialStates::Uniform, &mut rng)?;
        let mut prng = ProcessRng::new(s, 2);
        for _ in 0..40 {
            interact_step(&mut state, &envs, &pol, &mut prng);
        }
        let (mut a, mut b) = (state.clone(), state);
        let (mut ra, mut rb) = (prng.clone(), prng);
        interact_step(&mut a, &envs, &pol, &mut ra);
        interact_step(&mut b, &envs, &pol, &mut rb);
        let digest_ok = snapshot_digest(&a) == snapshot_digest(&b);
        Ok(Trial {
            gen_gap,
            stationary_residual,
            fixed_point_residual,
            identity_error,
            slow_law,
            norm_slack,
            convex_residual,
            tv_ok,
            digest_ok,
        })
    })?;
    let max = |f: &dyn Fn(&Trial) -> f64| trials.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let min = |f: &dyn Fn(&Trial) -> f64| trials.iter().map(f).fold(f64::INFINITY, f64::min);
    let n = trials.len();
    let gen = max(&|t| t.gen_gap);
    let stat = max(&|t| t.stationary_residual);
    let fp = max(&|t| t.fixed_point_residual);
    let id = max(&|t| t.identity_error);
    let law = max(&|t| t.slow_law);
    let slack = min(&|t| t.norm_slack);
    let conv = max(&|t| t.convex_residual);
    let tv = trials.iter().filter(|t| t.tv_ok).count();
    let dig = trials.iter().filter(|t| t.digest_ok).count();
    Ok(vec![
        check("generator elementwise bound", gen <= 1e-12, format!("max excess {gen:.3e}")),
        check("stationary residual", stat <= 1e-10, format!("max {stat:.3e}")),
        check("critic fixed point residual", fp <= 1e-10, format!("max {fp:.3e}")),
        check("actor direction identity", id <= 1e-6, format!("max error {id:.3e}")),
        check("slow chain eigenvalue law", law <= 1e-9, format!("max distance {law:.3e}")),
        check("slow mix norm bound", slack >= 0.0, format!("min slack {slack:.3e}")),
        check("convex stationarity identity", conv < 1e-12, format!("max residual {conv:.3e}")),
        check("TV mixing bound", tv == n, format!("{tv}/{n} instances")),
        check("replay determinism", dig == n, format!("{dig}/{n} instances")),
    ])
}
