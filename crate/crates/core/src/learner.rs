//! Two-timescale linear actor-critic over replay buffers: TD error,
//! average-reward tracker, critic step, projected actor step, and the
//! training loop that drives them.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{build_a_b_infinity, critic_fixed_point};
use crate::env_model::{
    average_reward, exact_mixed_gradient, mixed_average_reward, EnvironmentSet, FeatureMap,
    TabularSoftmaxPolicy,
};
use crate::error::{Error, Result};
use crate::replay::{
    interact_step_table, probability_table, sample_batch, theta_digest, InitialStates,
    MixProcessState, ProcessRng, Transition,
};
use crate::rng::{Purpose, SeededRng};

/// Central-difference step for analytic gradients in trace rows.
const GRAD_STEP: f64 = 1e-5;

/// Polynomial step sizes `alpha_tau = c / (tau + 1)^p`. The average-reward
/// tracker shares the critic exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSizeSchedule {
    pub c_eta: f64,
    pub c_v: f64,
    pub c_theta: f64,
    pub p_v: f64,
    pub p_theta: f64,
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        Self {
            c_eta: 1.0,
            c_v: 1.0,
            c_theta: 1.0,
            p_v: 0.6,
            p_theta: 0.9,
        }
    }
}

impl StepSizeSchedule {
    /// Positive constants and `0.5 < p_v < p_theta <= 1`, which gives
    /// divergent sums, summable squares, and a vanishing actor/critic ratio.
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("c_eta", self.c_eta), ("c_v", self.c_v), ("c_theta", self.c_theta)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {c}")));
            }
        }
        if !(0.5 < self.p_v && self.p_v < self.p_theta && self.p_theta <= 1.0) {
            return Err(Error::Config(format!(
                "need 0.5 < p_v < p_theta <= 1, got p_v={} p_theta={}",
                self.p_v, self.p_theta
            )));
        }
        Ok(())
    }

    pub fn eta(&self, tau: u64) -> f64 {
        self.c_eta / (tau as f64 + 1.0).powf(self.p_v)
    }

    pub fn critic(&self, tau: u64) -> f64 {
        self.c_v / (tau as f64 + 1.0).powf(self.p_v)
    }

    pub fn actor(&self, tau: u64) -> f64 {
        self.c_theta / (tau as f64 + 1.0).powf(self.p_theta)
    }
}

/// Per-coordinate clamp to `[-radius, radius]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBox {
    pub radius: f64,
}

impl Default for ProjectionBox {
    fn default() -> Self {
        Self { radius: 100.0 }
    }
}

impl ProjectionBox {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Config(format!("projection radius {radius} must be positive")));
        }
        Ok(Self { radius })
    }

    pub fn project(&self, theta: &mut [f64]) {
        for x in theta {
            *x = x.clamp(-self.radius, self.radius);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().all(|x| x.abs() <= self.radius)
    }
}

/// Sign of the actor step. `Descend` is `theta - alpha * delta * psi`;
/// `Ascend` flips it to climb the average reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateDirection {
    #[default]
    Descend,
    Ascend,
}

impl UpdateDirection {
    fn sign(self) -> f64 {
        match self {
            UpdateDirection::Descend => -1.0,
            UpdateDirection::Ascend => 1.0,
        }
    }
}

/// Iterates of the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub eta: f64,
    pub v: DVector<f64>,
    pub theta: Vec<f64>,
    /// Optimization steps taken.
    pub tau: u64,
}

impl LearnerState {
    pub fn is_finite(&self) -> bool {
        self.eta.is_finite() && self.v.iter().all(|x| x.is_finite()) && self.theta.iter().all(|x| x.is_finite())
    }
}

/// `delta = r - eta + phi(s')^T v - phi(s)^T v`.
pub fn td_error(t: &Transition, eta: f64, v: &DVector<f64>, features: &FeatureMap) -> f64 {
    t.r - eta + features.value(t.s_next, v) - features.value(t.s, v)
}

fn check_batch(batch: &[Transition]) {
    assert!(!batch.is_empty(), "batch must be nonempty");
}

/// `eta + alpha_eta * (mean r - eta)`.
pub fn update_average_reward(eta: f64, batch: &[Transition], schedule: &StepSizeSchedule, tau: u64) -> f64 {
    check_batch(batch);
    let mean_r = batch.iter().map(|t| t.r).sum::<f64>() / batch.len() as f64;
    eta + schedule.eta(tau) * (mean_r - eta)
}

/// `v + alpha_v * mean(delta * phi(s))`, with `delta` evaluated at the
/// incoming `eta` and `v`.
pub fn update_critic(
    v: &DVector<f64>,
    batch: &[Transition],
    eta: f64,
    schedule: &StepSizeSchedule,
    tau: u64,
    features: &FeatureMap,
) -> DVector<f64> {
    check_batch(batch);
    let deltas: Vec<f64> = batch.iter().map(|t| td_error(t, eta, v, features)).collect();
    critic_step(v, batch, &deltas, schedule.critic(tau), features)
}

fn critic_step(
    v: &DVector<f64>,
    batch: &[Transition],
    deltas: &[f64],
    alpha: f64,
    features: &FeatureMap,
) -> DVector<f64> {
    let phi = features.matrix();
    let scale = alpha / batch.len() as f64;
    let mut out = v.clone();
    for (t, d) in batch.iter().zip(deltas) {
        for i in 0..out.len() {
            out[i] += scale * d * phi[(t.s, i)];
        }
    }
    out
}

/// `Gamma(theta -/+ alpha_theta * mean(delta * psi(s,a)))` with `psi` taken
/// at `policy` (the pre-update parameters).
#[allow(clippy::too_many_arguments)]
pub fn update_actor(
    theta: &[f64],
    batch: &[Transition],
    deltas: &[f64],
    schedule: &StepSizeSchedule,
    tau: u64,
    policy: &TabularSoftmaxPolicy,
    projection: &ProjectionBox,
    direction: UpdateDirection,
) -> Vec<f64> {
    check_batch(batch);
    assert_eq!(batch.len(), deltas.len(), "one TD error per transition");
    let mut g = DVector::zeros(theta.len());
    for (t, d) in batch.iter().zip(deltas) {
        policy.add_score(t.s, t.a, *d, &mut g);
    }
    let step = direction.sign() * schedule.actor(tau) / batch.len() as f64;
    let mut out: Vec<f64> = theta.iter().zip(g.iter()).map(|(x, gi)| x + step * gi).collect();
    projection.project(&mut out);
    out
}

/// How environments pick their first state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialStateMode {
    #[default]
    Uniform,
    /// Stationary law of the initial policy.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Optimization steps (after warm-up).
    pub steps: u64,
    pub n_batch: usize,
    /// Replay capacity `N` per environment.
    pub capacity: usize,
    /// Minimum buffer fill before optimizing.
    pub warmup_min: usize,
    pub schedule: StepSizeSchedule,
    pub projection: ProjectionBox,
    pub direction: UpdateDirection,
    /// Keep the policy fixed (critic-only runs).
    pub freeze_actor: bool,
    /// Trace row period in optimization steps.
    pub log_every: u64,
    pub initial_states: InitialStateMode,
    /// Compute exact `eta_bar`, critic error and gradient norm in trace rows.
    pub analytic_trace: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            n_batch: 32,
            capacity: 1000,
            warmup_min: 100,
            schedule: StepSizeSchedule::default(),
            projection: ProjectionBox::default(),
            direction: UpdateDirection::Descend,
            freeze_actor: false,
            log_every: 1000,
            initial_states: InitialStateMode::Uniform,
            analytic_trace: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        ProjectionBox::new(self.projection.radius)?;
        if self.n_batch == 0 {
            return Err(Error::Config("n_batch must be positive".into()));
        }
        if self.capacity == 0 {
            return Err(Error::Config("capacity must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }

    /// Fill level each optimized buffer must reach before updates start.
    pub fn warmup_target(&self) -> usize {
        self.n_batch.max(self.warmup_min).min(self.capacity)
    }
}

/// One logged snapshot of the learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tau: u64,
    pub eta: f64,
    /// Exact mixed average reward of the current policy.
    pub eta_analytic: f64,
    /// `||v - v_pi|| / max(||v_pi||, 1)` against the exact critic fixed point.
    pub v_err: f64,
    /// `||grad eta_bar||` at the current policy.
    pub grad_norm: f64,
    pub real_interactions: u64,
    pub sim_interactions: u64,
    /// Exact average reward of the current policy in environment 0.
    pub eta_real: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV with columns
    /// `tau,eta,eta_analytic,v_err,grad_norm,real_interactions,sim_interactions`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "tau",
            "eta",
            "eta_analytic",
            "v_err",
            "grad_norm",
            "real_interactions",
            "sim_interactions",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.tau.to_string(),
                r.eta.to_string(),
                r.eta_analytic.to_string(),
                r.v_err.to_string(),
                r.grad_norm.to_string(),
                r.real_interactions.to_string(),
                r.sim_interactions.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Algorithm driver. Environment 0 counts as real, the rest as sim.
#[derive(Debug, Clone)]
pub struct Trainer {
    envs: EnvironmentSet,
    features: FeatureMap,
    policy: TabularSoftmaxPolicy,
    table: Vec<f64>,
    theta_hash: u64,
    config: TrainingConfig,
    learner: LearnerState,
    process: MixProcessState,
    rng: ProcessRng,
    trace: Trace,
}

impl Trainer {
    pub fn new(
        envs: EnvironmentSet,
        features: FeatureMap,
        policy: TabularSoftmaxPolicy,
        config: TrainingConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if features.num_states() != envs.num_states() {
            return Err(Error::Dimension("feature map and MDPs disagree on |S|".into()));
        }
        if policy.num_states() != envs.num_states() || policy.num_actions() != envs.num_actions() {
            return Err(Error::Dimension("policy and MDPs disagree on shape".into()));
        }
        check_mixing(envs.collect(), envs.optimize())?;
        let mut init_rng = SeededRng::for_purpose(seed, Purpose::Init, 0);
        let init = match config.initial_states {
            InitialStateMode::Uniform => InitialStates::Uniform,
            InitialStateMode::Stationary => InitialStates::Stationary(policy.clone()),
        };
        let process = MixProcessState::new(&envs, config.capacity, &init, &mut init_rng)?;
        let learner = LearnerState {
            eta: 0.0,
            v: DVector::zeros(features.dim()),
            theta: policy.theta().to_vec(),
            tau: 0,
        };
        Ok(Self {
            rng: ProcessRng::new(seed, envs.len()),
            table: probability_table(&policy),
            theta_hash: theta_digest(policy.theta()),
            envs,
            features,
            policy,
            config,
            learner,
            process,
            trace: Trace::default(),
        })
    }

    pub fn envs(&self) -> &EnvironmentSet {
        &self.envs
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn policy(&self) -> &TabularSoftmaxPolicy {
        &self.policy
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn learner(&self) -> &LearnerState {
        &self.learner
    }

    pub fn process(&self) -> &MixProcessState {
        &self.process
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn tau(&self) -> u64 {
        self.learner.tau
    }

    pub fn real_interactions(&self) -> u64 {
        self.process.interactions()[0]
    }

    pub fn sim_interactions(&self) -> u64 {
        self.process.interactions()[1..].iter().sum()
    }

    /// Switch `(q, beta)`; the next [`Trainer::warm_up`] refills any buffer
    /// that just became active.
    pub fn set_mixing(&mut self, collect: Vec<f64>, optimize: Vec<f64>) -> Result<()> {
        check_mixing(&collect, &optimize)?;
        self.envs = self.envs.with_mixing(collect, optimize)?;
        Ok(())
    }

    /// Interaction-only steps until every buffer with `beta_k > 0` holds the
    /// warm-up target. Returns the number of interactions taken.
    pub fn warm_up(&mut self) -> Result<u64> {
        let target = self.config.warmup_target();
        let mut taken = 0;
        while self.needs_warmup(target) {
            interact_step_table(&mut self.process, &self.envs, &self.table, self.theta_hash, &mut self.rng);
            taken += 1;
        }
        Ok(taken)
    }

    fn needs_warmup(&self, target: usize) -> bool {
        self.envs
            .optimize()
            .iter()
            .zip(self.process.buffers())
            .any(|(b, buf)| *b > 0.0 && buf.len() < target)
    }

    /// One iteration: collect a transition, sample a batch, update
    /// `eta`, `v` and (unless frozen) `theta` from the same batch.
    pub fn step(&mut self) -> Result<()> {
        if self.needs_warmup(self.config.warmup_target()) {
            self.warm_up()?;
        }
        interact_step_table(&mut self.process, &self.envs, &self.table, self.theta_hash, &mut self.rng);
        let (_, batch) = sample_batch(&mut self.process, &self.envs, self.config.n_batch, &mut self.rng)?;
        let tau = self.learner.tau;
        let sched = &self.config.schedule;
        let eta = self.learner.eta;
        let deltas: Vec<f64> = batch
            .iter()
            .map(|t| td_error(t, eta, &self.learner.v, &self.features))
            .collect();
        let new_eta = update_average_reward(eta, &batch, sched, tau);
        let new_v = critic_step(&self.learner.v, &batch, &deltas, sched.critic(tau), &self.features);
        if !self.config.freeze_actor {
            let theta = self.actor_step(&batch, &deltas, tau);
            if theta.iter().all(|x| x.is_finite()) {
                self.policy.set_theta(&theta)?;
                let na = self.policy.num_actions();
                let mut seen = vec![false; self.policy.num_states()];
                for t in &batch {
                    if !std::mem::replace(&mut seen[t.s], true) {
                        let p = self.policy.probs(t.s);
                        self.table[t.s * na..(t.s + 1) * na].copy_from_slice(&p);
                    }
                }
                self.theta_hash = theta_digest(&theta);
            }
            self.learner.theta = theta;
        }
        self.learner.eta = new_eta;
        self.learner.v = new_v;
        self.learner.tau += 1;
        if !self.learner.is_finite() {
            return Err(self.divergence());
        }
        if self.learner.tau.is_multiple_of(self.config.log_every) {
            self.log_row()?;
        }
        Ok(())
    }

    /// [`update_actor`] with scores read from the cached probability table.
    fn actor_step(&self, batch: &[Transition], deltas: &[f64], tau: u64) -> Vec<f64> {
        let na = self.policy.num_actions();
        let temp = self.policy.temperature();
        let step = self.config.direction.sign() * self.config.schedule.actor(tau) / batch.len() as f64;
        let mut out = self.learner.theta.clone();
        for (t, d) in batch.iter().zip(deltas) {
            let base = t.s * na;
            for b in 0..na {
                let ind = if b == t.a { 1.0 } else { 0.0 };
                out[base + b] += step * d * (ind - self.table[base + b]) / temp;
            }
        }
        self.config.projection.project(&mut out);
        out
    }

    fn divergence(&mut self) -> Error {
        let row = TraceRow {
            tau: self.learner.tau,
            eta: self.learner.eta,
            eta_analytic: f64::NAN,
            v_err: f64::NAN,
            grad_norm: f64::NAN,
            real_interactions: self.real_interactions(),
            sim_interactions: self.sim_interactions(),
            eta_real: f64::NAN,
        };
        self.trace.rows.push(row);
        Error::Divergence {
            tau: self.learner.tau,
            trace: Box::new(self.trace.clone()),
        }
    }

    /// Append a trace row for the current iterates.
    pub fn log_row(&mut self) -> Result<TraceRow> {
        let (eta_analytic, v_err, grad_norm, eta_real) = if self.config.analytic_trace {
            let ops = build_a_b_infinity(&self.envs, &self.policy, &self.features)?;
            let fp = critic_fixed_point(&ops.a_mat, &ops.b_vec)?;
            let v_err = (&self.learner.v - &fp.v_pi).norm() / fp.v_pi.norm().max(1.0);
            let grad = exact_mixed_gradient(&self.envs, &self.policy, GRAD_STEP)?;
            (
                mixed_average_reward(&self.envs, &self.policy)?,
                v_err,
                grad.norm(),
                average_reward(self.envs.mdp(0), &self.policy)?,
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        };
        let row = TraceRow {
            tau: self.learner.tau,
            eta: self.learner.eta,
            eta_analytic,
            v_err,
            grad_norm,
            real_interactions: self.real_interactions(),
            sim_interactions: self.sim_interactions(),
            eta_real,
        };
        self.trace.rows.push(row);
        Ok(row)
    }

    /// Warm up, log the initial row, then take `config.steps` steps.
    pub fn run(&mut self) -> Result<()> {
        self.warm_up()?;
        self.log_row()?;
        for _ in 0..self.config.steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Optimizing from a buffer that is never filled would stall warm-up.
fn check_mixing(collect: &[f64], optimize: &[f64]) -> Result<()> {
    for (k, (q, b)) in collect.iter().zip(optimize).enumerate() {
        if *b > 0.0 && *q <= 0.0 {
            return Err(Error::Config(format!(
                "buffer {k} is optimized (beta={b}) but never collected (q=0)"
            )));
        }
    }
    Ok(())
}

/// Train from scratch and return the trace.
pub fn run_training(
    envs: &EnvironmentSet,
    features: &FeatureMap,
    policy: &TabularSoftmaxPolicy,
    config: &TrainingConfig,
    seed: u64,
) -> Result<Trace> {
    let mut trainer = Trainer::new(envs.clone(), features.clone(), policy.clone(), config.clone(), seed)?;
    trainer.run()?;
    Ok(trainer.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate_perturbed_pair;

    fn tr(s: usize, a: usize, r: f64, s_next: usize) -> Transition {
        Transition {
            s,
            a,
            r,
            s_next,
            born_at: 0,
            born_theta_hash: 0,
        }
    }

    fn small_envs(seed: u64) -> EnvironmentSet {
        let mut rng = SeededRng::for_purpose(seed, Purpose::Aux, 21);
        let (real, sim) = generate_perturbed_pair(&mut rng, 3, 2, 0.1).unwrap();
        EnvironmentSet::new(vec![real, sim], vec![0.3, 0.7], vec![0.5, 0.5]).unwrap()
    }

    fn quick_config(steps: u64) -> TrainingConfig {
        TrainingConfig {
            steps,
            n_batch: 4,
            capacity: 50,
            warmup_min: 10,
            log_every: 50,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_values() {
        let s = StepSizeSchedule {
            c_theta: 2.0,
            ..Default::default()
        };
        assert_eq!(s.critic(0), 1.0);
        assert_eq!(s.actor(0), 2.0);
        assert!((s.critic(3) - 4f64.powf(-0.6)).abs() < 1e-15);
        assert!((s.actor(3) - 2.0 * 4f64.powf(-0.9)).abs() < 1e-15);
        assert_eq!(s.eta(7), s.critic(7));
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSizeSchedule::default().validate().is_ok());
        for (p_v, p_theta) in [(0.5, 0.9), (0.9, 0.9), (0.7, 1.1), (0.95, 0.9)] {
            let s = StepSizeSchedule {
                p_v,
                p_theta,
                ..Default::default()
            };
            assert!(s.validate().is_err(), "p_v={p_v} p_theta={p_theta}");
        }
        let s = StepSizeSchedule {
            c_v: 0.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn projection_clamps_each_coordinate() {
        let b = ProjectionBox::new(1.0).unwrap();
        let mut x = vec![-3.0, 0.5, 2.0];
        b.project(&mut x);
        assert_eq!(x, vec![-1.0, 0.5, 1.0]);
        assert!(b.contains(&x));
        assert!(ProjectionBox::new(0.0).is_err());
    }

    #[test]
    fn td_error_hand_value() {
        let f = FeatureMap::tabular_anchored(3, 2).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0]);
        // r - eta + V(s') - V(s) = 0.5 - 0.25 + (-2) - 1
        assert!((td_error(&tr(0, 0, 0.5, 1), 0.25, &v, &f) - (-2.75)).abs() < 1e-15);
        // the anchor state has value zero
        assert!((td_error(&tr(2, 1, 1.0, 2), 0.0, &v, &f) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn average_reward_update_hand_value() {
        let s = StepSizeSchedule::default();
        let batch = [tr(0, 0, 1.0, 0), tr(0, 0, 0.0, 0)];
        assert!((update_average_reward(0.0, &batch, &s, 0) - 0.5).abs() < 1e-15);
        let eta = update_average_reward(0.2, &batch, &s, 3);
        assert!((eta - (0.2 + 4f64.powf(-0.6) * 0.3)).abs() < 1e-15);
    }

    #[test]
    fn critic_update_hand_value() {
        let f = FeatureMap::tabular_anchored(2, 1).unwrap();
        let s = StepSizeSchedule::default();
        let v = DVector::from_vec(vec![0.0]);
        // delta = 1 - 0 + 0 - 0 on state 0 whose feature is 1
        let out = update_critic(&v, &[tr(0, 0, 1.0, 1)], 0.0, &s, 0, &f);
        assert!((out[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn actor_directions_are_opposite() {
        let pol = TabularSoftmaxPolicy::uniform(2, 2);
        let s = StepSizeSchedule::default();
        let proj = ProjectionBox::default();
        let batch = [tr(0, 1, 0.0, 0)];
        let theta = vec![0.0; 4];
        let down = update_actor(&theta, &batch, &[1.0], &s, 0, &pol, &proj, UpdateDirection::Descend);
        let up = update_actor(&theta, &batch, &[1.0], &s, 0, &pol, &proj, UpdateDirection::Ascend);
        // score of (0, 1) under the uniform policy is (-1/2, 1/2, 0, 0)
        assert_eq!(up, vec![-0.5, 0.5, 0.0, 0.0]);
        assert_eq!(down, vec![0.5, -0.5, 0.0, 0.0]);
    }

    #[test]
    fn cached_actor_step_matches_free_function() {
        let envs = small_envs(1);
        let f = FeatureMap::tabular_anchored(3, 2).unwrap();
        let pol = TabularSoftmaxPolicy::from_theta(3, 2, vec![0.3, -0.2, 0.1, 0.0, -0.4, 0.5]).unwrap();
        let t = Trainer::new(envs, f, pol.clone(), quick_config(0), 0).unwrap();
        let batch = [tr(0, 1, 0.4, 2), tr(2, 0, 0.9, 1), tr(0, 0, 0.1, 0)];
        let deltas = [0.3, -1.2, 0.7];
        let cfg = t.config();
        let free = update_actor(pol.theta(), &batch, &deltas, &cfg.schedule, 5, &pol, &cfg.projection, cfg.direction);
        let cached = t.actor_step(&batch, &deltas, 5);
        for (a, b) in free.iter().zip(&cached) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn interactions_are_conserved() {
        let envs = small_envs(2);
        let f = FeatureMap::tabular_anchored(3, 2).unwrap();
        let mut t = Trainer::new(envs, f, TabularSoftmaxPolicy::uniform(3, 2), quick_config(200), 4).unwrap();
        let warm = t.warm_up().unwrap();
        for _ in 0..200 {
            t.step().unwrap();
        }
        assert_eq!(t.real_interactions() + t.sim_interactions(), warm + 200);
        assert_eq!(t.tau(), 200);
        assert_eq!(t.trace().rows.len(), 4);
    }

    #[test]
    fn step_warms_up_on_demand() {
        let envs = small_envs(3);
        let f = FeatureMap::tabular_anchored(3, 2).unwrap();
        let mut t = Trainer::new(envs, f, TabularSoftmaxPolicy::uniform(3, 2), quick_config(1), 0).unwrap();
        t.step().unwrap();
        assert!(t.process().buffers().iter().all(|b| b.len() >= 10));
    }

    #[test]
    fn optimizing_an_uncollected_buffer_is_rejected() {
        let envs = small_envs(4);
        let f = FeatureMap::tabular_anchored(3, 2).unwrap();
        let mut t = Trainer::new(envs, f, TabularSoftmaxPolicy::uniform(3, 2), quick_config(1), 0).unwrap();
        assert!(matches!(t.set_mixing(vec![1.0, 0.0], vec![0.5, 0.5]), Err(Error::Config(_))));
        assert!(t.set_mixing(vec![1.0, 0.0], vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn runs_are_reproducible() {
        let envs = small_envs(5);
        let f = FeatureMap::tabular_anchored(3, 2).unwrap();
        let pol = TabularSoftmaxPolicy::uniform(3, 2);
        let a = run_training(&envs, &f, &pol, &quick_config(300), 9).unwrap();
        let b = run_training(&envs, &f, &pol, &quick_config(300), 9).unwrap();
        let c = run_training(&envs, &f, &pol, &quick_config(300), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn oversized_critic_steps_diverge() {
        let envs = small_envs(6);
        let f = FeatureMap::tabular_anchored(3, 2).unwrap();
        let mut cfg = quick_config(5000);
        cfg.schedule.c_v = 1e6;
        cfg.freeze_actor = true;
        let err = run_training(&envs, &f, &TabularSoftmaxPolicy::uniform(3, 2), &cfg, 0).unwrap_err();
        match err {
            Error::Divergence { trace, .. } => assert!(trace.last().unwrap().v_err.is_nan()),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn trace_csv_has_the_documented_columns() {
        let mut buf = Vec::new();
        Trace::default().write_csv(&mut buf).unwrap();
        let header = String::from_utf8(buf).unwrap();
        assert_eq!(
            header.trim(),
            "tau,eta,eta_analytic,v_err,grad_norm,real_interactions,sim_interactions"
        );
    }
}
