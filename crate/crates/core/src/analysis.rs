//! Exact oracles and bound calculators: the critic operators and fixed
//! point, the actor bias, sim/real closeness bounds, spectral lemmas for
//! mixed and slowed chains, ergodicity coefficients, and the TV bound.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env_model::{
    exact_mixed_gradient, induced_transition_matrix, policy_reward, stationary_distribution,
    stationary_of_matrix, value_function, EnvironmentSet, FeatureMap, FiniteMdp,
    TabularSoftmaxPolicy,
};
use crate::error::{Error, Result};
use crate::linalg::{self, eigenvalues_by_modulus, matching_distance, smallest_singular_value};

/// Tolerance on row sums and stationarity used by preconditions.
const STOCHASTIC_TOL: f64 = 1e-10;

/// Which average reward is subtracted in environment `k`'s block of `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetRule {
    /// `eta_k`, the environment's own average reward.
    #[default]
    PerEnvironment,
    /// The mixed `eta_bar` for every block, which is what a single shared
    /// tracker converges to.
    Mixed,
}

/// `A_theta`, `b_theta` and their projections `Phi^T A Phi`, `Phi^T b`.
#[derive(Debug, Clone)]
pub struct CriticOperators {
    pub a_theta: DMatrix<f64>,
    pub b_theta: DVector<f64>,
    pub a_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    /// `mu_k` per environment.
    pub stationary: Vec<DVector<f64>>,
    /// `eta_k` per environment.
    pub eta: Vec<f64>,
}

/// `A = sum_k beta_k S_k (P_k - I)`, `b = sum_k beta_k S_k (r_k - eta_k e)`.
pub fn build_a_b_infinity(
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    features: &FeatureMap,
) -> Result<CriticOperators> {
    build_a_b_with_offset(envs, policy, features, OffsetRule::PerEnvironment)
}

pub fn build_a_b_with_offset(
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    features: &FeatureMap,
    rule: OffsetRule,
) -> Result<CriticOperators> {
    let n = envs.num_states();
    if features.num_states() != n {
        return Err(Error::Dimension("feature map and MDPs disagree on |S|".into()));
    }
    let r = policy_reward(envs.mdp(0), policy);
    let mut chains = Vec::with_capacity(envs.len());
    let mut stationary = Vec::with_capacity(envs.len());
    let mut eta = Vec::with_capacity(envs.len());
    for m in envs.mdps() {
        let c = induced_transition_matrix(m, policy)?;
        let mu = stationary_distribution(&c)?;
        eta.push(mu.dot(&r));
        stationary.push(mu);
        chains.push(c.into_matrix());
    }
    let eta_bar: f64 = eta.iter().zip(envs.optimize()).map(|(e, b)| e * b).sum();
    let mut a_theta = DMatrix::zeros(n, n);
    let mut b_theta = DVector::zeros(n);
    for (k, beta) in envs.optimize().iter().enumerate() {
        let offset = match rule {
            OffsetRule::PerEnvironment => eta[k],
            OffsetRule::Mixed => eta_bar,
        };
        let mu = &stationary[k];
        let p = &chains[k];
        for s in 0..n {
            let w = beta * mu[s];
            for t in 0..n {
                a_theta[(s, t)] += w * (p[(s, t)] - if s == t { 1.0 } else { 0.0 });
            }
            b_theta[s] += w * (r[s] - offset);
        }
    }
    let phi = features.matrix();
    Ok(CriticOperators {
        a_mat: phi.transpose() * &a_theta * phi,
        b_vec: phi.transpose() * &b_theta,
        a_theta,
        b_theta,
        stationary,
        eta,
    })
}

/// Solution of `a_mat v + b_vec = 0`.
#[derive(Debug, Clone)]
pub struct CriticFixedPoint {
    pub v_pi: DVector<f64>,
    pub a_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    /// `||a_mat v_pi + b_vec||_inf`.
    pub residual: f64,
}

/// Fails with [`Error::AssumptionViolation`] when `a_mat` is singular, which
/// happens when the features can represent the constant vector or are
/// otherwise degenerate.
pub fn critic_fixed_point(a_mat: &DMatrix<f64>, b_vec: &DVector<f64>) -> Result<CriticFixedPoint> {
    if !a_mat.is_square() || a_mat.nrows() != b_vec.len() {
        return Err(Error::Dimension("critic operator shapes disagree".into()));
    }
    let sv = smallest_singular_value(a_mat);
    let scale = a_mat.amax();
    if !(sv > 1e-12 * scale) {
        return Err(Error::AssumptionViolation(format!(
            "projected critic operator is singular (smallest singular value {sv:.3e})"
        )));
    }
    let v_pi = linalg::solve(a_mat, &(-b_vec)).map_err(|e| Error::AssumptionViolation(e.to_string()))?;
    let residual = (a_mat * &v_pi + b_vec).amax();
    Ok(CriticFixedPoint {
        v_pi,
        a_mat: a_mat.clone(),
        b_vec: b_vec.clone(),
        residual,
    })
}

/// Policy parameters and state distribution in force when a buffered
/// transition was generated.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub theta: Vec<f64>,
    pub rho: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct FiniteTimeOperators {
    pub a_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
}

/// Buffer-age-weighted operators:
/// `sum_k sum_n beta_k/N Phi^T S_kn (P_kn - I) Phi` and
/// `sum_k sum_n beta_k/N Phi^T S_kn (r_kn - eta_k e)`, where `S_kn, P_kn,
/// r_kn` come from the recorded `(theta, rho)` of slot `n` in buffer `k` and
/// `eta_k` is the average reward of `policy` (the current parameters).
pub fn build_a_b_finite_time(
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    histories: &[Vec<HistoryEntry>],
    features: &FeatureMap,
) -> Result<FiniteTimeOperators> {
    let n_states = envs.num_states();
    if histories.len() != envs.len() {
        return Err(Error::Dimension(format!(
            "{} histories for {} environments",
            histories.len(),
            envs.len()
        )));
    }
    let n = histories[0].len();
    if n == 0 || histories.iter().any(|h| h.len() != n) {
        return Err(Error::Dimension("every buffer history must hold the same N > 0 entries".into()));
    }
    let ops = build_a_b_infinity(envs, policy, features)?;
    let mut a_theta = DMatrix::zeros(n_states, n_states);
    let mut b_theta = DVector::zeros(n_states);
    for (k, hist) in histories.iter().enumerate() {
        let beta = envs.optimize()[k];
        if beta == 0.0 {
            continue;
        }
        for entry in hist {
            if entry.rho.len() != n_states {
                return Err(Error::Dimension("rho has the wrong length".into()));
            }
            let pol = TabularSoftmaxPolicy::with_temperature(
                policy.num_states(),
                policy.num_actions(),
                entry.theta.clone(),
                policy.temperature(),
            )?;
            let p = induced_transition_matrix(envs.mdp(k), &pol)?.into_matrix();
            let r = policy_reward(envs.mdp(k), &pol);
            let w = beta / n as f64;
            for s in 0..n_states {
                let ws = w * entry.rho[s];
                for t in 0..n_states {
                    a_theta[(s, t)] += ws * (p[(s, t)] - if s == t { 1.0 } else { 0.0 });
                }
                b_theta[s] += ws * (r[s] - ops.eta[k]);
            }
        }
    }
    let phi = features.matrix();
    Ok(FiniteTimeOperators {
        a_mat: phi.transpose() * &a_theta * phi,
        b_vec: phi.transpose() * &b_theta,
    })
}

/// Expected actor increment direction, bias and true gradient at one policy.
#[derive(Debug, Clone)]
pub struct ActorBias {
    /// `E[delta^pi psi]` in closed form.
    pub direction: DVector<f64>,
    pub xi: DVector<f64>,
    /// `grad eta_bar` by central differences.
    pub grad: DVector<f64>,
    pub v_pi: DVector<f64>,
}

fn fixed_point_at(envs: &EnvironmentSet, policy: &TabularSoftmaxPolicy, features: &FeatureMap) -> Result<(CriticOperators, DVector<f64>)> {
    let ops = build_a_b_infinity(envs, policy, features)?;
    let fp = critic_fixed_point(&ops.a_mat, &ops.b_vec)?;
    Ok((ops, fp.v_pi))
}

/// `Vbar_k(s) = sum_a pi(a|s) (r(s,a) - eta_k + sum_s' P_k(s'|s,a) phi(s')^T v_pi)`
/// for each environment, evaluated with the policy's own `eta_k` and `v_pi`.
fn vbar(envs: &EnvironmentSet, policy: &TabularSoftmaxPolicy, features: &FeatureMap) -> Result<Vec<DVector<f64>>> {
    let (ops, v) = fixed_point_at(envs, policy, features)?;
    let values = features.matrix() * &v;
    let (ns, na) = (envs.num_states(), envs.num_actions());
    Ok(envs
        .mdps()
        .iter()
        .zip(&ops.eta)
        .map(|(m, eta)| {
            DVector::from_fn(ns, |s, _| {
                let pi = policy.probs(s);
                (0..na)
                    .map(|a| {
                        let next: f64 = m.row(s, a).iter().zip(values.iter()).map(|(p, x)| p * x).sum();
                        pi[a] * (m.reward(s, a) - eta + next)
                    })
                    .sum()
            })
        })
        .collect())
}

/// Closed-form `E[delta^pi psi]`, the bias
/// `xi = sum_k beta_k sum_s mu_k(s) (phi(s)^T grad v_pi - grad Vbar_k(s))`,
/// and `grad eta_bar`; derivatives by central differences with step `h`.
/// These satisfy `direction = grad - xi` up to differencing error.
pub fn actor_direction_and_bias(
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    features: &FeatureMap,
    h: f64,
) -> Result<ActorBias> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::OutOfRange(format!("step {h} must be positive")));
    }
    let (ops, v_pi) = fixed_point_at(envs, policy, features)?;
    let values = features.matrix() * &v_pi;
    let (ns, na, d, dv) = (envs.num_states(), envs.num_actions(), policy.dim(), features.dim());

    let mut direction = DVector::zeros(d);
    for (k, m) in envs.mdps().iter().enumerate() {
        let beta = envs.optimize()[k];
        for s in 0..ns {
            let pi = policy.probs(s);
            for a in 0..na {
                let next: f64 = m.row(s, a).iter().zip(values.iter()).map(|(p, x)| p * x).sum();
                let delta = m.reward(s, a) - ops.eta[k] + next - values[s];
                policy.add_score(s, a, beta * ops.stationary[k][s] * pi[a] * delta, &mut direction);
            }
        }
    }

    let mut grad_v = DMatrix::zeros(dv, d);
    let mut grad_vbar: Vec<DMatrix<f64>> = vec![DMatrix::zeros(ns, d); envs.len()];
    for i in 0..d {
        let up = policy.perturbed(i, h);
        let dn = policy.perturbed(i, -h);
        let (_, v_up) = fixed_point_at(envs, &up, features)?;
        let (_, v_dn) = fixed_point_at(envs, &dn, features)?;
        grad_v.set_column(i, &((v_up - v_dn) / (2.0 * h)));
        let vb_up = vbar(envs, &up, features)?;
        let vb_dn = vbar(envs, &dn, features)?;
        for k in 0..envs.len() {
            grad_vbar[k].set_column(i, &((&vb_up[k] - &vb_dn[k]) / (2.0 * h)));
        }
    }
    let phi_grad_v = features.matrix() * &grad_v;
    let mut xi = DVector::zeros(d);
    for k in 0..envs.len() {
        let beta = envs.optimize()[k];
        for s in 0..ns {
            let w = beta * ops.stationary[k][s];
            for i in 0..d {
                xi[i] += w * (phi_grad_v[(s, i)] - grad_vbar[k][(s, i)]);
            }
        }
    }
    let grad = exact_mixed_gradient(envs, policy, h)?;
    Ok(ActorBias {
        direction,
        xi,
        grad,
        v_pi,
    })
}

/// Sim/real closeness bounds with the exact gaps they control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    /// `max |P_s(s'|s,a) - P_r(s'|s,a)|`.
    pub eps_s2r: f64,
    /// `|A| eps`.
    pub b_p: f64,
    /// Proof-route bound on `max_s |mu_s(s) - mu_r(s)|`.
    pub b_mu: f64,
    /// Statement-route constant `B_P |S|^3 sqrt(|S| R_m^2)`, diagnostic only.
    pub b_mu_statement: f64,
    pub b_eta: f64,
    pub b_v: f64,
    /// Largest eigenvalue modulus of the reduced sim kernel.
    pub r_m: f64,
    /// `||(P~_s - I)^-1||_F`.
    pub reduced_inverse_frobenius: f64,
    /// `max |P^theta_s - P^theta_r|` over state pairs.
    pub actual_p_gap: f64,
    pub actual_mu_gap: f64,
    pub actual_eta_gap: f64,
    /// Euclidean gap of relative values anchored at the last state.
    pub actual_v_gap: f64,
}

impl ClosenessReport {
    pub fn p_holds(&self) -> bool {
        self.actual_p_gap <= self.b_p * (1.0 + 1e-12)
    }

    pub fn mu_holds(&self) -> bool {
        self.actual_mu_gap <= self.b_mu * (1.0 + 1e-12)
    }

    pub fn eta_holds(&self) -> bool {
        self.actual_eta_gap <= self.b_eta * (1.0 + 1e-12)
    }

    pub fn v_holds(&self) -> bool {
        self.actual_v_gap <= self.b_v * (1.0 + 1e-12)
    }

    pub fn all_hold(&self) -> bool {
        self.p_holds() && self.mu_holds() && self.eta_holds() && self.v_holds()
    }
}

/// Closeness of the chains, stationary laws, average rewards and relative
/// values that sim and real induce under one policy.
///
/// `B_mu` follows the perturbation argument on the reduced stationarity
/// system: `||dmu~||_2 <= ||mu~_r|| ||dP~||_F ||(P~_s - I)^-1||_F` with
/// `||dP~||_F <= |S|^2 B_P`, and the last state's gap (minus the sum of the
/// others) costs a further `sqrt(|S| - 1)`.
pub fn closeness_bounds(
    mdp_s: &FiniteMdp,
    mdp_r: &FiniteMdp,
    policy: &TabularSoftmaxPolicy,
) -> Result<ClosenessReport> {
    mdp_s.check_same_shape(mdp_r)?;
    let n = mdp_s.num_states();
    if n < 2 {
        return Err(Error::Dimension("closeness bounds need at least two states".into()));
    }
    let eps = mdp_s.transition_gap(mdp_r)?;
    let b_p = mdp_s.num_actions() as f64 * eps;
    let cs = induced_transition_matrix(mdp_s, policy)?;
    let cr = induced_transition_matrix(mdp_r, policy)?;
    let (ps, pr) = (cs.matrix(), cr.matrix());
    let actual_p_gap = (ps - pr).amax();
    let mu_s = stationary_distribution(&cs)?;
    let mu_r = stationary_distribution(&cr)?;
    let r = policy_reward(mdp_s, policy);
    let actual_mu_gap = (&mu_s - &mu_r).amax();
    let actual_eta_gap = (mu_s.dot(&r) - mu_r.dot(&r)).abs();
    let v_s = value_function(mdp_s, policy, n - 1)?;
    let v_r = value_function(mdp_r, policy, n - 1)?;
    let actual_v_gap = (v_s - v_r).norm();

    let reduced = ps.view((0, 0), (n - 1, n - 1)).into_owned();
    let shifted = &reduced - DMatrix::identity(n - 1, n - 1);
    let inv = shifted
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Solver("reduced stationarity system is singular".into()))?;
    let reduced_inverse_frobenius = inv.norm();
    let r_m = eigenvalues_by_modulus(&reduced).first().map_or(0.0, |z| z.norm());
    let s = n as f64;
    let b_mu = (s - 1.0).sqrt() * s * s * b_p * reduced_inverse_frobenius;
    let b_mu_statement = b_p * s.powi(3) * (s * r_m * r_m).sqrt();
    Ok(ClosenessReport {
        eps_s2r: eps,
        b_p,
        b_mu,
        b_mu_statement,
        b_eta: b_mu * s,
        b_v: b_mu,
        r_m,
        reduced_inverse_frobenius,
        actual_p_gap,
        actual_mu_gap,
        actual_eta_gap,
        actual_v_gap,
    })
}

fn check_stochastic(name: &str, p: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() || p.nrows() == 0 {
        return Err(Error::Dimension(format!("{name} must be a nonempty square matrix")));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= -STOCHASTIC_TOL)) || linalg::stochasticity_error(p) > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!("{name} is not row-stochastic")));
    }
    Ok(())
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfRange(format!("{name}={x} must lie in [0, 1]")));
    }
    Ok(())
}

/// `beta P_x + (1 - beta) P_y`.
pub fn convex_mix_chain(p_x: &DMatrix<f64>, p_y: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    check_unit("beta", beta)?;
    check_stochastic("P_x", p_x)?;
    check_stochastic("P_y", p_y)?;
    if p_x.shape() != p_y.shape() {
        return Err(Error::Dimension("chains differ in size".into()));
    }
    if beta == 0.0 {
        return Ok(p_y.clone());
    }
    if beta == 1.0 {
        return Ok(p_x.clone());
    }
    Ok(p_x * beta + p_y * (1.0 - beta))
}

/// Lazy chain `p P_x + (1 - p) I` with its spectrum predicted from `P_x`.
#[derive(Debug, Clone)]
pub struct SlowChain {
    pub matrix: DMatrix<f64>,
    /// `p lambda_2 + 1 - p` for the second-largest-modulus eigenvalue of `P_x`.
    pub predicted_lambda2: Complex<f64>,
    /// `p lambda + 1 - p` over the whole spectrum of `P_x`.
    pub predicted_spectrum: Vec<Complex<f64>>,
}

pub fn slow_chain(p_x: &DMatrix<f64>, p: f64) -> Result<SlowChain> {
    check_unit("p", p)?;
    check_stochastic("P_x", p_x)?;
    let n = p_x.nrows();
    if n < 2 {
        return Err(Error::Dimension("need at least two states for a second eigenvalue".into()));
    }
    let matrix = p_x * p + DMatrix::identity(n, n) * (1.0 - p);
    let map = |z: Complex<f64>| z * p + Complex::new(1.0 - p, 0.0);
    let spectrum = eigenvalues_by_modulus(p_x);
    Ok(SlowChain {
        matrix,
        predicted_lambda2: map(spectrum[1]),
        predicted_spectrum: spectrum.into_iter().map(map).collect(),
    })
}

/// Frobenius-norm comparison of the lazy chain with a reference chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBound {
    /// `p ||P_x - P_y|| + (1 - p) ||I - P_y||`.
    pub bound: f64,
    /// `||(p P_x + (1 - p) I) - P_y||`.
    pub actual: f64,
    pub slack: f64,
}

pub fn slow_mix_norm_bound(p_x: &DMatrix<f64>, p_y: &DMatrix<f64>, p: f64) -> Result<NormBound> {
    check_unit("p", p)?;
    if p_x.shape() != p_y.shape() || !p_x.is_square() {
        return Err(Error::Dimension("chains differ in size".into()));
    }
    let n = p_x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let bound = p * (p_x - p_y).norm() + (1.0 - p) * (&eye - p_y).norm();
    let actual = (p_x * p + &eye * (1.0 - p) - p_y).norm();
    Ok(NormBound {
        bound,
        actual,
        slack: bound - actual,
    })
}

/// `E(P) = 1 - min_{i,j} sum_s min(P_is, P_js)`.
pub fn ergodicity_coefficient(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let mut min_overlap = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let o: f64 = (0..p.ncols()).map(|s| p[(i, s)].min(p[(j, s)])).sum();
            min_overlap = min_overlap.min(o);
        }
    }
    if n < 2 {
        return 0.0;
    }
    (1.0 - min_overlap).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Sorted by decreasing modulus.
    pub eigenvalues: Vec<Complex<f64>>,
    /// `|lambda_2|`.
    pub lambda2: f64,
    pub gap: f64,
    pub ec: f64,
}

pub fn spectral_report(p: &DMatrix<f64>) -> Result<SpectralReport> {
    check_stochastic("P", p)?;
    let eigenvalues = eigenvalues_by_modulus(p);
    let lambda2 = eigenvalues.get(1).map_or(0.0, |z| z.norm());
    Ok(SpectralReport {
        lambda2,
        gap: 1.0 - lambda2,
        ec: ergodicity_coefficient(p),
        eigenvalues,
    })
}

/// Perturbation bound on the distance between the marginals of the mixed
/// chain `q1 P1 + (1 - q1) P2` and of `P1`, started from the same law, given
/// `sup_x ||x P1^t - mu_1||_1 <= m kappa^t`. All norms are l1 (the matrix
/// norm is the induced max row sum).
pub fn tv_mixing_bound(q1: f64, norm_p2_minus_p1: f64, m: f64, kappa: f64, t: u64) -> Result<f64> {
    check_unit("q1", q1)?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::OutOfRange(format!("m={m} must be positive")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::OutOfRange(format!("kappa={kappa} must lie in (0, 1)")));
    }
    if !(norm_p2_minus_p1 >= 0.0) {
        return Err(Error::OutOfRange("perturbation norm must be nonnegative".into()));
    }
    let scale = (1.0 - q1) * norm_p2_minus_p1;
    let t_hat = t_hat(m, kappa);
    let tf = t as f64;
    Ok(if t < t_hat {
        tf * scale
    } else {
        (t_hat as f64 + m * (kappa.powf(t_hat as f64) - kappa.powf(tf)) / (1.0 - kappa)) * scale
    })
}

/// `max(0, ceil(log_kappa(1/m)))`.
pub fn t_hat(m: f64, kappa: f64) -> u64 {
    let x = ((1.0 / m).ln() / kappa.ln()).ceil();
    if x > 0.0 {
        x as u64
    } else {
        0
    }
}

/// Geometric envelope `D(t) <= m kappa^t` of a chain's worst-case l1
/// distance to stationarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricEnvelope {
    pub m: f64,
    pub kappa: f64,
    /// Largest `t` used in the fit.
    pub horizon: u64,
}

/// `D(t) = max_s ||e_s^T P^t - mu||_1` for `t = 0..=horizon`.
pub fn worst_case_distances(p: &DMatrix<f64>, horizon: u64) -> Result<Vec<f64>> {
    check_stochastic("P", p)?;
    let mu = stationary_of_matrix(p)?;
    let n = p.nrows();
    let mut pt = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(horizon as usize + 1);
    for t in 0..=horizon {
        if t > 0 {
            pt = &pt * p;
        }
        let d = (0..n)
            .map(|s| (0..n).map(|j| (pt[(s, j)] - mu[j]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        out.push(d);
    }
    Ok(out)
}

/// Fit `(m, kappa)` over `t = 0..=horizon`: for each `kappa` on a grid in
/// `(|lambda_2|, 1)` take the smallest valid `m = max_t D(t)/kappa^t`, and
/// keep the pair with the smallest tail mass `m / (1 - kappa)`.
pub fn fit_geometric_envelope(p: &DMatrix<f64>, horizon: u64) -> Result<GeometricEnvelope> {
    let d = worst_case_distances(p, horizon)?;
    let l2 = eigenvalues_by_modulus(p).get(1).map_or(0.0, |z| z.norm());
    if l2 >= 1.0 - 1e-9 {
        return Err(Error::Ergodicity(format!("|lambda_2| = {l2} leaves no spectral gap")));
    }
    let lo = l2.max(1e-3);
    let mut best: Option<(f64, GeometricEnvelope)> = None;
    for j in 1..400 {
        let kappa = lo + (1.0 - lo) * j as f64 / 400.0;
        let m = d
            .iter()
            .enumerate()
            .map(|(t, x)| x / kappa.powi(t as i32))
            .fold(f64::MIN_POSITIVE, f64::max);
        let score = m / (1.0 - kappa);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, GeometricEnvelope { m, kappa, horizon }));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

/// Marginals `x_0 P^t` for `t = 0..=steps`.
pub fn distribution_path(p: &DMatrix<f64>, init: &DVector<f64>, steps: u64) -> Vec<DVector<f64>> {
    let pt = p.transpose();
    let mut out = Vec::with_capacity(steps as usize + 1);
    let mut x = init.clone();
    out.push(x.clone());
    for _ in 0..steps {
        x = &pt * &x;
        out.push(x.clone());
    }
    out
}

/// Measured l1 gaps between mixed-chain and `P1` marginals against the
/// bound with an envelope fitted on `P1`.
#[derive(Debug, Clone)]
pub struct TvCheck {
    pub envelope: GeometricEnvelope,
    pub norm_p2_minus_p1: f64,
    pub measured: Vec<f64>,
    pub bound: Vec<f64>,
}

impl TvCheck {
    pub fn holds(&self) -> bool {
        self.measured
            .iter()
            .zip(&self.bound)
            .all(|(m, b)| *m <= b + 1e-12)
    }

    pub fn min_slack(&self) -> f64 {
        self.measured
            .iter()
            .zip(&self.bound)
            .map(|(m, b)| b - m)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn tv_bound_check(
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    q1: f64,
    init: &DVector<f64>,
    fit_horizon: u64,
    steps: u64,
) -> Result<TvCheck> {
    let mixed = convex_mix_chain(p1, p2, q1)?;
    let envelope = fit_geometric_envelope(p1, fit_horizon)?;
    let norm = linalg::row_sum_norm(&(p2 - p1));
    let a = distribution_path(&mixed, init, steps);
    let b = distribution_path(p1, init, steps);
    let measured = a.iter().zip(&b).map(|(x, y)| (x - y).lp_norm(1)).collect();
    let bound = (0..=steps)
        .map(|t| tv_mixing_bound(q1, norm, envelope.m, envelope.kappa, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TvCheck {
        envelope,
        norm_p2_minus_p1: norm,
        measured,
        bound,
    })
}

/// `||mu^T (I - P1) - (1 - beta) mu2^T (P2 - P1)||_inf` with
/// `mu = beta mu1 + (1 - beta) mu2`; zero up to rounding whenever each `mu_i`
/// is stationary for `P_i`.
pub fn convex_stationarity_identity(
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    beta: f64,
) -> Result<f64> {
    check_unit("beta", beta)?;
    let n = p1.nrows();
    if p1.shape() != p2.shape() || mu1.len() != n || mu2.len() != n {
        return Err(Error::Dimension("identity inputs disagree in size".into()));
    }
    for (name, mu, p) in [("mu1", mu1, p1), ("mu2", mu2, p2)] {
        let res = (p.transpose() * mu - mu).amax();
        if res > STOCHASTIC_TOL {
            return Err(Error::Precondition(format!(
                "{name} is not stationary for its chain (residual {res:.3e})"
            )));
        }
    }
    let mu = mu1 * beta + mu2 * (1.0 - beta);
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs = (&eye - p1).transpose() * mu;
    let rhs = (p2 - p1).transpose() * mu2 * (1.0 - beta);
    Ok((lhs - rhs).amax())
}

/// Comparison of the ergodicity coefficients of the real chain and a
/// q-mixed chain. A violation is a finding about the claimed
/// `|S| eps` degradation, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcFinding {
    pub ec_real: f64,
    pub ec_mixed: f64,
    pub difference: f64,
    pub bound: f64,
    pub violated: bool,
}

pub fn ec_closeness_finding(
    p_real: &DMatrix<f64>,
    p_sim: &DMatrix<f64>,
    q_real: f64,
    eps_s2r: f64,
) -> Result<EcFinding> {
    let mixed = convex_mix_chain(p_real, p_sim, q_real)?;
    let ec_real = ergodicity_coefficient(p_real);
    let ec_mixed = ergodicity_coefficient(&mixed);
    let difference = (ec_mixed - ec_real).abs();
    let bound = p_real.nrows() as f64 * eps_s2r;
    Ok(EcFinding {
        ec_real,
        ec_mixed,
        difference,
        bound,
        violated: difference > bound + 1e-12,
    })
}

/// Eigenvalue-perturbation diagnostics. Stochastic matrices are rarely
/// normal, so normal-matrix matching bounds are reported, not asserted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDiagnostics {
    /// `||P P^T - P^T P||_F` for real and sim.
    pub normality_defect_real: f64,
    pub normality_defect_sim: f64,
    /// Optimal matching distance between the two spectra.
    pub eigen_matching_distance: f64,
    /// `||P_sim - P_real||_F`; bounds the matching distance for normal pairs.
    pub frobenius_gap: f64,
}

pub fn normality_defect(p: &DMatrix<f64>) -> f64 {
    (p * p.transpose() - p.transpose() * p).norm()
}

pub fn perturbation_diagnostics(p_real: &DMatrix<f64>, p_sim: &DMatrix<f64>) -> Result<PerturbationDiagnostics> {
    if p_real.shape() != p_sim.shape() || !p_real.is_square() {
        return Err(Error::Dimension("chains differ in size".into()));
    }
    Ok(PerturbationDiagnostics {
        normality_defect_real: normality_defect(p_real),
        normality_defect_sim: normality_defect(p_sim),
        eigen_matching_distance: matching_distance(&eigenvalues_by_modulus(p_real), &eigenvalues_by_modulus(p_sim)),
        frobenius_gap: (p_sim - p_real).norm(),
    })
}

/// One trial of the closeness-bound suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSuiteRow {
    pub seed: u64,
    pub eps: f64,
    #[serde(flatten)]
    pub report: ClosenessReport,
    pub pass: bool,
}

/// CSV: instance seed, target eps, every bound, every gap, pass flag.
pub fn write_bound_suite_csv<W: Write>(rows: &[BoundSuiteRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed", "eps", "eps_s2r", "b_p", "b_mu", "b_mu_statement", "b_eta", "b_v", "gap_p", "gap_mu",
        "gap_eta", "gap_v", "pass",
    ])?;
    for r in rows {
        let c = &r.report;
        w.write_record([
            r.seed.to_string(),
            r.eps.to_string(),
            c.eps_s2r.to_string(),
            c.b_p.to_string(),
            c.b_mu.to_string(),
            c.b_mu_statement.to_string(),
            c.b_eta.to_string(),
            c.b_v.to_string(),
            c.actual_p_gap.to_string(),
            c.actual_mu_gap.to_string(),
            c.actual_eta_gap.to_string(),
            c.actual_v_gap.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
