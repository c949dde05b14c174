use nalgebra::{DMatrix, DVector};

use super::chain::{induced_transition_matrix, stationary_distribution, SOLVER_TOL};
use super::{EnvironmentSet, FiniteMdp, TabularSoftmaxPolicy};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par::{self, Execution};

/// Expected one-step reward per state, `r_pi(s) = sum_a pi(a|s) r(s,a)`.
pub fn policy_reward(mdp: &FiniteMdp, policy: &TabularSoftmaxPolicy) -> DVector<f64> {
    let table = policy.table();
    reward_from_table(mdp, &table)
}

pub(crate) fn reward_from_table(mdp: &FiniteMdp, table: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(mdp.num_states(), |s, _| {
        (0..mdp.num_actions())
            .map(|a| table[(s, a)] * mdp.reward(s, a))
            .sum()
    })
}

/// Long-run average reward `eta = sum_s mu(s) sum_a pi(a|s) r(s,a)`.
pub fn average_reward(mdp: &FiniteMdp, policy: &TabularSoftmaxPolicy) -> Result<f64> {
    let chain = induced_transition_matrix(mdp, policy)?;
    let mu = stationary_distribution(&chain)?;
    Ok(mu.dot(&policy_reward(mdp, policy)))
}

/// Average rewards `eta_k` of every environment.
pub fn per_environment_average_rewards(
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
) -> Result<Vec<f64>> {
    envs.mdps().iter().map(|m| average_reward(m, policy)).collect()
}

/// `beta`-weighted average reward over environments.
pub fn mixed_average_reward(envs: &EnvironmentSet, policy: &TabularSoftmaxPolicy) -> Result<f64> {
    let etas = per_environment_average_rewards(envs, policy)?;
    Ok(etas.iter().zip(envs.optimize()).map(|(e, b)| e * b).sum())
}

/// Relative value function with `V(anchor) = 0`.
///
/// Solves the Bellman equation `V = r_pi - eta e + P_theta V` on the states
/// other than the anchor, then checks the full residual.
pub fn value_function(
    mdp: &FiniteMdp,
    policy: &TabularSoftmaxPolicy,
    anchor: usize,
) -> Result<DVector<f64>> {
    let chain = induced_transition_matrix(mdp, policy)?;
    let p = chain.matrix();
    let n = p.nrows();
    if anchor >= n {
        return Err(Error::OutOfRange(format!("anchor {anchor} for {n} states")));
    }
    let mu = stationary_distribution(&chain)?;
    let r = policy_reward(mdp, policy);
    let eta = mu.dot(&r);
    let v = relative_values(p, &r, eta, anchor)?;
    Ok(v)
}

/// Solve `(I - P) V = r - eta e` with `V(anchor) = 0` for any kernel.
pub(crate) fn relative_values(
    p: &DMatrix<f64>,
    r: &DVector<f64>,
    eta: f64,
    anchor: usize,
) -> Result<DVector<f64>> {
    let n = p.nrows();
    let keep: Vec<usize> = (0..n).filter(|&s| s != anchor).collect();
    let m = keep.len();
    let mut a = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (i, &s) in keep.iter().enumerate() {
        for (j, &t) in keep.iter().enumerate() {
            a[(i, j)] = if s == t { 1.0 } else { 0.0 } - p[(s, t)];
        }
        rhs[i] = r[s] - eta;
    }
    let reduced = if m == 0 {
        DVector::zeros(0)
    } else {
        linalg::solve(&a, &rhs)
            .map_err(|e| Error::Solver(format!("reduced Bellman system: {e}")))?
    };
    let mut v = DVector::zeros(n);
    for (i, &s) in keep.iter().enumerate() {
        v[s] = reduced[i];
    }
    let residual = (r - DVector::from_element(n, eta) + p * &v - &v).amax();
    if residual > SOLVER_TOL * (1.0 + v.amax()) {
        return Err(Error::Solver(format!(
            "Bellman residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(v)
}

/// Action values and advantages of one environment under a given reward
/// offset `eta`.
#[derive(Debug, Clone)]
pub struct QAdvantage {
    /// `Q(s,a) = r(s,a) - eta + sum_s' P(s'|s,a) V(s')`.
    pub q: DMatrix<f64>,
    /// `A(s,a) = Q(s,a) - V(s)`.
    pub advantage: DMatrix<f64>,
    pub values: DVector<f64>,
}

/// `Q` and `A` built on the relative value function anchored at `anchor`.
/// With `eta` equal to the environment's own average reward,
/// `sum_a pi(a|s) A(s,a) = 0`.
pub fn q_and_advantage(
    mdp: &FiniteMdp,
    policy: &TabularSoftmaxPolicy,
    eta: f64,
    anchor: usize,
) -> Result<QAdvantage> {
    let values = value_function(mdp, policy, anchor)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut q = DMatrix::zeros(ns, na);
    let mut adv = DMatrix::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = mdp
                .row(s, a)
                .iter()
                .zip(values.iter())
                .map(|(p, v)| p * v)
                .sum();
            q[(s, a)] = mdp.reward(s, a) - eta + next;
            adv[(s, a)] = q[(s, a)] - values[s];
        }
    }
    Ok(QAdvantage {
        q,
        advantage: adv,
        values,
    })
}

/// Central-difference gradient of the mixed average reward with step `h`.
pub fn exact_mixed_gradient(
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    h: f64,
) -> Result<DVector<f64>> {
    exact_mixed_gradient_with(envs, policy, h, Execution::Sequential)
}

pub fn exact_mixed_gradient_with(
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    h: f64,
    exec: Execution,
) -> Result<DVector<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::OutOfRange(format!("step {h} must be positive")));
    }
    let g = par::try_map_range(exec, policy.dim(), |i| {
        let up = mixed_average_reward(envs, &policy.perturbed(i, h))?;
        let dn = mixed_average_reward(envs, &policy.perturbed(i, -h))?;
        Ok::<f64, Error>((up - dn) / (2.0 * h))
    })?;
    Ok(DVector::from_vec(g))
}

/// Best average reward over all deterministic stationary policies, found by
/// enumeration. Intended for desk-scale instances (`|A|^|S|` policies).
pub fn optimal_average_reward(mdp: &FiniteMdp) -> Result<(f64, Vec<usize>)> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let total = (na as f64).powi(ns as i32);
    if total > 1e7 {
        return Err(Error::OutOfRange(format!(
            "{total} deterministic policies is too many to enumerate"
        )));
    }
    let mut actions = vec![0usize; ns];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut table = DMatrix::zeros(ns, na);
        for (s, &a) in actions.iter().enumerate() {
            table[(s, a)] = 1.0;
        }
        let p = super::chain::induced_from_table(mdp, &table);
        // deterministic policies may induce periodic chains; skip those
        if let Ok(mu) = super::chain::stationary_of_matrix(&p) {
            let eta = mu.dot(&reward_from_table(mdp, &table));
            if best.as_ref().is_none_or(|(b, _)| eta > *b) {
                best = Some((eta, actions.clone()));
            }
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == ns {
                return best.ok_or_else(|| {
                    Error::Ergodicity("no deterministic policy induces an ergodic chain".into())
                });
            }
            actions[i] += 1;
            if actions[i] < na {
                break;
            }
            actions[i] = 0;
            i += 1;
        }
    }
}
