use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for probability-vector and row-sum checks at construction.
pub const CONSTRUCTION_TOL: f64 = 1e-12;

/// A finite MDP with transition tensor `P(s'|s,a)` and reward `r(s,a)`.
///
/// Both tensors are stored flattened row-major: `transition[(s * A + a) * S + s']`
/// and `reward[s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

/// On-disk layout. Validated on ingestion through [`FiniteMdp::new`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MdpFile {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

impl TryFrom<MdpFile> for FiniteMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        FiniteMdp::new(f.num_states, f.num_actions, f.transition, f.reward)
    }
}

impl From<FiniteMdp> for MdpFile {
    fn from(m: FiniteMdp) -> Self {
        MdpFile {
            num_states: m.num_states,
            num_actions: m.num_actions,
            transition: m.transition,
            reward: m.reward,
        }
    }
}

impl FiniteMdp {
    /// Validates stochasticity, `|r| <= 1`, and that the chain induced by
    /// the uniform policy is irreducible and aperiodic.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self::new_unchecked_ergodicity(num_states, num_actions, transition, reward)?;
        let uniform = mdp.uniform_policy_kernel();
        if !linalg::is_primitive(&uniform) {
            return Err(Error::Ergodicity(
                "chain induced by the uniform policy is not primitive".into(),
            ));
        }
        Ok(mdp)
    }

    fn new_unchecked_ergodicity(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel("empty state or action space".into()));
        }
        let want_p = num_states * num_actions * num_states;
        let want_r = num_states * num_actions;
        if transition.len() != want_p || reward.len() != want_r {
            return Err(Error::Dimension(format!(
                "expected {want_p} transition and {want_r} reward entries, got {} and {}",
                transition.len(),
                reward.len()
            )));
        }
        for (i, row) in transition.chunks(num_states).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::InvalidModel(format!(
                    "row (s={}, a={}) has an entry outside [0, 1]",
                    i / num_actions,
                    i % num_actions
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > CONSTRUCTION_TOL {
                return Err(Error::InvalidModel(format!(
                    "row (s={}, a={}) sums to {sum}",
                    i / num_actions,
                    i % num_actions
                )));
            }
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite() || r.abs() > 1.0) {
            return Err(Error::InvalidModel(format!("reward {r} outside [-1, 1]")));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
        })
    }

    /// Build from per-action kernels `kernels[a][(s, s')]` and a reward matrix
    /// of shape `|S| x |A|`.
    pub fn from_kernels(kernels: &[DMatrix<f64>], reward: &DMatrix<f64>) -> Result<Self> {
        let na = kernels.len();
        if na == 0 {
            return Err(Error::InvalidModel("no actions".into()));
        }
        let ns = kernels[0].nrows();
        if kernels.iter().any(|k| k.nrows() != ns || k.ncols() != ns)
            || reward.nrows() != ns
            || reward.ncols() != na
        {
            return Err(Error::Dimension("kernel or reward shape mismatch".into()));
        }
        let mut transition = Vec::with_capacity(ns * na * ns);
        let mut r = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for (a, k) in kernels.iter().enumerate() {
                transition.extend(k.row(s).iter());
                r.push(reward[(s, a)]);
            }
        }
        Self::new(ns, na, transition, r)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `P(s'|s,a)`.
    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + s_next]
    }

    /// Next-state distribution for `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn transition_flat(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_flat(&self) -> &[f64] {
        &self.reward
    }

    /// Reward as an `|S| x |A|` matrix.
    pub fn reward_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states, self.num_actions, &self.reward)
    }

    /// `|S| x |S|` kernel of a single action.
    pub fn action_kernel(&self, a: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_states, self.num_states, |s, t| self.p(s, a, t))
    }

    /// Same dynamics, replaced reward (validated).
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(self.num_states, self.num_actions, self.transition.clone(), reward)
    }

    /// Largest elementwise transition gap `max |P_self - P_other|`.
    pub fn transition_gap(&self, other: &FiniteMdp) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .transition
            .iter()
            .zip(&other.transition)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn check_same_shape(&self, other: &FiniteMdp) -> Result<()> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::Dimension(format!(
                "MDP shapes {}x{} and {}x{} differ",
                self.num_states, self.num_actions, other.num_states, other.num_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn uniform_policy_kernel(&self) -> DMatrix<f64> {
        let w = 1.0 / self.num_actions as f64;
        DMatrix::from_fn(self.num_states, self.num_states, |s, t| {
            (0..self.num_actions).map(|a| w * self.p(s, a, t)).sum()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// `K` environments sharing states, actions, and reward, together with the
/// collection law `q` and the optimization law `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSet {
    mdps: Vec<FiniteMdp>,
    collect: Vec<f64>,
    optimize: Vec<f64>,
}

impl EnvironmentSet {
    pub fn new(mdps: Vec<FiniteMdp>, collect: Vec<f64>, optimize: Vec<f64>) -> Result<Self> {
        let first = mdps
            .first()
            .ok_or_else(|| Error::InvalidModel("environment set is empty".into()))?;
        for m in &mdps[1..] {
            first.check_same_shape(m)?;
            if m.reward != first.reward {
                return Err(Error::InvalidModel(
                    "environments must share the reward matrix".into(),
                ));
            }
        }
        check_probability_vector("collect distribution q", &collect, mdps.len())?;
        check_probability_vector("optimize distribution beta", &optimize, mdps.len())?;
        Ok(Self {
            mdps,
            collect,
            optimize,
        })
    }

    /// A single environment with `q = beta = [1]`.
    pub fn single(mdp: FiniteMdp) -> Self {
        Self {
            mdps: vec![mdp],
            collect: vec![1.0],
            optimize: vec![1.0],
        }
    }

    /// Same environments under a different `(q, beta)`.
    pub fn with_mixing(&self, collect: Vec<f64>, optimize: Vec<f64>) -> Result<Self> {
        Self::new(self.mdps.clone(), collect, optimize)
    }

    pub fn mdps(&self) -> &[FiniteMdp] {
        &self.mdps
    }

    pub fn mdp(&self, k: usize) -> &FiniteMdp {
        &self.mdps[k]
    }

    pub fn len(&self) -> usize {
        self.mdps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mdps.is_empty()
    }

    pub fn collect(&self) -> &[f64] {
        &self.collect
    }

    pub fn optimize(&self) -> &[f64] {
        &self.optimize
    }

    pub fn num_states(&self) -> usize {
        self.mdps[0].num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.mdps[0].num_actions()
    }
}

/// Collection law proportional to environment throughputs, `q_i = nu_i / sum nu`.
pub fn collect_from_throughputs(throughputs: &[f64]) -> Result<Vec<f64>> {
    if throughputs.is_empty() || throughputs.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidModel(
            "throughputs must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = throughputs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidModel("total throughput is zero".into()));
    }
    Ok(throughputs.iter().map(|x| x / total).collect())
}

pub(crate) fn check_probability_vector(name: &str, p: &[f64], len: usize) -> Result<()> {
    if p.len() != len {
        return Err(Error::Dimension(format!(
            "{name} has length {}, expected {len}",
            p.len()
        )));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidModel(format!("{name} has a negative entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > CONSTRUCTION_TOL {
        return Err(Error::InvalidModel(format!("{name} sums to {sum}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> FiniteMdp {
        FiniteMdp::new(
            2,
            2,
            vec![0.9, 0.1, 0.9, 0.1, 0.5, 0.5, 0.5, 0.5],
            vec![1.0, 1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_rows_and_rewards() {
        assert!(matches!(
            FiniteMdp::new(2, 1, vec![0.5, 0.6, 0.5, 0.5], vec![0.0, 0.0]),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            FiniteMdp::new(2, 1, vec![0.5, 0.5, 0.5, 0.5], vec![1.5, 0.0]),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            FiniteMdp::new(2, 1, vec![0.5, 0.5], vec![0.0, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rejects_non_ergodic() {
        let identity = FiniteMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]);
        assert!(matches!(identity, Err(Error::Ergodicity(_))));
        let flip = FiniteMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0]);
        assert!(matches!(flip, Err(Error::Ergodicity(_))));
    }

    #[test]
    fn json_round_trip_validates() {
        let m = two_state();
        let back = FiniteMdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = r#"{"num_states":2,"num_actions":1,"transition":[1,0,0,1],"reward":[0,0]}"#;
        assert!(FiniteMdp::from_json(bad).is_err());
    }

    #[test]
    fn environment_set_checks() {
        let m = two_state();
        let other = m.with_reward(vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(EnvironmentSet::new(vec![m.clone(), other], vec![0.5, 0.5], vec![0.5, 0.5]).is_err());
        assert!(EnvironmentSet::new(vec![m.clone(), m.clone()], vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
        assert!(EnvironmentSet::new(vec![m.clone(), m.clone()], vec![0.3, 0.7], vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn throughput_helper() {
        let q = collect_from_throughputs(&[1.0, 9.0]).unwrap();
        assert_eq!(q, vec![0.1, 0.9]);
        assert!(collect_from_throughputs(&[0.0, 0.0]).is_err());
    }
}
