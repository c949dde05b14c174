use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Softmax policy with one logit per state-action pair:
/// `pi(a|s) = exp(theta[s,a]/T) / sum_b exp(theta[s,b]/T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    theta: Vec<f64>,
    temperature: f64,
}

impl TabularSoftmaxPolicy {
    /// Uniform policy (`theta = 0`).
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            theta: vec![0.0; num_states * num_actions],
            temperature: 1.0,
        }
    }

    pub fn from_theta(num_states: usize, num_actions: usize, theta: Vec<f64>) -> Result<Self> {
        Self::with_temperature(num_states, num_actions, theta, 1.0)
    }

    pub fn with_temperature(
        num_states: usize,
        num_actions: usize,
        theta: Vec<f64>,
        temperature: f64,
    ) -> Result<Self> {
        if theta.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                num_states * num_actions
            )));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidModel(format!("temperature {temperature} must be positive")));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("theta has a non-finite entry".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            theta,
            temperature,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Parameter dimension `|S| * |A|`.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// Copy with `theta` replaced; the caller guarantees the length.
    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.theta.len());
        Self {
            theta,
            ..self.clone()
        }
    }

    /// Overwrite the parameters in place.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.theta.len()
            )));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    /// Copy with coordinate `i` shifted by `delta`.
    pub fn perturbed(&self, i: usize, delta: f64) -> Self {
        let mut theta = self.theta.clone();
        theta[i] += delta;
        self.with_theta(theta)
    }

    /// `pi(.|s)`.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let logits = &self.theta[s * self.num_actions..(s + 1) * self.num_actions];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits
            .iter()
            .map(|x| ((x - max) / self.temperature).exp())
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs(s)[a]
    }

    /// `|S| x |A|` matrix of action probabilities.
    pub fn table(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.num_states, self.num_actions);
        for s in 0..self.num_states {
            for (a, p) in self.probs(s).into_iter().enumerate() {
                t[(s, a)] = p;
            }
        }
        t
    }

    /// Score `psi(s,a) = grad_theta log pi(a|s)`. Only the block of state `s`
    /// is nonzero: `(1[b = a] - pi(b|s)) / T`.
    pub fn score(&self, s: usize, a: usize) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.add_score(s, a, 1.0, &mut g);
        g
    }

    /// `out += weight * psi(s,a)` without allocating.
    pub fn add_score(&self, s: usize, a: usize, weight: f64, out: &mut DVector<f64>) {
        let p = self.probs(s);
        let base = s * self.num_actions;
        for (b, pb) in p.into_iter().enumerate() {
            let ind = if a == b { 1.0 } else { 0.0 };
            out[base + b] += weight * (ind - pb) / self.temperature;
        }
    }
}
