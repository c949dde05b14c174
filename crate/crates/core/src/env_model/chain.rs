use nalgebra::{DMatrix, DVector};

use super::{FiniteMdp, TabularSoftmaxPolicy, CONSTRUCTION_TOL};
use crate::error::{Error, Result};
use crate::linalg;

/// Residual tolerance for the stationary solve.
pub const SOLVER_TOL: f64 = 1e-10;

/// Where an induced chain came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainSource {
    pub mdp_index: Option<usize>,
    pub theta: Vec<f64>,
}

/// Row-stochastic state-to-state kernel `P_theta(s'|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    matrix: DMatrix<f64>,
    source: ChainSource,
}

impl InducedChain {
    /// Wrap an arbitrary row-stochastic matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Dimension("chain matrix must be square".into()));
        }
        let err = linalg::stochasticity_error(&matrix);
        if err > CONSTRUCTION_TOL {
            return Err(Error::InvalidModel(format!(
                "matrix is not row-stochastic (row-sum error {err:.3e})"
            )));
        }
        Ok(Self {
            matrix,
            source: ChainSource::default(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn source(&self) -> &ChainSource {
        &self.source
    }

    pub fn num_states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn with_source(mut self, source: ChainSource) -> Self {
        self.source = source;
        self
    }

    pub fn is_ergodic(&self) -> bool {
        linalg::is_primitive(&self.matrix)
    }

    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        stationary_distribution(self)
    }
}

/// `P_theta(s'|s) = sum_a P(s'|s,a) pi(a|s)`.
pub fn induced_transition_matrix(
    mdp: &FiniteMdp,
    policy: &TabularSoftmaxPolicy,
) -> Result<InducedChain> {
    if mdp.num_states() != policy.num_states() || mdp.num_actions() != policy.num_actions() {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    let matrix = induced_from_table(mdp, &policy.table());
    Ok(InducedChain {
        matrix,
        source: ChainSource {
            mdp_index: None,
            theta: policy.theta().to_vec(),
        },
    })
}

/// Induced kernel for an arbitrary action-probability table (`|S| x |A|`).
pub fn induced_from_table(mdp: &FiniteMdp, table: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mdp.num_states();
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let w = table[(s, a)];
            if w == 0.0 {
                continue;
            }
            for (t, p) in mdp.row(s, a).iter().enumerate() {
                m[(s, t)] += w * p;
            }
        }
    }
    m
}

/// Stationary distribution of an ergodic chain.
///
/// Solves `mu^T (P - I) = 0` with the last equation replaced by
/// `sum mu = 1`. Fails with [`Error::Ergodicity`] for chains that are not
/// irreducible and aperiodic.
pub fn stationary_distribution(chain: &InducedChain) -> Result<DVector<f64>> {
    stationary_of_matrix(chain.matrix())
}

pub fn stationary_of_matrix(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if !linalg::is_primitive(p) {
        return Err(Error::Ergodicity(
            "chain is reducible or periodic (no positive power)".into(),
        ));
    }
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mu = linalg::solve(&a, &rhs)?;
    let residual = (p.transpose() * &mu - &mu).amax();
    if residual > SOLVER_TOL || mu.iter().any(|x| *x <= 0.0) {
        return Err(Error::Solver(format!(
            "stationary solve residual {residual:.3e} or nonpositive entry"
        )));
    }
    Ok(mu)
}

/// Outcome of [`power_iteration`].
#[derive(Debug, Clone)]
pub struct PowerIteration {
    pub distribution: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Ratio of the last two successive-difference norms; an empirical
    /// contraction rate.
    pub contraction: f64,
}

/// Power iteration from the uniform distribution. Used for conditioning
/// diagnostics alongside the direct solve.
pub fn power_iteration(p: &DMatrix<f64>, tol: f64, max_iter: usize) -> PowerIteration {
    let n = p.nrows();
    let pt = p.transpose();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut last_diff = f64::NAN;
    let mut contraction = f64::NAN;
    for it in 1..=max_iter {
        let next = &pt * &x;
        let diff = (&next - &x).lp_norm(1);
        if last_diff.is_finite() && last_diff > 0.0 {
            contraction = diff / last_diff;
        }
        last_diff = diff;
        x = next;
        if diff < tol {
            return PowerIteration {
                distribution: x,
                iterations: it,
                converged: true,
                contraction,
            };
        }
    }
    PowerIteration {
        distribution: x,
        iterations: max_iter,
        converged: false,
        contraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_two_state() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        let mu = stationary_of_matrix(&p).unwrap();
        assert!((mu[0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((mu[1] - 1.0 / 6.0).abs() < 1e-14);
        let sym = DMatrix::from_element(2, 2, 0.5);
        let mu = stationary_of_matrix(&sym).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-15 && (mu[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_is_not_ergodic() {
        let chain = InducedChain::from_matrix(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(stationary_distribution(&chain), Err(Error::Ergodicity(_))));
    }

    #[test]
    fn power_iteration_agrees() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2]);
        let direct = stationary_of_matrix(&p).unwrap();
        let pi = power_iteration(&p, 1e-15, 10_000);
        assert!(pi.converged);
        assert!((direct - pi.distribution).amax() < 1e-12);
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let stuck = power_iteration(&flip, 1e-15, 100);
        // uniform start is already stationary for the flip chain, but the
        // direct solver must still refuse it
        assert!(stuck.converged);
        assert!(stationary_of_matrix(&flip).is_err());
    }

    #[test]
    fn from_matrix_validates() {
        assert!(InducedChain::from_matrix(DMatrix::from_row_slice(1, 2, &[0.5, 0.5])).is_err());
        assert!(InducedChain::from_matrix(DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5])).is_err());
    }
}
