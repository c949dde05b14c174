use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::SeededRng;

/// Tolerance below which `e` is considered to lie in the span of the features.
pub const SPAN_TOL: f64 = 1e-8;

/// State features `Phi` (`|S| x d_v`), full column rank, with `Phi v != e`
/// for every `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let (n, d) = phi.shape();
        if d == 0 || d >= n {
            return Err(Error::AssumptionViolation(format!(
                "feature dimension {d} must be in 1..{n}"
            )));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("non-finite feature entry".into()));
        }
        if linalg::column_rank(&phi, 1e-10) < d {
            return Err(Error::AssumptionViolation("feature matrix is rank deficient".into()));
        }
        let dist = ones_distance(&phi);
        if dist < SPAN_TOL {
            return Err(Error::AssumptionViolation(format!(
                "constant vector lies in the feature span (distance {dist:.3e})"
            )));
        }
        Ok(Self { phi })
    }

    /// Indicator features of every state except `anchor`; `Phi v` ranges over
    /// all value vectors with `V(anchor) = 0`.
    pub fn tabular_anchored(num_states: usize, anchor: usize) -> Result<Self> {
        if anchor >= num_states || num_states < 2 {
            return Err(Error::OutOfRange(format!(
                "anchor {anchor} for {num_states} states"
            )));
        }
        let mut phi = DMatrix::zeros(num_states, num_states - 1);
        let mut col = 0;
        for s in 0..num_states {
            if s != anchor {
                phi[(s, col)] = 1.0;
                col += 1;
            }
        }
        Self::new(phi)
    }

    /// Random features with entries uniform in `[-1, 1]`, redrawn until the
    /// distance of `e / sqrt(|S|)` from the span is at least `min_distance`.
    pub fn random(rng: &mut SeededRng, num_states: usize, dim: usize, min_distance: f64) -> Result<Self> {
        for _ in 0..1000 {
            let phi = DMatrix::from_fn(num_states, dim, |_, _| 2.0 * rng.uniform() - 1.0);
            if let Ok(f) = Self::new(phi) {
                if ones_distance(&f.phi) / (num_states as f64).sqrt() >= min_distance {
                    return Ok(f);
                }
            }
        }
        Err(Error::AssumptionViolation(
            "could not draw an admissible feature matrix".into(),
        ))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn num_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// `phi(s)` as a column vector.
    pub fn phi(&self, s: usize) -> DVector<f64> {
        self.phi.row(s).transpose()
    }

    /// `phi(s)^T v`.
    pub fn value(&self, s: usize, v: &DVector<f64>) -> f64 {
        self.phi.row(s).iter().zip(v.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Euclidean distance from `e` to the column span of `phi`.
fn ones_distance(phi: &DMatrix<f64>) -> f64 {
    let n = phi.nrows();
    let e = DVector::from_element(n, 1.0);
    let svd = phi.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let rank = linalg::column_rank(phi, 1e-10);
    let mut proj = DVector::zeros(n);
    for k in 0..rank {
        let col = u.column(k);
        proj += col * col.dot(&e);
    }
    (e - proj).norm()
}
