//! Dense helpers over `nalgebra` used by the solvers and oracles.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Solve `a x = b` by LU; fails if the factorization is (numerically) singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "system {}x{} with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let min_sv = smallest_singular_value(a);
    if min_sv <= 1e-13 * scale {
        return Err(Error::Solver(format!(
            "matrix is singular (smallest singular value {min_sv:.3e})"
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Solver("LU factorization is singular".into()))
}

pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Numerical column rank.
pub fn column_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > tol * top.max(1.0)).count()
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}

/// Induced norm for row vectors acting from the left: max row sum of |a_ij|.
pub fn row_sum_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute deviation of a row sum from one, or infinity if any
/// entry is negative or non-finite.
pub fn stochasticity_error(p: &DMatrix<f64>) -> f64 {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
        return f64::INFINITY;
    }
    p.row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Primitive-matrix test: `P^k > 0` entrywise for `k = (n-1)^2 + 1`
/// (Wielandt), evaluated on the zero pattern by repeated squaring.
pub fn is_primitive(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    if n == 0 || !p.is_square() {
        return false;
    }
    let pattern: Vec<bool> = p.iter().map(|&x| x > 0.0).collect();
    // column-major, same as nalgebra storage
    let mul = |a: &[bool], b: &[bool]| -> Vec<bool> {
        let mut c = vec![false; n * n];
        for j in 0..n {
            for k in 0..n {
                if b[k + j * n] {
                    for i in 0..n {
                        if a[i + k * n] {
                            c[i + j * n] = true;
                        }
                    }
                }
            }
        }
        c
    };
    let mut exp = (n - 1) * (n - 1) + 1;
    let mut base = pattern;
    let mut acc: Option<Vec<bool>> = None;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => mul(&a, &base),
            });
        }
        exp >>= 1;
        if exp > 0 {
            base = mul(&base, &base);
        }
    }
    acc.map(|a| a.iter().all(|&x| x)).unwrap_or(false)
}

/// Eigenvalues of a real (generally nonsymmetric) matrix, sorted by
/// decreasing modulus.
pub fn eigenvalues_by_modulus(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.re.total_cmp(&x.re)));
    ev
}

/// Optimal matching distance `min_σ max_j |a_j - b_σ(j)|` between two
/// spectra of equal size. Exact for up to 8 eigenvalues, greedy beyond.
pub fn matching_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "spectra must have equal size");
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    if n <= 8 {
        let mut best = f64::INFINITY;
        let mut used = vec![false; n];
        fn rec(
            i: usize,
            cur: f64,
            a: &[Complex<f64>],
            b: &[Complex<f64>],
            used: &mut [bool],
            best: &mut f64,
        ) {
            if cur >= *best {
                return;
            }
            if i == a.len() {
                *best = cur;
                return;
            }
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    rec(i + 1, cur.max((a[i] - b[j]).norm()), a, b, used, best);
                    used[j] = false;
                }
            }
        }
        rec(0, 0.0, a, b, &mut used, &mut best);
        best
    } else {
        let mut used = vec![false; n];
        let mut worst: f64 = 0.0;
        for x in a {
            let (j, d) = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, y)| (j, (x - y).norm()))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .expect("nonempty");
            used[j] = true;
            worst = worst.max(d);
        }
        worst
    }
}
