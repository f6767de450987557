//! Dense complex solves with a 1-norm condition estimate.

use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Solve};
use faer::{Col, Mat};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Systems whose condition estimate exceeds this are rejected as singular.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Solution of `A x = b` together with diagnostics.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub x: Col<Complex64>,
    pub condition: f64,
    /// `‖A x - b‖∞ / ‖b‖∞`.
    pub residual: f64,
}

/// Maximum column sum; any non-finite entry yields infinity.
pub fn norm1(a: &Mat<Complex64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.col(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, |acc: f64, c| if c.is_nan() { f64::INFINITY } else { acc.max(c) })
}

fn norm_inf(v: &Col<Complex64>) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn solve_adjoint(lu: &PartialPivLu<Complex64>, b: &Col<Complex64>) -> Col<Complex64> {
    // Aᴴ x = b  <=>  Aᵀ conj(x) = conj(b)
    let rhs = Col::from_fn(b.nrows(), |i| b[i].conj());
    let y = lu.solve_transpose(&rhs);
    Col::from_fn(y.nrows(), |i| y[i].conj())
}

/// Hager's estimate of `‖A⁻¹‖₁` using a handful of solves.
fn inverse_norm1_estimate(lu: &PartialPivLu<Complex64>, n: usize) -> f64 {
    let mut x = Col::from_fn(n, |_| Complex64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let y = lu.solve(&x);
        let current: f64 = y.iter().map(|v| v.norm()).sum();
        if !current.is_finite() {
            return f64::INFINITY;
        }
        if current <= estimate {
            break;
        }
        estimate = current;
        let sign = Col::from_fn(n, |i| {
            let r = y[i].norm();
            if r == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                y[i] / r
            }
        });
        let z = solve_adjoint(lu, &sign);
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let zx: f64 = z.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        if j == last_j || zmax <= zx {
            break;
        }
        last_j = j;
        x = Col::zeros(n);
        x[j] = Complex64::new(1.0, 0.0);
    }
    // Alternating probe catches matrices the unit-vector walk underestimates.
    let probe = Col::from_fn(n, |i| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let ramp = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        Complex64::new(sign * (1.0 + ramp), 0.0)
    });
    let alt = lu.solve(&probe).iter().map(|v| v.norm()).sum::<f64>() * 2.0 / (3.0 * n as f64);
    estimate.max(alt)
}

/// Solves `A x = b`, rejecting systems with condition estimate above [`CONDITION_LIMIT`].
pub fn solve(a: &Mat<Complex64>, b: &Col<Complex64>) -> Result<DenseSolution> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.nrows(),
        });
    }
    let lu = a.partial_piv_lu();
    let condition = norm1(a) * inverse_norm1_estimate(&lu, n);
    // NaN (exact zero pivot) lands here too.
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularSystem {
            condition: if condition.is_nan() { f64::INFINITY } else { condition },
        });
    }
    let x = lu.solve(b);
    let r = a * &x - b;
    let b_norm = norm_inf(b);
    let residual = if b_norm > 0.0 {
        norm_inf(&r) / b_norm
    } else {
        norm_inf(&r)
    };
    Ok(DenseSolution { x, condition, residual })
}

/// Full inverse with its 1-norm condition number.
pub fn invert(a: &Mat<Complex64>) -> Result<(Mat<Complex64>, f64)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    let inverse = a.partial_piv_lu().inverse();
    let condition = norm1(a) * norm1(&inverse);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularSystem {
            condition: if condition.is_nan() { f64::INFINITY } else { condition },
        });
    }
    Ok((inverse, condition))
}
