//! Equilibration quality and conditioning diagnostics. All of these need
//! entrywise access.

use nalgebra::DMatrix;

use crate::equilibrate::{gradient_resolved, EquilibrationParams};
use crate::error::{check_len, Error, Result};
use crate::linops::ExplicitMatrix;

/// Largest dimension accepted by the dense SVD based diagnostics.
pub const DENSE_LIMIT: usize = 4000;

/// Root-mean-square deviation of the row norms of `DAE` from `alpha` and of
/// its column norms from `beta`, with `D = diag(exp(u))`, `E = diag(exp(v))`.
pub fn rms_error(a: &ExplicitMatrix, u: &[f64], v: &[f64], alpha: f64, beta: f64) -> Result<f64> {
    let (r, c) = a.scaled_norms_sq(u, v)?;
    let sum: f64 = r.iter().map(|x| (x.sqrt() - alpha).powi(2)).sum::<f64>()
        + c.iter().map(|x| (x.sqrt() - beta).powi(2)).sum::<f64>();
    Ok((sum / (r.len() + c.len()) as f64).sqrt())
}

/// [`rms_error`] for `DAD`, counting each row once.
pub fn rms_error_symmetric(a: &ExplicitMatrix, u: &[f64], alpha: f64) -> Result<f64> {
    check_len("symmetric matrix", a.rows(), a.cols())?;
    let (r, _) = a.scaled_norms_sq(u, u)?;
    let sum: f64 = r.iter().map(|x| (x.sqrt() - alpha).powi(2)).sum();
    Ok((sum / r.len() as f64).sqrt())
}

fn check_square(a: &ExplicitMatrix) -> Result<()> {
    check_len("square matrix", a.rows(), a.cols())?;
    if a.rows() > DENSE_LIMIT {
        return Err(Error::TooLarge {
            what: "singular value decomposition",
            size: a.rows(),
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

/// Singular values in decreasing order.
pub fn singular_values(a: &ExplicitMatrix) -> Result<Vec<f64>> {
    if a.rows().max(a.cols()) > DENSE_LIMIT {
        return Err(Error::TooLarge {
            what: "singular value decomposition",
            size: a.rows().max(a.cols()),
            limit: DENSE_LIMIT,
        });
    }
    Ok(dense_singular_values(a.to_nalgebra()))
}

fn dense_singular_values(m: DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values_unordered().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `sigma_max / sigma_min`; infinite when `sigma_min < 1e-12 sigma_max`.
pub fn condition_number(a: &ExplicitMatrix) -> Result<f64> {
    check_square(a)?;
    Ok(ratio(&singular_values(a)?))
}

fn ratio(s: &[f64]) -> f64 {
    let (hi, lo) = (s[0], s[s.len() - 1]);
    if hi == 0.0 || lo < 1e-12 * hi {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn nonsingular_log_values(a: &ExplicitMatrix) -> Result<Vec<f64>> {
    check_square(a)?;
    let s = singular_values(a)?;
    if ratio(&s).is_infinite() {
        return Err(Error::Singular);
    }
    Ok(s)
}

/// `ln Phi(A) = |A|_F^2 / 2 - sum ln sigma_i`.
pub fn log_phi(a: &ExplicitMatrix) -> Result<f64> {
    let s = nonsingular_log_values(a)?;
    Ok(s.iter().map(|x| 0.5 * x * x - x.ln()).sum())
}

/// `Phi(A) = exp(|A|_F^2 / 2) / det(A^T A)^(1/2)`, evaluated from the singular
/// values in the log domain. Overflows to infinity only when the value does.
pub fn phi(a: &ExplicitMatrix) -> Result<f64> {
    Ok(log_phi(a)?.exp())
}

/// Cheap lower and `Phi`-based upper bound on the condition number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaBounds {
    /// Largest max/min ratio of the row norms or of the column norms.
    pub lower: f64,
    /// `2 exp(-n/2) Phi(A)`.
    pub upper: f64,
}

pub fn kappa_bounds(a: &ExplicitMatrix) -> Result<KappaBounds> {
    let lp = log_phi(a)?;
    let spread = |v: Vec<f64>| {
        let hi = v.iter().copied().fold(0.0, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        (hi / lo).sqrt()
    };
    let lower = spread(a.row_norms_sq()).max(spread(a.col_norms_sq()));
    let upper = (std::f64::consts::LN_2 - 0.5 * a.rows() as f64 + lp).exp();
    Ok(KappaBounds { lower, upper })
}

/// Upper bound on the constant `C` of the `C / (gamma (T + 1))` expected-gap
/// guarantee, evaluated literally (it is astronomically loose).
pub fn convergence_constant_bound(a: &ExplicitMatrix, params: &EquilibrationParams) -> Result<f64> {
    let p = params.resolve(a.rows(), a.cols())?;
    let (m, n) = (a.rows(), a.cols());
    let big_m = p.max_log_scale;
    let (gu, gv) = gradient_resolved(a, &vec![big_m; m], &vec![big_m; n], &p);
    let grad_sq: f64 = gu.iter().chain(&gv).map(|g| g * g).sum();
    let r = a.row_norms_sq();
    let c = a.col_norms_sq();
    let stacked: f64 = r.iter().chain(&c).map(|x| x * x).sum();
    let mut fourth = 0.0;
    a.for_each_entry(|_, _, x| fourth += x.powi(4));
    let half = grad_sq
        + 4.0 * p.gamma * big_m * (p.alpha * p.alpha * m as f64 + p.beta * p.beta * n as f64)
        + (8.0 * big_m).exp() * (3.0 * stacked - 4.0 * fourth);
    Ok(2.0 * half)
}

/// Exact `E |g|^2` of the stochastic gradient at `(u, v)`:
/// `|grad f|^2 + 2 (sum r_i^2 + sum c_j^2) - 4 sum B_ij^4` with `B = DAE`.
pub fn stochastic_gradient_second_moment(
    a: &ExplicitMatrix,
    u: &[f64],
    v: &[f64],
    params: &EquilibrationParams,
) -> Result<f64> {
    let p = params.resolve(a.rows(), a.cols())?;
    let (r, c) = a.scaled_norms_sq(u, v)?;
    let (gu, gv) = gradient_resolved(a, u, v, &p);
    let grad_sq: f64 = gu.iter().chain(&gv).map(|g| g * g).sum();
    let sq: f64 = r.iter().chain(&c).map(|x| x * x).sum();
    let mut fourth = 0.0;
    a.for_each_entry(|i, j, x| fourth += (x * x * (2.0 * (u[i] + v[j])).exp()).powi(2));
    Ok(grad_sq + 2.0 * sq - 4.0 * fourth)
}
