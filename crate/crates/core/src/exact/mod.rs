//! Reference solvers with entrywise access: Sinkhorn-Knopp, exact
//! alternating minimization of the regularized problems, and a Newton oracle
//! for the optimal value.

mod lambert;
mod newton;

pub use lambert::{exp_quadratic_argmin, lambert_w, lambert_w_exp};
pub use newton::{newton_oracle, NewtonResult, NEWTON_LIMIT};

use crate::equilibrate::{EquilibrationParams, ResolvedParams};
use crate::error::{check_len, Error, Result};
use crate::linops::ExplicitMatrix;
use crate::metrics::rms_error;
use crate::variants::{check_targets, BlockStructure, Tensor3, TensorParams};

/// Output of [`sinkhorn_knopp`].
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub iterations: usize,
    /// RMS equilibration error of the returned scalings.
    pub residual: f64,
    pub converged: bool,
}

fn reject_empty_lines(a: &ExplicitMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = a.row_norms_sq();
    let c = a.col_norms_sq();
    if let Some(i) = r.iter().position(|x| *x == 0.0) {
        return Err(Error::NotEquilibratable(format!("row {i} is zero")));
    }
    if let Some(j) = c.iter().position(|x| *x == 0.0) {
        return Err(Error::NotEquilibratable(format!("column {j} is zero")));
    }
    Ok((r, c))
}

/// Alternating row and column normalization starting from `E = I`. One
/// iteration updates `D` and then `E`. Non-convergence is reported through
/// [`SinkhornResult::converged`].
pub fn sinkhorn_knopp(a: &ExplicitMatrix, alpha: f64, beta: f64, max_iters: usize, tol: f64) -> Result<SinkhornResult> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidParameter("norm targets must be positive".into()));
    }
    reject_empty_lines(a)?;
    let (m, n) = (a.rows(), a.cols());
    let mut d = vec![1.0; m];
    let mut e = vec![1.0; n];
    let log = |x: &[f64]| x.iter().map(|v| v.ln()).collect::<Vec<_>>();
    let mut residual = rms_error(a, &log(&d), &log(&e), alpha, beta)?;
    let mut iterations = 0;
    while residual > tol && iterations < max_iters {
        let mut acc = vec![0.0; m];
        a.for_each_entry(|i, j, x| acc[i] += x * x * e[j] * e[j]);
        d.iter_mut().zip(&acc).for_each(|(d, s)| *d = alpha / s.sqrt());
        let mut acc = vec![0.0; n];
        a.for_each_entry(|i, j, x| acc[j] += x * x * d[i] * d[i]);
        e.iter_mut().zip(&acc).for_each(|(e, s)| *e = beta / s.sqrt());
        iterations += 1;
        residual = rms_error(a, &log(&d), &log(&e), alpha, beta)?;
    }
    Ok(SinkhornResult {
        d,
        e,
        iterations,
        residual,
        converged: residual <= tol,
    })
}

/// Output of the exact alternating minimization oracles. `x` holds one
/// log-scaling vector per block (rows, columns, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingResult {
    pub x: Vec<Vec<f64>>,
    pub sweeps: usize,
    /// Norm of the projected gradient `x - clamp(x - grad)` at exit.
    pub stationarity: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Alternation {
    pub gamma: f64,
    pub bound: f64,
    pub max_sweeps: usize,
    pub tol: f64,
}

/// Block coordinate descent on `sum_k sum_i S_ki(x) e^{2 x_ki}/2 - c_ki x_ki
/// + gamma/2 |x|^2` where `coefficients(x, k)` returns `S_k`, which must not
/// depend on block `k` itself.
pub(crate) fn alternate(
    mut x: Vec<Vec<f64>>,
    targets: &[Vec<f64>],
    cfg: Alternation,
    mut coefficients: impl FnMut(&[Vec<f64>], usize) -> Vec<f64>,
) -> AlternatingResult {
    let Alternation {
        gamma,
        bound,
        max_sweeps,
        tol,
    } = cfg;
    let projected_sq = |x: f64, s: f64, c: f64| {
        let g = s * (2.0 * x).exp() - c + gamma * x;
        let p = x - (x - g).clamp(-bound, bound);
        p * p
    };
    let mut stationarity = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let mut before = 0.0;
        for k in 0..x.len() {
            let s = coefficients(&x, k);
            for ((xi, si), ci) in x[k].iter_mut().zip(&s).zip(&targets[k]) {
                before += projected_sq(*xi, *si, *ci);
                *xi = exp_quadratic_argmin(*si, *ci, gamma, bound);
            }
        }
        sweeps += 1;
        if before.sqrt() <= tol {
            stationarity = exact_stationarity(&x, targets, &mut coefficients, projected_sq);
            if stationarity <= tol {
                break;
            }
        }
    }
    if !stationarity.is_finite() || sweeps == max_sweeps {
        stationarity = exact_stationarity(&x, targets, &mut coefficients, projected_sq);
    }
    AlternatingResult {
        converged: stationarity <= tol,
        x,
        sweeps,
        stationarity,
    }
}

fn exact_stationarity(
    x: &[Vec<f64>],
    targets: &[Vec<f64>],
    coefficients: &mut impl FnMut(&[Vec<f64>], usize) -> Vec<f64>,
    projected_sq: impl Fn(f64, f64, f64) -> f64,
) -> f64 {
    let mut total = 0.0;
    for k in 0..x.len() {
        let s = coefficients(x, k);
        for ((xi, si), ci) in x[k].iter().zip(&s).zip(&targets[k]) {
            total += projected_sq(*xi, *si, *ci);
        }
    }
    total.sqrt()
}

/// `S` coefficients of the row block (`k = 0`) or column block (`k = 1`)
/// of a matrix problem with row blocks `rb` and column blocks `cb`.
fn matrix_coefficients(
    a: &ExplicitMatrix,
    row_of: &[usize],
    col_of: &[usize],
    x: &[Vec<f64>],
    k: usize,
) -> Vec<f64> {
    let mut s = vec![0.0; x[k].len()];
    if k == 0 {
        let ev: Vec<f64> = x[1].iter().map(|v| (2.0 * v).exp()).collect();
        a.for_each_entry(|i, j, v| s[row_of[i]] += v * v * ev[col_of[j]]);
    } else {
        let du: Vec<f64> = x[0].iter().map(|u| (2.0 * u).exp()).collect();
        a.for_each_entry(|i, j, v| s[col_of[j]] += v * v * du[row_of[i]]);
    }
    s
}

fn alternation(p: &ResolvedParams, max_sweeps: usize, tol: f64) -> Alternation {
    Alternation {
        gamma: p.gamma,
        bound: p.max_log_scale,
        max_sweeps,
        tol,
    }
}

fn identity_map(k: usize) -> Vec<usize> {
    (0..k).collect()
}

/// Exact alternating minimization of the regularized, boxed problem: every
/// half-step solves its block in closed form through Lambert W.
pub fn regularized_block_min(
    a: &ExplicitMatrix,
    params: &EquilibrationParams,
    max_sweeps: usize,
    tol: f64,
) -> Result<AlternatingResult> {
    let (m, n) = (a.rows(), a.cols());
    regularized_block_min_from(a, params, vec![0.0; m], vec![0.0; n], max_sweeps, tol)
}

/// [`regularized_block_min`] from a given starting point.
pub fn regularized_block_min_from(
    a: &ExplicitMatrix,
    params: &EquilibrationParams,
    u0: Vec<f64>,
    v0: Vec<f64>,
    max_sweeps: usize,
    tol: f64,
) -> Result<AlternatingResult> {
    let (m, n) = (a.rows(), a.cols());
    check_len("row log-scaling", m, u0.len())?;
    check_len("column log-scaling", n, v0.len())?;
    let p = params.resolve(m, n)?;
    let targets = [vec![p.alpha * p.alpha; m], vec![p.beta * p.beta; n]];
    let (ri, ci) = (identity_map(m), identity_map(n));
    Ok(alternate(vec![u0, v0], &targets, alternation(&p, max_sweeps, tol), |x, k| {
        matrix_coefficients(a, &ri, &ci, x, k)
    }))
}

/// Exact oracle for equilibration towards squared row norms `r` and squared
/// column norms `c`.
pub fn targets_block_min(
    a: &ExplicitMatrix,
    r: &[f64],
    c: &[f64],
    params: &EquilibrationParams,
    max_sweeps: usize,
    tol: f64,
) -> Result<AlternatingResult> {
    let (m, n) = (a.rows(), a.cols());
    check_targets(m, n, r, c)?;
    let p = params.resolve(m, n)?;
    let (ri, ci) = (identity_map(m), identity_map(n));
    let targets = [r.to_vec(), c.to_vec()];
    Ok(alternate(
        vec![vec![0.0; m], vec![0.0; n]],
        &targets,
        alternation(&p, max_sweeps, tol),
        |x, k| matrix_coefficients(a, &ri, &ci, x, k),
    ))
}

/// Exact oracle for block equilibration; `x` holds one value per block.
pub fn block_structure_min(
    a: &ExplicitMatrix,
    blocks: &BlockStructure,
    params: &EquilibrationParams,
    max_sweeps: usize,
    tol: f64,
) -> Result<AlternatingResult> {
    let (m, n) = (a.rows(), a.cols());
    blocks.check(m, n)?;
    let p = params.resolve(m, n)?;
    let targets = blocks.targets(&p);
    let (ri, ci) = (blocks.row_membership(), blocks.col_membership());
    Ok(alternate(
        vec![vec![0.0; blocks.row_blocks().len()], vec![0.0; blocks.col_blocks().len()]],
        &targets,
        alternation(&p, max_sweeps, tol),
        |x, k| matrix_coefficients(a, &ri, &ci, x, k),
    ))
}

/// Exact oracle for the three-way tensor problem.
pub fn tensor_block_min(t: &Tensor3, params: &TensorParams, max_sweeps: usize, tol: f64) -> Result<AlternatingResult> {
    let (m, n, p) = t.dims();
    let rp = params.resolve(t.dims())?;
    let targets = [
        vec![rp.targets[0] * rp.targets[0]; m],
        vec![rp.targets[1] * rp.targets[1]; n],
        vec![rp.targets[2] * rp.targets[2]; p],
    ];
    let cfg = Alternation {
        gamma: rp.gamma,
        bound: rp.max_log_scale,
        max_sweeps,
        tol,
    };
    Ok(alternate(
        vec![vec![0.0; m], vec![0.0; n], vec![0.0; p]],
        &targets,
        cfg,
        |x, k| t.axis_coefficients(x, k),
    ))
}

/// Exact coordinate descent for the symmetric problem
/// `1/4 sum_ij A_ij^2 e^{2u_i + 2u_j} - alpha^2 1'u + gamma/2 |u|^2`.
///
/// The diagonal entry makes each coordinate problem quartic in `e^{u_i}`, so
/// it is solved by safeguarded Newton instead of Lambert W.
pub fn symmetric_block_min(
    a: &ExplicitMatrix,
    params: &EquilibrationParams,
    max_sweeps: usize,
    tol: f64,
) -> Result<AlternatingResult> {
    let n = a.rows();
    check_len("square matrix", n, a.cols())?;
    let p = params.resolve(n, n)?;
    let c = p.alpha * p.alpha;
    let (gamma, bound) = (p.gamma, p.max_log_scale);
    let rows: Vec<Vec<(usize, f64)>> = {
        let mut rows = vec![Vec::new(); n];
        a.for_each_entry(|i, j, v| rows[i].push((j, v * v)));
        rows
    };
    let mut u = vec![0.0; n];
    let grad_at = |u: &[f64], i: usize, x: f64| -> f64 {
        let (mut off, mut diag) = (0.0, 0.0);
        for &(j, w) in &rows[i] {
            if j == i {
                diag += w;
            } else {
                off += w * (2.0 * u[j]).exp();
            }
        }
        off * (2.0 * x).exp() + diag * (4.0 * x).exp() - c + gamma * x
    };
    let stationarity = |u: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let g = grad_at(u, i, u[i]);
                let pgrad = u[i] - (u[i] - g).clamp(-bound, bound);
                pgrad * pgrad
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut sweeps = 0;
    let mut stat = stationarity(&u);
    while stat > tol && sweeps < max_sweeps {
        for i in 0..n {
            u[i] = scalar_root(|x| grad_at(&u, i, x), c / gamma, bound);
        }
        sweeps += 1;
        stat = stationarity(&u);
    }
    Ok(AlternatingResult {
        x: vec![u],
        sweeps,
        stationarity: stat,
        converged: stat <= tol,
    })
}

/// Root of the increasing function `g` on `[-bound, min(bound, ceiling)]`,
/// clamped to the interval when there is no sign change.
fn scalar_root(g: impl Fn(f64) -> f64, ceiling: f64, bound: f64) -> f64 {
    let mut hi = ceiling.min(bound);
    if g(hi) <= 0.0 {
        return hi;
    }
    let mut lo = -bound;
    if lo == f64::NEG_INFINITY {
        lo = -1.0;
        while g(lo) > 0.0 {
            lo *= 2.0;
        }
    } else if g(lo) >= 0.0 {
        return lo;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            break;
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let h = 1e-7 * x.abs().max(1.0);
        let slope = (g(x + h) - gx) / h;
        let newton = x - gx / slope;
        x = if newton > lo && newton < hi && slope > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrate::objective;
    use crate::linops::DenseMatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> ExplicitMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(m, n, |_, _| rng.random_range(0.1..3.0)).into()
    }

    fn scaled_norms(a: &ExplicitMatrix, d: &[f64], e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let b = a.scaled(d, e).unwrap();
        (
            b.row_norms_sq().iter().map(|x| x.sqrt()).collect(),
            b.col_norms_sq().iter().map(|x| x.sqrt()).collect(),
        )
    }

    #[test]
    fn sinkhorn_all_ones() {
        let a: ExplicitMatrix = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).into();
        let r = sinkhorn_knopp(&a, 1.0, 1.0, 100, 1e-14).unwrap();
        assert!(r.converged);
        // scalings are unique up to (d t, e / t); the balanced pair is d = e = 2^-1/4
        let c = 2f64.powf(-0.25);
        let t = (r.e[0] / r.d[0]).sqrt();
        for x in r.d.iter().map(|d| d * t).chain(r.e.iter().map(|e| e / t)) {
            assert!((x - c).abs() < 1e-14);
        }
        let (rn, cn) = scaled_norms(&a, &r.d, &r.e);
        assert!(rn.iter().chain(&cn).all(|x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn sinkhorn_diagonal_single_pass() {
        let a: ExplicitMatrix = DenseMatrix::from_diagonal(&[2.0, 3.0]).into();
        let r = sinkhorn_knopp(&a, 1.0, 1.0, 1, 0.0).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.d[0] - 0.5).abs() < 1e-15 && (r.d[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.e, vec![1.0, 1.0]);
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn sinkhorn_identity_and_errors() {
        let r = sinkhorn_knopp(&DenseMatrix::identity(3).into(), 1.0, 1.0, 10, 1e-12).unwrap();
        assert_eq!((r.iterations, r.d, r.e), (0, vec![1.0; 3], vec![1.0; 3]));
        let z: ExplicitMatrix = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).into();
        assert!(matches!(sinkhorn_knopp(&z, 1.0, 1.0, 10, 1e-12), Err(Error::NotEquilibratable(_))));
        let ok: ExplicitMatrix = DenseMatrix::from_rows(&[vec![1.0, 5.0], vec![0.0, 1.0]]).into();
        let r = sinkhorn_knopp(&ok, 1.0, 1.0, 3, 1e-15).unwrap();
        assert!(!r.converged && r.iterations == 3);
    }

    #[test]
    fn sinkhorn_equilibrates_random() {
        let a = random(6, 4, 1);
        let (alpha, beta) = ((4.0f64 / 6.0).powf(0.25), (6.0f64 / 4.0).powf(0.25));
        let r = sinkhorn_knopp(&a, alpha, beta, 10_000, 1e-12).unwrap();
        assert!(r.converged);
        let (rn, cn) = scaled_norms(&a, &r.d, &r.e);
        assert!(rn.iter().all(|x| (x - alpha).abs() < 1e-10));
        assert!(cn.iter().all(|x| (x - beta).abs() < 1e-10));
    }

    #[test]
    fn block_min_identity_fixed_point() {
        let a: ExplicitMatrix = DenseMatrix::identity(4).into();
        let r = regularized_block_min(&a, &EquilibrationParams::default(), 10, 1e-14).unwrap();
        assert!(r.converged);
        assert!(r.x.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn block_min_scalar_root() {
        let a: ExplicitMatrix = DenseMatrix::from_rows(&[vec![2.0]]).into();
        let p = EquilibrationParams {
            max_log_scale: 10.0,
            ..Default::default()
        }
        .with_targets(1.0, 1.0);
        let r = regularized_block_min(&a, &p, 10_000, 1e-13).unwrap();
        assert!(r.converged);
        let (u, v) = (r.x[0][0], r.x[1][0]);
        assert!((u - v).abs() < 1e-11);
        assert!((4.0 * (4.0 * u).exp() - 1.0 + 0.1 * u).abs() < 1e-11);
        assert!((u + 0.338).abs() < 1e-3);
    }

    #[test]
    fn block_min_half_steps_do_not_increase_objective() {
        let a = random(5, 4, 3);
        let params = EquilibrationParams::default();
        let p = params.resolve(5, 4).unwrap();
        let targets = [vec![p.alpha * p.alpha; 5], vec![p.beta * p.beta; 4]];
        let (ri, ci) = (identity_map(5), identity_map(4));
        let mut x = vec![vec![0.0; 5], vec![0.0; 4]];
        let mut f = objective(&a, &x[0], &x[1], &params).unwrap();
        for half in 0..20 {
            let k = half % 2;
            let s = matrix_coefficients(&a, &ri, &ci, &x, k);
            for (i, si) in s.iter().enumerate() {
                x[k][i] = exp_quadratic_argmin(*si, targets[k][i], p.gamma, p.max_log_scale);
            }
            let next = objective(&a, &x[0], &x[1], &params).unwrap();
            assert!(next <= f + 1e-13 * f.abs());
            f = next;
        }
    }

    #[test]
    fn small_gamma_approaches_sinkhorn() {
        let a = random(4, 4, 9);
        let p = EquilibrationParams {
            gamma: 1e-6,
            max_log_scale: f64::INFINITY,
            ..Default::default()
        }
        .with_targets(1.0, 1.0);
        let r = regularized_block_min(&a, &p, 200_000, 1e-9).unwrap();
        let d: Vec<f64> = r.x[0].iter().map(|u| u.exp()).collect();
        let e: Vec<f64> = r.x[1].iter().map(|v| v.exp()).collect();
        let (rn, cn) = scaled_norms(&a, &d, &e);
        let sk = sinkhorn_knopp(&a, 1.0, 1.0, 10_000, 1e-12).unwrap();
        let (srn, scn) = scaled_norms(&a, &sk.d, &sk.e);
        for (x, y) in rn.iter().chain(&cn).zip(srn.iter().chain(&scn)) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn symmetric_diagonal_case() {
        let a: ExplicitMatrix = DenseMatrix::from_diagonal(&[4.0, 1.0]).into();
        let p = EquilibrationParams {
            gamma: 1e-9,
            ..Default::default()
        }
        .with_targets(1.0, 1.0);
        let r = symmetric_block_min(&a, &p, 100, 1e-12).unwrap();
        assert!(r.converged);
        let d: Vec<f64> = r.x[0].iter().map(|u| u.exp()).collect();
        assert!((d[0] - 0.5).abs() < 1e-6 && (d[1] - 1.0).abs() < 1e-6, "{d:?}");
    }

    #[test]
    fn symmetric_oracle_zeroes_gradient() {
        let base = random(5, 5, 4);
        let a: ExplicitMatrix = DenseMatrix::from_fn(5, 5, |i, j| base.get(i, j) + base.get(j, i)).into();
        let p = EquilibrationParams::default();
        let r = symmetric_block_min(&a, &p, 10_000, 1e-11).unwrap();
        assert!(r.converged);
        let u = &r.x[0];
        let (rows, _) = a.scaled_norms_sq(u, u).unwrap();
        for (i, ri) in rows.iter().enumerate() {
            assert!((ri - 1.0 + 0.1 * u[i]).abs() < 1e-10);
        }
    }
}
