//! LSQR by Golub-Kahan bidiagonalization.

use crate::equilibrate::{sgd_equilibrate, EquilibrationParams};
use crate::error::{check_len, Error, Result};
use crate::linops::{norm2, CountingOperator, LinearOperator, MatvecCount, ScaledOperator};

#[derive(Debug, Clone, PartialEq)]
pub struct LsqrRun {
    pub x: Vec<f64>,
    /// `|A x_t - b| / |b|` for `t = 0..=iterations`, in original coordinates.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    /// Equilibration iterations spent before the first LSQR iteration.
    pub equilibration_iterations: usize,
    /// Products charged to the run, equilibration included.
    pub matvecs: MatvecCount,
    /// The bidiagonalization produced a zero vector before convergence.
    pub breakdown: bool,
    pub converged: bool,
}

impl LsqrRun {
    /// Residual against total iterations: a flat prefix of ones for the
    /// equilibration iterations, then one entry per LSQR iteration.
    pub fn total_history(&self) -> Vec<f64> {
        let mut h = vec![1.0; self.equilibration_iterations];
        h.extend_from_slice(&self.residual_history);
        h
    }

    /// First total iteration at which the residual is at most `level`.
    pub fn iterations_to(&self, level: f64) -> Option<usize> {
        self.total_history().iter().position(|r| *r <= level)
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn scale(a: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= a);
}

/// Least-squares solve of `op x = b` from `x = 0`. Each iteration costs one
/// product with `op` and one with its adjoint (plus one adjoint to start).
/// The recorded residuals are evaluated with one more, uncharged product.
pub fn lsqr<O: LinearOperator + ?Sized>(op: &O, b: &[f64], max_iters: usize, atol: f64) -> Result<LsqrRun> {
    check_len("right-hand side", op.rows(), b.len())?;
    let bnorm = norm2(b);
    lsqr_with_residual(op, b, max_iters, atol, |x| residual(op, x, b) / bnorm)
}

fn residual<O: LinearOperator + ?Sized>(op: &O, x: &[f64], b: &[f64]) -> f64 {
    let mut r = vec![0.0; op.rows()];
    op.apply_into(x, &mut r);
    r.iter().zip(b).map(|(r, b)| (r - b) * (r - b)).sum::<f64>().sqrt()
}

/// Core iteration; `relative_residual(x)` is reported and tested against
/// `atol`.
fn lsqr_with_residual<O: LinearOperator + ?Sized>(
    op: &O,
    b: &[f64],
    max_iters: usize,
    atol: f64,
    relative_residual: impl Fn(&[f64]) -> f64,
) -> Result<LsqrRun> {
    let counted = CountingOperator::new(op);
    let (m, n) = (op.rows(), op.cols());
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Err(Error::InvalidParameter("right-hand side must be nonzero".into()));
    }
    let mut x = vec![0.0; n];
    let mut history = vec![1.0];
    let mut u: Vec<f64> = b.iter().map(|v| v / bnorm).collect();
    let mut v = vec![0.0; n];
    counted.apply_adjoint_into(&u, &mut v);
    let mut alpha = norm2(&v);
    let finish = |x: Vec<f64>, history: Vec<f64>, breakdown: bool, counted: &CountingOperator<&O>| {
        let last = *history.last().expect("nonempty");
        Ok(LsqrRun {
            x,
            iterations: history.len() - 1,
            residual_history: history,
            equilibration_iterations: 0,
            matvecs: counted.counts(),
            breakdown,
            converged: last <= atol,
        })
    };
    if alpha == 0.0 {
        // b is orthogonal to the range: x = 0 is a least-squares solution
        return finish(x, history, true, &counted);
    }
    scale(1.0 / alpha, &mut v);
    let mut w = v.clone();
    let mut phibar = bnorm;
    let mut rhobar = alpha;
    let mut av = vec![0.0; m];
    let mut atu = vec![0.0; n];

    for _ in 0..max_iters {
        counted.apply_into(&v, &mut av);
        u.iter_mut().zip(&av).for_each(|(u, a)| *u = a - alpha * *u);
        let beta = norm2(&u);
        if beta > 0.0 {
            scale(1.0 / beta, &mut u);
        }
        counted.apply_adjoint_into(&u, &mut atu);
        v.iter_mut().zip(&atu).for_each(|(v, a)| *v = a - beta * *v);
        alpha = norm2(&v);
        if alpha > 0.0 {
            scale(1.0 / alpha, &mut v);
        }

        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        axpy(phi / rho, &w, &mut x);
        w.iter_mut().zip(&v).for_each(|(w, v)| *w = v - (theta / rho) * *w);

        let rel = relative_residual(&x);
        history.push(rel);
        if rel <= atol {
            break;
        }
        if beta == 0.0 || alpha == 0.0 {
            return finish(x, history, true, &counted);
        }
    }
    finish(x, history, false, &counted)
}

/// Equilibrates the square operator with `equil.iterations` stochastic
/// gradient steps, solves `(DAE) x_bar = D b` by LSQR and returns
/// `x = E x_bar`. Residuals are those of the original system `Ax = b`.
pub fn lsqr_preconditioned<O: LinearOperator + ?Sized>(
    op: &O,
    b: &[f64],
    equil: &EquilibrationParams,
    lsqr_iters: usize,
    atol: f64,
) -> Result<LsqrRun> {
    check_len("square operator", op.rows(), op.cols())?;
    check_len("right-hand side", op.rows(), b.len())?;
    let scaling = sgd_equilibrate(op, equil)?;
    let scaled = ScaledOperator::new(op, scaling.d.clone(), scaling.e.clone())?;
    let db: Vec<f64> = scaling.d.iter().zip(b).map(|(d, b)| d * b).collect();
    let e = &scaling.e;
    let bnorm = norm2(b);
    let mut run = lsqr_with_residual(&scaled, &db, lsqr_iters, atol, |xb| {
        let x: Vec<f64> = xb.iter().zip(e).map(|(x, e)| x * e).collect();
        residual(op, &x, b) / bnorm
    })?;
    run.x.iter_mut().zip(e).for_each(|(x, e)| *x *= e);
    run.equilibration_iterations = scaling.iterations;
    run.matvecs = MatvecCount {
        apply: run.matvecs.apply + scaling.matvecs.apply,
        apply_adjoint: run.matvecs.apply_adjoint + scaling.matvecs.apply_adjoint,
    };
    Ok(run)
}
