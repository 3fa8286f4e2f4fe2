//! Chambolle-Pock primal-dual iteration for the Lasso problem
//! `minimize |Ax - b|^2 / sqrt(lambda) + sqrt(lambda) |x|_1`.

use super::step_norm;
use crate::equilibrate::{sgd_equilibrate, EquilibrationParams};
use crate::error::{check_len, Error, Result};
use crate::linops::{CountingOperator, LinearOperator, MatvecCount, ScaledOperator};

/// Lasso data. `lambda` defaults to `1e-3 |A^T b|_inf`.
#[derive(Debug, Clone)]
pub struct LassoProblem<O> {
    pub op: O,
    pub b: Vec<f64>,
    pub lambda: f64,
}

impl<O: LinearOperator> LassoProblem<O> {
    pub fn new(op: O, b: Vec<f64>, lambda: f64) -> Result<Self> {
        check_len("right-hand side", op.rows(), b.len())?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { op, b, lambda })
    }

    pub fn with_default_lambda(op: O, b: Vec<f64>) -> Result<Self> {
        let atb = op.apply_adjoint(&b)?;
        let lambda = 1e-3 * atb.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Self::new(op, b, lambda)
    }
}

/// Objective value at `x` (one uncharged product with `A`).
pub fn lasso_objective<O: LinearOperator>(prob: &LassoProblem<O>, x: &[f64]) -> Result<f64> {
    let ax = prob.op.apply(x)?;
    let sl = prob.lambda.sqrt();
    let fit: f64 = ax.iter().zip(&prob.b).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(fit / sl + sl * x.iter().map(|v| v.abs()).sum::<f64>())
}

/// `sign(v) max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcpRun {
    pub x: Vec<f64>,
    /// Original objective `f(x_t)` for `t = 0..=iterations`.
    pub objective_history: Vec<f64>,
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
    pub iterations: usize,
    pub equilibration_iterations: usize,
    pub matvecs: MatvecCount,
}

impl CcpRun {
    /// `(f(x_t) - p_star) / f(0)` with the equilibration iterations as a flat
    /// prefix.
    pub fn total_gap_history(&self, p_star: f64) -> Vec<f64> {
        let f0 = self.objective_history[0];
        let mut h = vec![(f0 - p_star) / f0; self.equilibration_iterations];
        h.extend(self.objective_history.iter().map(|f| (f - p_star) / f0));
        h
    }

    /// First total iteration from which the gap stays at most `level`.
    pub fn iterations_to(&self, p_star: f64, level: f64) -> Option<usize> {
        let h = self.total_gap_history(p_star);
        let last_bad = h.iter().rposition(|g| *g > level);
        match last_bad {
            None => Some(0),
            Some(k) if k + 1 < h.len() => Some(k + 1),
            Some(_) => None,
        }
    }
}

/// Primal-dual iteration on `min_xb sqrt(lambda)|E xb|_1 + g(D^{-1} K xb)`
/// with `K = D A E`; unit weights give the plain method.
fn ccp_weighted<K: LinearOperator + ?Sized, O: LinearOperator>(
    k: &K,
    prob: &LassoProblem<O>,
    d: &[f64],
    e: &[f64],
    max_iters: usize,
    tau: f64,
    sigma: f64,
    theta: f64,
) -> Result<CcpRun> {
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameter("step sizes must be positive".into()));
    }
    let counted = CountingOperator::new(k);
    let (m, n) = (k.rows(), k.cols());
    let sl = prob.lambda.sqrt();
    let mut x = vec![0.0; n];
    let mut xbar = vec![0.0; n];
    let mut y = vec![0.0; m];
    let mut kx = vec![0.0; m];
    let mut kty = vec![0.0; n];
    let original = |xb: &[f64]| -> Result<f64> {
        let x: Vec<f64> = xb.iter().zip(e).map(|(x, e)| x * e).collect();
        lasso_objective(prob, &x)
    };
    let mut history = vec![original(&x)?];
    for _ in 0..max_iters {
        counted.apply_into(&xbar, &mut kx);
        for i in 0..m {
            let v = y[i] + sigma * kx[i];
            y[i] = (v - sigma * d[i] * prob.b[i]) / (1.0 + sigma * d[i] * d[i] * sl / 2.0);
        }
        counted.apply_adjoint_into(&y, &mut kty);
        for j in 0..n {
            let prev = x[j];
            x[j] = soft_threshold(prev - tau * kty[j], tau * sl * e[j]);
            xbar[j] = x[j] + theta * (x[j] - prev);
        }
        history.push(original(&x)?);
    }
    let x: Vec<f64> = x.iter().zip(e).map(|(x, e)| x * e).collect();
    Ok(CcpRun {
        x,
        objective_history: history,
        tau,
        sigma,
        theta,
        iterations: max_iters,
        equilibration_iterations: 0,
        matvecs: counted.counts(),
    })
}

/// Plain Chambolle-Pock from zero: one product with `A` and one with `A^T`
/// per iteration.
pub fn ccp_lasso<O: LinearOperator>(
    prob: &LassoProblem<O>,
    max_iters: usize,
    tau: f64,
    sigma: f64,
    theta: f64,
) -> Result<CcpRun> {
    let (m, n) = (prob.op.rows(), prob.op.cols());
    ccp_weighted(&prob.op, prob, &vec![1.0; m], &vec![1.0; n], max_iters, tau, sigma, theta)
}

/// Equilibrates `A`, then runs Chambolle-Pock on the scaled problem with
/// `tau = sigma = 0.9 / |DAE|_2` and `theta = 1`. The objective history is
/// that of the original problem at `x = E x_bar`.
pub fn ccp_lasso_preconditioned<O: LinearOperator>(
    prob: &LassoProblem<O>,
    equil: &EquilibrationParams,
    max_iters: usize,
) -> Result<CcpRun> {
    let scaling = sgd_equilibrate(&prob.op, equil)?;
    let k = ScaledOperator::new(&prob.op, scaling.d.clone(), scaling.e.clone())?;
    let step = 0.9 / step_norm(&k);
    let mut run = ccp_weighted(&k, prob, &scaling.d, &scaling.e, max_iters, step, step, 1.0)?;
    run.equilibration_iterations = scaling.iterations;
    run.matvecs = MatvecCount {
        apply: run.matvecs.apply + scaling.matvecs.apply,
        apply_adjoint: run.matvecs.apply_adjoint + scaling.matvecs.apply_adjoint,
    };
    Ok(run)
}
