//! Damped Newton method for the regularized equilibration problem.

use nalgebra::{DMatrix, DVector};

use super::regularized_block_min_from;
use crate::equilibrate::{gradient_resolved, objective_resolved, EquilibrationParams};
use crate::error::{Error, Result};
use crate::linops::ExplicitMatrix;

/// Largest `m + n` accepted by [`newton_oracle`].
pub const NEWTON_LIMIT: usize = 4000;

const SUFFICIENT_DECREASE: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    /// Optimal value of the boxed, regularized problem.
    pub p_star: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Norm of the (projected) gradient at the returned point.
    pub grad_norm: f64,
    /// The unconstrained minimizer left the box and the result comes from
    /// exact alternating minimization instead.
    pub box_active: bool,
    /// Objective at zero and after every line-search step. Steps taken once
    /// the decrease is below rounding are not recorded.
    pub objective_history: Vec<f64>,
}

/// Minimizes the regularized objective by Newton's method with backtracking,
/// ignoring the box. If the minimizer violates the box, the problem is
/// re-solved by exact alternating minimization from the clamped point.
///
/// The Hessian is `[diag(2r + gamma), 2W; 2W^T, diag(2c + gamma)]` with
/// `W = |DAE|^2`; steps use the Schur complement on the smaller block.
pub fn newton_oracle(a: &ExplicitMatrix, params: &EquilibrationParams, tol: f64) -> Result<NewtonResult> {
    let (m, n) = (a.rows(), a.cols());
    if m + n > NEWTON_LIMIT {
        return Err(Error::TooLarge {
            what: "Newton oracle",
            size: m + n,
            limit: NEWTON_LIMIT,
        });
    }
    let p = params.resolve(m, n)?;
    let mut entries = Vec::with_capacity(a.nnz());
    a.for_each_entry(|i, j, x| {
        if x != 0.0 {
            entries.push((i, j, x * x))
        }
    });
    // eliminate the larger block
    let rows_big = m >= n;
    let (nb, ns) = if rows_big { (m, n) } else { (n, m) };
    let mut by_big: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    for &(i, j, w) in &entries {
        if rows_big {
            by_big[i].push((j, w));
        } else {
            by_big[j].push((i, w));
        }
    }

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut f = objective_resolved(a, &u, &v, &p);
    let mut objective_history = vec![f];
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let (gu, gv) = gradient_resolved(a, &u, &v, &p);
        grad_norm = gu.iter().chain(&gv).map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= tol {
            break;
        }
        if iterations == MAX_ITERS {
            return Err(Error::NoConvergence {
                method: "Newton oracle",
                iterations,
                residual: grad_norm,
            });
        }
        let (xb, xs) = if rows_big { (&u, &v) } else { (&v, &u) };
        let (gb, gs) = if rows_big { (&gu, &gv) } else { (&gv, &gu) };
        let (db, ds) = newton_direction(&by_big, xb, xs, gb, gs, p.gamma, ns)?;
        let (du, dv) = if rows_big { (db, ds) } else { (ds, db) };
        let slope: f64 = gu.iter().zip(&du).chain(gv.iter().zip(&dv)).map(|(g, d)| g * d).sum();
        if !(slope < 0.0) {
            break;
        }
        if -slope <= 1e-10 * (1.0 + f.abs()) {
            // inside the quadratic region the objective change is below rounding,
            // so take the full step and judge it by the gradient
            u.iter_mut().zip(&du).for_each(|(x, d)| *x += d);
            v.iter_mut().zip(&dv).for_each(|(x, d)| *x += d);
            f = objective_resolved(a, &u, &v, &p);
            iterations += 1;
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let un: Vec<f64> = u.iter().zip(&du).map(|(x, d)| x + t * d).collect();
            let vn: Vec<f64> = v.iter().zip(&dv).map(|(x, d)| x + t * d).collect();
            let fnew = objective_resolved(a, &un, &vn, &p);
            if fnew <= f + SUFFICIENT_DECREASE * t * slope && fnew < f {
                u = un;
                v = vn;
                f = fnew;
                objective_history.push(f);
                accepted = true;
                break;
            }
            t *= SHRINK;
        }
        iterations += 1;
        if !accepted {
            // no representable decrease left
            break;
        }
    }

    let bound = p.max_log_scale;
    if u.iter().chain(&v).any(|x| x.abs() > bound) {
        let clamp = |x: &[f64]| x.iter().map(|x| x.clamp(-bound, bound)).collect::<Vec<_>>();
        let r = regularized_block_min_from(a, params, clamp(&u), clamp(&v), 1_000_000, tol)?;
        if !r.converged {
            return Err(Error::NoConvergence {
                method: "boxed alternating minimization",
                iterations: r.sweeps,
                residual: r.stationarity,
            });
        }
        let mut x = r.x.into_iter();
        let (u, v) = (x.next().unwrap_or_default(), x.next().unwrap_or_default());
        return Ok(NewtonResult {
            p_star: objective_resolved(a, &u, &v, &p),
            u,
            v,
            iterations: iterations + r.sweeps,
            grad_norm: r.stationarity,
            box_active: true,
            objective_history,
        });
    }
    if grad_norm > tol {
        return Err(Error::NoConvergence {
            method: "Newton oracle",
            iterations,
            residual: grad_norm,
        });
    }
    Ok(NewtonResult {
        p_star: f,
        u,
        v,
        iterations,
        grad_norm,
        box_active: false,
        objective_history,
    })
}

/// Solves `H [db; ds] = -[gb; gs]` where `big` lists, for every coordinate
/// of the eliminated block, its couplings `(small index, w)`.
fn newton_direction(
    big: &[Vec<(usize, f64)>],
    xb: &[f64],
    xs: &[f64],
    gb: &[f64],
    gs: &[f64],
    gamma: f64,
    ns: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    // scaled couplings w_pq = A^2 e^{2 xb_p + 2 xs_q}
    let scaled: Vec<Vec<(usize, f64)>> = big
        .iter()
        .zip(xb)
        .map(|(row, xp)| row.iter().map(|&(q, w)| (q, w * (2.0 * (xp + xs[q])).exp())).collect())
        .collect();
    let hb: Vec<f64> = scaled
        .iter()
        .map(|row| 2.0 * row.iter().map(|(_, w)| w).sum::<f64>() + gamma)
        .collect();
    let mut hs = vec![gamma; ns];
    for row in &scaled {
        for &(q, w) in row {
            hs[q] += 2.0 * w;
        }
    }
    let mut schur = DMatrix::<f64>::from_diagonal(&DVector::from_vec(hs));
    let mut rhs = DVector::from_iterator(ns, gs.iter().map(|g| -g));
    for (p, row) in scaled.iter().enumerate() {
        let inv = 1.0 / hb[p];
        for &(q, wq) in row {
            rhs[q] += 2.0 * wq * inv * gb[p];
            for &(r, wr) in row {
                schur[(q, r)] -= 4.0 * wq * wr * inv;
            }
        }
    }
    let ds = match schur.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => schur.lu().solve(&rhs).ok_or(Error::Singular)?,
    };
    let db: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(p, row)| {
            let coupled: f64 = row.iter().map(|&(q, w)| 2.0 * w * ds[q]).sum();
            (-gb[p] - coupled) / hb[p]
        })
        .collect();
    Ok((db, ds.iter().copied().collect()))
}
