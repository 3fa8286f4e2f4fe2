//! Matrix-free iterative solvers and their equilibration-preconditioned
//! versions. Accuracy is always reported for the original, unscaled problem.

mod ccp;
mod fista;
mod lsqr;

pub use ccp::{ccp_lasso, ccp_lasso_preconditioned, lasso_objective, soft_threshold, CcpRun, LassoProblem};
pub use fista::{lasso_oracle, FistaOptions, LassoOptimum};
pub use lsqr::{lsqr, lsqr_preconditioned, LsqrRun};

use crate::linops::{norm2, LinearOperator};
use crate::sampling::{stream, SignRng};

/// Power iterations used for step sizes.
pub const STEP_POWER_ITERATIONS: usize = 100;

/// Largest singular value by power iteration on `A^T A` from a fixed random
/// start. Stops when the estimate changes by less than `tol` relatively.
pub fn spectral_norm<O: LinearOperator + ?Sized>(op: &O, iters: usize, tol: f64) -> f64 {
    let (m, n) = (op.rows(), op.cols());
    let mut x = vec![0.0; n];
    SignRng::new(0, stream::POWER_START).fill_signs(&mut x);
    let mut y = vec![0.0; m];
    let mut sigma = 0.0;
    for _ in 0..iters {
        let nx = norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        op.apply_into(&x, &mut y);
        op.apply_adjoint_into(&y, &mut x);
        let next = norm2(&y);
        let done = (next - sigma).abs() <= tol * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

/// [`spectral_norm`] with the fixed budget used for solver step sizes.
pub fn step_norm<O: LinearOperator + ?Sized>(op: &O) -> f64 {
    spectral_norm(op, STEP_POWER_ITERATIONS, 0.0)
}
