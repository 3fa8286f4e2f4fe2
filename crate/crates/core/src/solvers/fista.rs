//! High-accuracy Lasso reference solver: accelerated proximal gradient with
//! adaptive restart on column-normalized data, finished by an exact solve
//! on the detected support.

use nalgebra::{DMatrix, DVector};

use super::{soft_threshold, spectral_norm};
use crate::error::{check_len, Error, Result};
use crate::linops::{norm2, ExplicitMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaOptions {
    pub max_iters: usize,
    /// Target gradient-map norm, relative to the gradient norm at zero.
    pub tol: f64,
    /// Iterations between attempts to finish with a support solve.
    pub polish_every: usize,
}

impl Default for FistaOptions {
    fn default() -> Self {
        Self {
            max_iters: 500_000,
            tol: 1e-12,
            polish_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptimum {
    pub x: Vec<f64>,
    pub p_star: f64,
    pub iterations: usize,
    /// Gradient-map norm at `x`, relative to the gradient norm at zero.
    pub grad_map_norm: f64,
    /// `x` comes from the support solve.
    pub polished: bool,
}

struct Scaled<'a> {
    a: &'a ExplicitMatrix,
    inv_norm: Vec<f64>,
    weight: Vec<f64>,
    b: &'a [f64],
    sl: f64,
}

impl Scaled<'_> {
    /// `A diag(inv_norm) z`.
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = z.iter().zip(&self.inv_norm).map(|(z, c)| z * c).collect();
        self.a.apply(&x).expect("shapes checked")
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.apply(z).iter().zip(self.b).map(|(a, b)| 2.0 * (a - b) / self.sl).collect();
        let g = self.a.apply_adjoint(&r).expect("shapes checked");
        g.iter().zip(&self.inv_norm).map(|(g, c)| g * c).collect()
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let fit: f64 = self.apply(z).iter().zip(self.b).map(|(a, b)| (a - b) * (a - b)).sum();
        // empty columns carry an infinite weight and a zero coordinate
        let l1: f64 = z.iter().zip(&self.weight).filter(|(z, _)| **z != 0.0).map(|(z, w)| w * z.abs()).sum();
        fit / self.sl + l1
    }

    fn prox(&self, v: &[f64], step: f64) -> Vec<f64> {
        v.iter()
            .zip(&self.weight)
            .map(|(v, w)| if w.is_finite() { soft_threshold(*v, step * w) } else { 0.0 })
            .collect()
    }

    fn grad_map_norm(&self, z: &[f64], lip: f64) -> f64 {
        let g = self.gradient(z);
        let v: Vec<f64> = z.iter().zip(&g).map(|(z, g)| z - g / lip).collect();
        let p = self.prox(&v, 1.0 / lip);
        lip * z.iter().zip(&p).map(|(z, p)| (z - p) * (z - p)).sum::<f64>().sqrt()
    }

    /// Solves the optimality conditions on the support of `z` with its signs
    /// fixed and accepts the result if it satisfies all of them.
    fn polish(&self, z: &[f64]) -> Option<Vec<f64>> {
        let support: Vec<usize> = (0..z.len()).filter(|&j| z[j] != 0.0).collect();
        let m = self.a.rows();
        if support.is_empty() || support.len() > m {
            return None;
        }
        let mut cols = DMatrix::<f64>::zeros(m, support.len());
        for (k, &j) in support.iter().enumerate() {
            let mut unit = vec![0.0; z.len()];
            unit[j] = 1.0;
            for (i, v) in self.apply(&unit).into_iter().enumerate() {
                cols[(i, k)] = v;
            }
        }
        let gram = cols.transpose() * &cols;
        let mut rhs = cols.transpose() * DVector::from_column_slice(self.b);
        for (k, &j) in support.iter().enumerate() {
            rhs[k] -= 0.5 * self.sl * self.weight[j] * z[j].signum();
        }
        let sol = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs)?,
        };
        let mut out = vec![0.0; z.len()];
        for (k, &j) in support.iter().enumerate() {
            if sol[k].signum() != z[j].signum() || sol[k] == 0.0 {
                return None;
            }
            out[j] = sol[k];
        }
        let g = self.gradient(&out);
        let kkt = (0..z.len()).all(|j| out[j] != 0.0 || !self.weight[j].is_finite() || g[j].abs() <= self.weight[j] * (1.0 + 1e-9));
        kkt.then_some(out)
    }
}

/// Minimizes `|Ax - b|^2 / sqrt(lambda) + sqrt(lambda) |x|_1` to high
/// accuracy. Needs entrywise access only for the final support solve.
pub fn lasso_oracle(a: &ExplicitMatrix, b: &[f64], lambda: f64, opts: &FistaOptions) -> Result<LassoOptimum> {
    check_len("right-hand side", a.rows(), b.len())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let n = a.cols();
    let sl = lambda.sqrt();
    let norms: Vec<f64> = a.col_norms_sq().iter().map(|x| x.sqrt()).collect();
    let inv_norm: Vec<f64> = norms.iter().map(|c| if *c > 0.0 { 1.0 / c } else { 0.0 }).collect();
    let weight: Vec<f64> = norms.iter().map(|c| if *c > 0.0 { sl / c } else { f64::INFINITY }).collect();
    let p = Scaled {
        a,
        inv_norm,
        weight,
        b,
        sl,
    };
    let scaled_op = crate::linops::FnOperator::new(
        a.rows(),
        n,
        |z: &[f64], y: &mut [f64]| y.copy_from_slice(&p.apply(z)),
        |y: &[f64], z: &mut [f64]| {
            let g = a.apply_adjoint(y).expect("shapes checked");
            z.iter_mut().zip(g.iter().zip(&p.inv_norm)).for_each(|(z, (g, c))| *z = g * c);
        },
    );
    let sigma = spectral_norm(&scaled_op, 10_000, 1e-12);
    let lip = 2.0 * sigma * sigma / sl * 1.01;
    let scale = norm2(&p.gradient(&vec![0.0; n])).max(1.0);
    let target = opts.tol * scale;
    let finish = |z: Vec<f64>, iterations: usize, polished: bool| {
        let x: Vec<f64> = z.iter().zip(&p.inv_norm).map(|(z, c)| z * c).collect();
        LassoOptimum {
            p_star: p.objective(&z),
            grad_map_norm: p.grad_map_norm(&z, lip) / scale,
            x,
            iterations,
            polished,
        }
    };
    if lip == 0.0 {
        return Ok(finish(vec![0.0; n], 0, false));
    }

    let mut z = vec![0.0; n];
    let mut y = z.clone();
    let mut t = 1.0f64;
    for it in 1..=opts.max_iters {
        let g = p.gradient(&y);
        let v: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y - g / lip).collect();
        let next = p.prox(&v, 1.0 / lip);
        let restart: f64 = y.iter().zip(&next).zip(&z).map(|((y, n), z)| (y - n) * (n - z)).sum();
        if restart > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = next.iter().zip(&z).map(|(n, z)| n + (t - 1.0) / tn * (n - z)).collect();
            t = tn;
        }
        let moved = next.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() * lip;
        z = next;
        if it % opts.polish_every == 0 || moved <= target {
            if let Some(zp) = p.polish(&z) {
                if p.grad_map_norm(&zp, lip) <= target && p.objective(&zp) <= p.objective(&z) + 1e-14 * p.objective(&z).abs() {
                    return Ok(finish(zp, it, true));
                }
            }
            if p.grad_map_norm(&z, lip) <= target {
                return Ok(finish(z, it, false));
            }
        }
    }
    let r = finish(z, opts.max_iters, false);
    Err(Error::NoConvergence {
        method: "Lasso oracle",
        iterations: r.iterations,
        residual: r.grad_map_norm,
    })
}
