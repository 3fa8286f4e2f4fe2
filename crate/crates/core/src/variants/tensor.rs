//! Equilibration of dense three-way arrays.

use crate::equilibrate::engine::{self, NormEstimator};
use crate::error::{check_len, Error, Result};
use crate::linops::DenseMatrix;
use crate::sampling::{stream, SignRng};

/// Dense `m x n x p` array, stored with the last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

/// The axis that survives a contraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    I,
    J,
    K,
}

impl Axis {
    const ALL: [Axis; 3] = [Axis::I, Axis::J, Axis::K];
}

impl Tensor3 {
    pub fn from_fn(m: usize, n: usize, p: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(m * n * p);
        for i in 0..m {
            for j in 0..n {
                for k in 0..p {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::from_vec((m, n, p), data)
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (m, n, p) = dims;
        if m == 0 || n == 0 || p == 0 {
            return Err(Error::InvalidParameter(format!("empty tensor {m}x{n}x{p}")));
        }
        check_len("tensor entries", m * n * p, data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, n, p) = self.dims;
        self.data[(i * n + j) * p + k]
    }

    fn len(&self, axis: Axis) -> usize {
        match axis {
            Axis::I => self.dims.0,
            Axis::J => self.dims.1,
            Axis::K => self.dims.2,
        }
    }

    /// Sum over all entries of `A_ijk^2 e^{2(u_i + v_j + w_k)}` grouped by
    /// the coordinate of block `axis`, excluding the factor of that block.
    pub(crate) fn axis_coefficients(&self, x: &[Vec<f64>], block: usize) -> Vec<f64> {
        let (m, n, p) = self.dims;
        let e: Vec<Vec<f64>> = x.iter().map(|b| b.iter().map(|v| (2.0 * v).exp()).collect()).collect();
        let mut out = vec![0.0; x[block].len()];
        for i in 0..m {
            for j in 0..n {
                for k in 0..p {
                    let a = self.get(i, j, k);
                    let w = a * a;
                    match block {
                        0 => out[i] += w * e[1][j] * e[2][k],
                        1 => out[j] += w * e[0][i] * e[2][k],
                        _ => out[k] += w * e[0][i] * e[1][j],
                    }
                }
            }
        }
        out
    }
}

/// Contracts `t` with `x` over the two axes other than `keep`:
/// `keep = K` maps an `m x n` matrix `X` to `sum_ij A_ijk X_ij`, and
/// likewise `J` takes `m x p` and `I` takes `n x p`.
pub fn tensor_contract(t: &Tensor3, keep: Axis, x: &DenseMatrix) -> Result<Vec<f64>> {
    let (m, n, p) = t.dims;
    let (r, c) = match keep {
        Axis::I => (n, p),
        Axis::J => (m, p),
        Axis::K => (m, n),
    };
    check_len("contraction matrix rows", r, x.rows())?;
    check_len("contraction matrix columns", c, x.cols())?;
    let mut out = vec![0.0; t.len(keep)];
    for i in 0..m {
        for j in 0..n {
            for k in 0..p {
                let a = t.get(i, j, k);
                match keep {
                    Axis::I => out[i] += a * x.get(j, k),
                    Axis::J => out[j] += a * x.get(i, k),
                    Axis::K => out[k] += a * x.get(i, j),
                }
            }
        }
    }
    Ok(out)
}

/// Exact squared norms of the slices of `A o (d (x) e (x) f)` along `axis`.
pub fn tensor_axis_norms_sq(t: &Tensor3, u: &[f64], v: &[f64], w: &[f64], axis: Axis) -> Result<Vec<f64>> {
    let (m, n, p) = t.dims;
    check_len("first log-scaling", m, u.len())?;
    check_len("second log-scaling", n, v.len())?;
    check_len("third log-scaling", p, w.len())?;
    let x = [u.to_vec(), v.to_vec(), w.to_vec()];
    let block = axis as usize;
    let mut s = t.axis_coefficients(&x, block);
    s.iter_mut().zip(&x[block]).for_each(|(s, y)| *s *= (2.0 * y).exp());
    Ok(s)
}

/// One estimate of the squared slice norms along `keep`, using sign vectors
/// `sa`, `sb` for the two other axes (in axis order).
pub fn tensor_axis_estimate(t: &Tensor3, x: &[Vec<f64>], keep: Axis, sa: &[f64], sb: &[f64]) -> Vec<f64> {
    let scale = |b: usize, s: &[f64]| -> Vec<f64> { x[b].iter().zip(s).map(|(v, s)| v.exp() * s).collect() };
    let (ba, bb) = match keep {
        Axis::I => (1, 2),
        Axis::J => (0, 2),
        Axis::K => (0, 1),
    };
    let (ya, yb) = (scale(ba, sa), scale(bb, sb));
    let outer = DenseMatrix::from_fn(ya.len(), yb.len(), |r, c| ya[r] * yb[c]);
    let mut z = tensor_contract(t, keep, &outer).expect("shapes follow the tensor");
    z.iter_mut()
        .zip(&x[keep as usize])
        .for_each(|(z, y)| *z = (*z * y.exp()) * (*z * y.exp()));
    z
}

/// Norm targets, regularization and budget of a tensor run.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorParams {
    /// Target slice norms along the three axes; `None` picks targets with
    /// `m alpha^2 = n beta^2 = p gamma_norm^2 = (m n p)^(1/3)`.
    pub targets: Option<[f64; 3]>,
    pub gamma: f64,
    pub max_log_scale: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TensorParams {
    fn default() -> Self {
        Self {
            targets: None,
            gamma: 1e-1,
            max_log_scale: 1e4f64.ln(),
            iterations: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedTensorParams {
    pub targets: [f64; 3],
    pub gamma: f64,
    pub max_log_scale: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl TensorParams {
    pub fn resolve(&self, dims: (usize, usize, usize)) -> Result<ResolvedTensorParams> {
        let sizes = [dims.0 as f64, dims.1 as f64, dims.2 as f64];
        let targets = match self.targets {
            None => {
                let k = (sizes[0] * sizes[1] * sizes[2]).cbrt();
                sizes.map(|s| (k / s).sqrt())
            }
            Some(t) => {
                if t.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(Error::InvalidParameter("tensor norm targets must be positive".into()));
                }
                let totals: Vec<f64> = t.iter().zip(&sizes).map(|(x, s)| s * x * x).collect();
                let hi = totals.iter().copied().fold(0.0, f64::max);
                let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
                if hi - lo > 1e-8 * hi {
                    return Err(Error::InconsistentTargets(format!(
                        "m alpha^2, n beta^2, p gamma_norm^2 = {totals:?} differ"
                    )));
                }
                t
            }
        };
        for (name, v) in [("gamma", self.gamma), ("max_log_scale", self.max_log_scale)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(ResolvedTensorParams {
            targets,
            gamma: self.gamma,
            max_log_scale: self.max_log_scale,
            iterations: self.iterations,
            seed: self.seed,
        })
    }
}

/// Regularized objective of the tensor problem.
pub fn tensor_objective(t: &Tensor3, u: &[f64], v: &[f64], w: &[f64], params: &TensorParams) -> Result<f64> {
    let rp = params.resolve(t.dims)?;
    let s = tensor_axis_norms_sq(t, u, v, w, Axis::I)?;
    let mut f = 0.5 * s.iter().sum::<f64>();
    for (x, target) in [u, v, w].into_iter().zip(rp.targets) {
        f += x.iter().map(|y| -target * target * y + 0.5 * rp.gamma * y * y).sum::<f64>();
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorScaling {
    pub u_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub w_bar: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub iterations: usize,
    pub bounds_held: bool,
}

struct TensorEstimator<'a> {
    t: &'a Tensor3,
    rngs: [SignRng; 3],
}

impl NormEstimator for TensorEstimator<'_> {
    fn block_sizes(&self) -> Vec<usize> {
        Axis::ALL.iter().map(|a| self.t.len(*a)).collect()
    }

    fn estimate(&mut self, x: &[Vec<f64>], out: &mut [Vec<f64>]) {
        for keep in Axis::ALL {
            let others: Vec<usize> = (0..3).filter(|b| *b != keep as usize).collect();
            let mut draw = |b: usize| {
                let mut s = vec![0.0; x[b].len()];
                self.rngs[b].fill_signs(&mut s);
                s
            };
            let (sa, sb) = (draw(others[0]), draw(others[1]));
            out[keep as usize] = tensor_axis_estimate(self.t, x, keep, &sa, &sb);
        }
    }
}

/// Projected stochastic gradient for tensor equilibration. The tensor is
/// only touched through [`tensor_contract`] with rank-one sign matrices.
pub fn sgd_equilibrate_tensor(t: &Tensor3, params: &TensorParams) -> Result<TensorScaling> {
    let rp = params.resolve(t.dims)?;
    let mut est = TensorEstimator {
        t,
        rngs: [
            SignRng::new(rp.seed, stream::ROW_SIGNS),
            SignRng::new(rp.seed, stream::COLUMN_SIGNS),
            SignRng::new(rp.seed, stream::TUBE_SIGNS),
        ],
    };
    let targets: Vec<Vec<f64>> = Axis::ALL
        .iter()
        .zip(rp.targets)
        .map(|(a, x)| vec![x * x; t.len(*a)])
        .collect();
    let schedule = engine::Schedule {
        gamma: rp.gamma,
        max_log_scale: rp.max_log_scale,
        iterations: rp.iterations,
    };
    let out = engine::run(&mut est, &targets, schedule, |_, _, _| {});
    let mut avg = out.average.into_iter();
    let (u, v, w) = (avg.next().unwrap(), avg.next().unwrap(), avg.next().unwrap());
    let exp = |x: &[f64]| x.iter().map(|y| y.exp()).collect::<Vec<_>>();
    Ok(TensorScaling {
        d: exp(&u),
        e: exp(&v),
        f: exp(&w),
        u_bar: u,
        v_bar: v,
        w_bar: w,
        iterations: rp.iterations,
        bounds_held: out.bounds_held,
    })
}
