//! Symmetric, prescribed-norm, block and tensor equilibration, each driven by
//! the shared projected stochastic gradient loop.

mod tensor;

pub use tensor::{
    sgd_equilibrate_tensor, tensor_axis_estimate, tensor_axis_norms_sq, tensor_contract, tensor_objective, Axis, ResolvedTensorParams,
    Tensor3, TensorParams, TensorScaling,
};

use crate::equilibrate::engine::{self, NormEstimator};
use crate::equilibrate::{
    EquilibrationParams, GradientRngs, ProductEstimator, ResolvedParams, ScalingResult,
};
use crate::error::{check_len, Error, Result};
use crate::linops::{dot, norm2, CountingOperator, ExplicitMatrix, LinearOperator};
use crate::sampling::{stream, SignRng};

/// Checks that `r`, `c` are positive squared-norm targets with `1'r = 1'c`.
pub fn check_targets(m: usize, n: usize, r: &[f64], c: &[f64]) -> Result<()> {
    check_len("row targets", m, r.len())?;
    check_len("column targets", n, c.len())?;
    if let Some(x) = r.iter().chain(c).find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!("norm targets must be positive, got {x}")));
    }
    let (sr, sc): (f64, f64) = (r.iter().sum(), c.iter().sum());
    if (sr - sc).abs() > 1e-8 * sr.max(sc) {
        return Err(Error::InconsistentTargets(format!(
            "row targets sum to {sr}, column targets to {sc}"
        )));
    }
    Ok(())
}

fn into_result(
    out: engine::Outcome,
    expand: impl Fn(usize, &[f64]) -> Vec<f64>,
    iterations: usize,
    matvecs: crate::linops::MatvecCount,
) -> ScalingResult {
    let mut avg = out.average.into_iter();
    let u = avg.next().expect("row block");
    let v = avg.next().unwrap_or_else(|| u.clone());
    ScalingResult::from_logs(expand(0, &u), expand(1, &v), Vec::new(), iterations, matvecs, out.bounds_held)
}

/// Relative defect `|<Ax, y> - <x, Ay>|` over three seeded probe pairs.
pub fn symmetry_defect<O: LinearOperator + ?Sized>(op: &O, seed: u64) -> Result<f64> {
    check_len("symmetric operator", op.rows(), op.cols())?;
    let n = op.rows();
    let mut rng = SignRng::new(seed, stream::SYMMETRY_PROBES);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let x = crate::sampling::rademacher(n, &mut rng);
        let y = crate::sampling::rademacher(n, &mut rng);
        let (ax, ay) = (op.apply(&x)?, op.apply(&y)?);
        let scale = norm2(&ax) * norm2(&y) + norm2(&x) * norm2(&ay);
        if scale > 0.0 {
            worst = worst.max((dot(&ax, &y) - dot(&x, &ay)).abs() / scale);
        }
    }
    Ok(worst)
}

struct SymmetricEstimator<'a, O: ?Sized> {
    op: &'a O,
    rng: SignRng,
    d: Vec<f64>,
    s: Vec<f64>,
}

impl<O: LinearOperator + ?Sized> NormEstimator for SymmetricEstimator<'_, O> {
    fn block_sizes(&self) -> Vec<usize> {
        vec![self.op.rows()]
    }

    fn estimate(&mut self, x: &[Vec<f64>], out: &mut [Vec<f64>]) {
        self.d.iter_mut().zip(&x[0]).for_each(|(d, u)| *d = u.exp());
        self.rng.fill_signs(&mut self.s);
        self.s.iter_mut().zip(&self.d).for_each(|(s, d)| *s *= d);
        self.op.apply_into(&self.s, &mut out[0]);
        out[0].iter_mut().zip(&self.d).for_each(|(z, d)| *z = (*z * d) * (*z * d));
    }
}

/// Symmetric equilibration `D A D`: one log-scaling vector, one product with
/// `A` per iteration. Only `alpha` of the targets is used.
pub fn sgd_equilibrate_symmetric<O: LinearOperator + ?Sized>(
    op: &O,
    params: &EquilibrationParams,
) -> Result<ScalingResult> {
    sgd_equilibrate_symmetric_observed(op, params, |_: usize, _: &[f64], _: &[f64]| {})
}

/// [`sgd_equilibrate_symmetric`] with a hook seeing `(t, u_t, u_bar)`.
pub fn sgd_equilibrate_symmetric_observed<O: LinearOperator + ?Sized>(
    op: &O,
    params: &EquilibrationParams,
    mut observe: impl FnMut(usize, &[f64], &[f64]),
) -> Result<ScalingResult> {
    let n = op.rows();
    let p = params.resolve(n, op.cols())?;
    let defect = symmetry_defect(op, p.seed)?;
    if defect > 1e-10 {
        return Err(Error::Asymmetric { defect });
    }
    let counted = CountingOperator::new(op);
    let mut est = SymmetricEstimator {
        op: &counted,
        rng: SignRng::new(p.seed, stream::COLUMN_SIGNS),
        d: vec![0.0; n],
        s: vec![0.0; n],
    };
    let targets = [vec![p.alpha * p.alpha; n]];
    let out = engine::run(&mut est, &targets, p.schedule(), |t, x, avg| observe(t, &x[0], &avg[0]));
    Ok(into_result(out, |_, x| x.to_vec(), p.iterations, counted.counts()))
}

/// Equilibration towards squared row norms `r` and squared column norms `c`
/// (`1'r = 1'c`). The `alpha`, `beta` fields of `params` are not used.
pub fn sgd_equilibrate_targets<O: LinearOperator + ?Sized>(
    op: &O,
    r: &[f64],
    c: &[f64],
    params: &EquilibrationParams,
) -> Result<ScalingResult> {
    let (m, n) = (op.rows(), op.cols());
    check_targets(m, n, r, c)?;
    let p = params.resolve(m, n)?;
    let counted = CountingOperator::new(op);
    let mut est = ProductEstimator::new(&counted, GradientRngs::new(p.seed));
    let targets = [r.to_vec(), c.to_vec()];
    let out = engine::run(&mut est, &targets, p.schedule(), |_, _, _| {});
    Ok(into_result(out, |_, x| x.to_vec(), p.iterations, counted.counts()))
}

/// Partition of the rows and columns into consecutive blocks that share one
/// scaling each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    row_blocks: Vec<usize>,
    col_blocks: Vec<usize>,
}

impl BlockStructure {
    pub fn new(row_blocks: Vec<usize>, col_blocks: Vec<usize>) -> Result<Self> {
        if row_blocks.is_empty() || col_blocks.is_empty() || row_blocks.iter().chain(&col_blocks).any(|b| *b == 0) {
            return Err(Error::InvalidParameter("block sizes must be positive and nonempty".into()));
        }
        Ok(Self { row_blocks, col_blocks })
    }

    /// Every row and column in its own block.
    pub fn singletons(m: usize, n: usize) -> Self {
        Self {
            row_blocks: vec![1; m],
            col_blocks: vec![1; n],
        }
    }

    pub fn row_blocks(&self) -> &[usize] {
        &self.row_blocks
    }

    pub fn col_blocks(&self) -> &[usize] {
        &self.col_blocks
    }

    pub fn check(&self, m: usize, n: usize) -> Result<()> {
        check_len("row block sizes", m, self.row_blocks.iter().sum())?;
        check_len("column block sizes", n, self.col_blocks.iter().sum())
    }

    fn membership(sizes: &[usize]) -> Vec<usize> {
        sizes.iter().enumerate().flat_map(|(b, &k)| std::iter::repeat_n(b, k)).collect()
    }

    /// Block index of every row.
    pub fn row_membership(&self) -> Vec<usize> {
        Self::membership(&self.row_blocks)
    }

    pub fn col_membership(&self) -> Vec<usize> {
        Self::membership(&self.col_blocks)
    }

    /// Linear coefficients `m_i alpha^2` and `n_j beta^2`.
    pub(crate) fn targets(&self, p: &ResolvedParams) -> [Vec<f64>; 2] {
        let a2 = p.alpha * p.alpha;
        let b2 = p.beta * p.beta;
        [
            self.row_blocks.iter().map(|&k| k as f64 * a2).collect(),
            self.col_blocks.iter().map(|&k| k as f64 * b2).collect(),
        ]
    }

    /// Per-row values from per-block values.
    pub fn expand_rows(&self, x: &[f64]) -> Vec<f64> {
        self.row_membership().iter().map(|&b| x[b]).collect()
    }

    pub fn expand_cols(&self, x: &[f64]) -> Vec<f64> {
        self.col_membership().iter().map(|&b| x[b]).collect()
    }
}

struct BlockEstimator<'a, O: ?Sized> {
    inner: ProductEstimator<'a, O>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    sizes: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
    zr: Vec<f64>,
    zc: Vec<f64>,
}

impl<O: LinearOperator + ?Sized> NormEstimator for BlockEstimator<'_, O> {
    fn block_sizes(&self) -> Vec<usize> {
        self.sizes.clone()
    }

    fn estimate(&mut self, x: &[Vec<f64>], out: &mut [Vec<f64>]) {
        self.u.iter_mut().zip(&self.rows).for_each(|(u, &b)| *u = x[0][b]);
        self.v.iter_mut().zip(&self.cols).for_each(|(v, &b)| *v = x[1][b]);
        self.inner.estimate_pair(&self.u, &self.v, &mut self.zr, &mut self.zc);
        out[0].iter_mut().for_each(|z| *z = 0.0);
        out[1].iter_mut().for_each(|z| *z = 0.0);
        self.zr.iter().zip(&self.rows).for_each(|(z, &b)| out[0][b] += z);
        self.zc.iter().zip(&self.cols).for_each(|(z, &b)| out[1][b] += z);
    }
}

/// Block equilibration: the scalings are constant on each block, and block
/// `i` of rows targets the squared norm `m_i alpha^2`. The returned `u_bar`,
/// `v_bar` are expanded to one entry per row and column.
pub fn sgd_equilibrate_block<O: LinearOperator + ?Sized>(
    op: &O,
    blocks: &BlockStructure,
    params: &EquilibrationParams,
) -> Result<ScalingResult> {
    let (m, n) = (op.rows(), op.cols());
    blocks.check(m, n)?;
    let p = params.resolve(m, n)?;
    let counted = CountingOperator::new(op);
    let mut est = BlockEstimator {
        inner: ProductEstimator::new(&counted, GradientRngs::new(p.seed)),
        rows: blocks.row_membership(),
        cols: blocks.col_membership(),
        sizes: vec![blocks.row_blocks.len(), blocks.col_blocks.len()],
        u: vec![0.0; m],
        v: vec![0.0; n],
        zr: vec![0.0; m],
        zc: vec![0.0; n],
    };
    let targets = blocks.targets(&p);
    let out = engine::run(&mut est, &targets, p.schedule(), |_, _, _| {});
    let expand = |k: usize, x: &[f64]| if k == 0 { blocks.expand_rows(x) } else { blocks.expand_cols(x) };
    Ok(into_result(out, expand, p.iterations, counted.counts()))
}

/// Regularized objective of the prescribed-norm problem.
pub fn objective_targets(
    a: &ExplicitMatrix,
    u: &[f64],
    v: &[f64],
    r: &[f64],
    c: &[f64],
    params: &EquilibrationParams,
) -> Result<f64> {
    check_len("row log-scaling", a.rows(), u.len())?;
    check_len("column log-scaling", a.cols(), v.len())?;
    check_targets(a.rows(), a.cols(), r, c)?;
    let p = params.resolve(a.rows(), a.cols())?;
    let mut quad = 0.0;
    a.for_each_entry(|i, j, x| quad += x * x * (2.0 * (u[i] + v[j])).exp());
    let sq: f64 = u.iter().chain(v).map(|x| x * x).sum();
    Ok(0.5 * quad - dot(r, u) - dot(c, v) + 0.5 * p.gamma * sq)
}

/// Regularized objective of the block problem at per-block values `u`, `v`.
pub fn objective_block(
    a: &ExplicitMatrix,
    blocks: &BlockStructure,
    u: &[f64],
    v: &[f64],
    params: &EquilibrationParams,
) -> Result<f64> {
    blocks.check(a.rows(), a.cols())?;
    check_len("row block values", blocks.row_blocks.len(), u.len())?;
    check_len("column block values", blocks.col_blocks.len(), v.len())?;
    let p = params.resolve(a.rows(), a.cols())?;
    let (uf, vf) = (blocks.expand_rows(u), blocks.expand_cols(v));
    let mut quad = 0.0;
    a.for_each_entry(|i, j, x| quad += x * x * (2.0 * (uf[i] + vf[j])).exp());
    let [tr, tc] = blocks.targets(&p);
    let sq: f64 = u.iter().chain(v).map(|x| x * x).sum();
    Ok(0.5 * quad - dot(&tr, u) - dot(&tc, v) + 0.5 * p.gamma * sq)
}

/// Regularized objective of the symmetric problem.
pub fn objective_symmetric(a: &ExplicitMatrix, u: &[f64], params: &EquilibrationParams) -> Result<f64> {
    check_len("square matrix", a.rows(), a.cols())?;
    check_len("log-scaling", a.rows(), u.len())?;
    let p = params.resolve(a.rows(), a.cols())?;
    let mut quad = 0.0;
    a.for_each_entry(|i, j, x| quad += x * x * (2.0 * (u[i] + u[j])).exp());
    Ok(0.25 * quad - p.alpha * p.alpha * u.iter().sum::<f64>() + 0.5 * p.gamma * dot(u, u))
}
