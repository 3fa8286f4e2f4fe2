//! Regularized, box-constrained equilibration and its projected stochastic
//! gradient solver.
//!
//! For log-scalings `u`, `v` with `D = diag(exp(u))`, `E = diag(exp(v))`:
//!
//! ```text
//! f(u, v) = 1/2 sum_ij A_ij^2 exp(2 u_i + 2 v_j) - alpha^2 1'u - beta^2 1'v
//!           + gamma/2 (|u|^2 + |v|^2),      subject to |u|_inf, |v|_inf <= M
//! ```
//!
//! [`sgd_equilibrate`] touches `A` through exactly one product with `A` and
//! one with `A^T` per iteration.

pub(crate) mod engine;

use crate::error::{check_len, Error, Result};
use crate::linops::{CountingOperator, ExplicitMatrix, LinearOperator, MatvecCount};
use crate::metrics;
use crate::sampling::{stream, SignRng};

pub use engine::averaging_weight;

/// Scalars of the regularized problem and the iteration budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibrationParams {
    /// Target row norm; `None` picks `(n/m)^(1/4)` or derives it from `beta`.
    pub alpha: Option<f64>,
    /// Target column norm; `None` picks `(m/n)^(1/4)` or derives it from `alpha`.
    pub beta: Option<f64>,
    pub gamma: f64,
    /// Box bound `M` on every log-scaling.
    pub max_log_scale: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for EquilibrationParams {
    fn default() -> Self {
        Self {
            alpha: None,
            beta: None,
            gamma: 1e-1,
            max_log_scale: 1e4f64.ln(),
            iterations: 100,
            seed: 0,
        }
    }
}

impl EquilibrationParams {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_targets(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = Some(alpha);
        self.beta = Some(beta);
        self
    }

    /// Validates and fills in the norm targets for an `m x n` operator.
    pub fn resolve(&self, m: usize, n: usize) -> Result<ResolvedParams> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!("empty operator {m}x{n}")));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let (mf, nf) = (m as f64, n as f64);
        let (alpha, beta) = match (self.alpha, self.beta) {
            (None, None) => ((nf / mf).powf(0.25), (mf / nf).powf(0.25)),
            (Some(a), None) => {
                let a = positive("alpha", a)?;
                (a, (mf * a * a / nf).sqrt())
            }
            (None, Some(b)) => {
                let b = positive("beta", b)?;
                ((nf * b * b / mf).sqrt(), b)
            }
            (Some(a), Some(b)) => {
                let (a, b) = (positive("alpha", a)?, positive("beta", b)?);
                let (lhs, rhs) = (mf * a * a, nf * b * b);
                if (lhs - rhs).abs() > 1e-8 * lhs.max(rhs) {
                    return Err(Error::InconsistentTargets(format!(
                        "m*alpha^2 = {lhs} differs from n*beta^2 = {rhs}"
                    )));
                }
                (a, b)
            }
        };
        Ok(ResolvedParams {
            alpha,
            beta,
            gamma: positive("gamma", self.gamma)?,
            // an infinite box is allowed and disables the projection
            max_log_scale: if self.max_log_scale == f64::INFINITY {
                f64::INFINITY
            } else {
                positive("max_log_scale", self.max_log_scale)?
            },
            iterations: self.iterations,
            seed: self.seed,
        })
    }
}

/// [`EquilibrationParams`] with concrete, validated targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub max_log_scale: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl ResolvedParams {
    pub(crate) fn schedule(&self) -> engine::Schedule {
        engine::Schedule {
            gamma: self.gamma,
            max_log_scale: self.max_log_scale,
            iterations: self.iterations,
        }
    }

    /// The strong convexity constant of the objective.
    pub fn strong_convexity(&self) -> f64 {
        self.gamma
    }
}

/// Diagnostics recorded for one iteration of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: Option<f64>,
    pub rms_error: Option<f64>,
}

/// Output of an equilibration run: averaged log-scalings and the scalings
/// `d = exp(u_bar)`, `e = exp(v_bar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    pub u_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub matvecs: MatvecCount,
    /// Every iterate satisfied `|x|_inf <= M` and `x_i <= target_i / gamma`.
    pub bounds_held: bool,
}

impl ScalingResult {
    pub(crate) fn from_logs(
        u_bar: Vec<f64>,
        v_bar: Vec<f64>,
        history: Vec<IterationRecord>,
        iterations: usize,
        matvecs: MatvecCount,
        bounds_held: bool,
    ) -> Self {
        Self {
            d: u_bar.iter().map(|x| x.exp()).collect(),
            e: v_bar.iter().map(|x| x.exp()).collect(),
            u_bar,
            v_bar,
            history,
            iterations,
            matvecs,
            bounds_held,
        }
    }
}

fn check_dims(a: &ExplicitMatrix, u: &[f64], v: &[f64]) -> Result<()> {
    check_len("row log-scaling", a.rows(), u.len())?;
    check_len("column log-scaling", a.cols(), v.len())
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Objective of the regularized problem (the box is not checked).
pub fn objective(a: &ExplicitMatrix, u: &[f64], v: &[f64], params: &EquilibrationParams) -> Result<f64> {
    check_dims(a, u, v)?;
    let p = params.resolve(a.rows(), a.cols())?;
    Ok(objective_resolved(a, u, v, &p))
}

pub(crate) fn objective_resolved(a: &ExplicitMatrix, u: &[f64], v: &[f64], p: &ResolvedParams) -> f64 {
    let mut quad = 0.0;
    a.for_each_entry(|i, j, x| quad += x * x * (2.0 * (u[i] + v[j])).exp());
    0.5 * quad - p.alpha * p.alpha * u.iter().sum::<f64>() - p.beta * p.beta * v.iter().sum::<f64>()
        + 0.5 * p.gamma * (sq_norm(u) + sq_norm(v))
}

/// Exact gradient `(|DAE|^2 1 - alpha^2 + gamma u, |EA^TD|^2 1 - beta^2 + gamma v)`.
pub fn gradient(
    a: &ExplicitMatrix,
    u: &[f64],
    v: &[f64],
    params: &EquilibrationParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(a, u, v)?;
    let p = params.resolve(a.rows(), a.cols())?;
    Ok(gradient_resolved(a, u, v, &p))
}

pub(crate) fn gradient_resolved(a: &ExplicitMatrix, u: &[f64], v: &[f64], p: &ResolvedParams) -> (Vec<f64>, Vec<f64>) {
    let (mut r, mut c) = a.scaled_norms_sq(u, v).expect("dimensions checked");
    let (a2, b2) = (p.alpha * p.alpha, p.beta * p.beta);
    r.iter_mut().zip(u).for_each(|(g, x)| *g += p.gamma * x - a2);
    c.iter_mut().zip(v).for_each(|(g, x)| *g += p.gamma * x - b2);
    (r, c)
}

/// Elementwise clamp onto `[-bound, bound]`.
pub fn project_box(x: &[f64], bound: f64) -> Vec<f64> {
    x.iter().map(|v| v.clamp(-bound, bound)).collect()
}

/// The two independent sign streams of a run.
#[derive(Debug, Clone)]
pub struct GradientRngs {
    /// Draws `s`, multiplying the columns.
    pub s: SignRng,
    /// Draws `w`, multiplying the rows.
    pub w: SignRng,
}

impl GradientRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            s: SignRng::new(seed, stream::COLUMN_SIGNS),
            w: SignRng::new(seed, stream::ROW_SIGNS),
        }
    }
}

/// Matrix-free estimator of `(|DAE|^2 1, |EA^TD|^2 1)`.
pub(crate) struct ProductEstimator<'a, O: ?Sized> {
    op: &'a O,
    rngs: GradientRngs,
    d: Vec<f64>,
    e: Vec<f64>,
    s: Vec<f64>,
    w: Vec<f64>,
}

impl<'a, O: LinearOperator + ?Sized> ProductEstimator<'a, O> {
    pub(crate) fn new(op: &'a O, rngs: GradientRngs) -> Self {
        let (m, n) = (op.rows(), op.cols());
        Self {
            op,
            rngs,
            d: vec![0.0; m],
            e: vec![0.0; n],
            s: vec![0.0; n],
            w: vec![0.0; m],
        }
    }

    /// Row estimates into `zr` (length m), column estimates into `zc` (length n).
    pub(crate) fn estimate_pair(&mut self, u: &[f64], v: &[f64], zr: &mut [f64], zc: &mut [f64]) {
        self.d.iter_mut().zip(u).for_each(|(d, u)| *d = u.exp());
        self.e.iter_mut().zip(v).for_each(|(e, v)| *e = v.exp());

        self.rngs.s.fill_signs(&mut self.s);
        self.s.iter_mut().zip(&self.e).for_each(|(s, e)| *s *= e);
        self.op.apply_into(&self.s, zr);
        zr.iter_mut().zip(&self.d).for_each(|(z, d)| *z = (*z * d) * (*z * d));

        self.rngs.w.fill_signs(&mut self.w);
        self.w.iter_mut().zip(&self.d).for_each(|(w, d)| *w *= d);
        self.op.apply_adjoint_into(&self.w, zc);
        zc.iter_mut().zip(&self.e).for_each(|(z, e)| *z = (*z * e) * (*z * e));
    }
}

impl<O: LinearOperator + ?Sized> engine::NormEstimator for ProductEstimator<'_, O> {
    fn block_sizes(&self) -> Vec<usize> {
        vec![self.op.rows(), self.op.cols()]
    }

    fn estimate(&mut self, x: &[Vec<f64>], out: &mut [Vec<f64>]) {
        let (zr, zc) = out.split_at_mut(1);
        self.estimate_pair(&x[0], &x[1], &mut zr[0], &mut zc[0]);
    }
}

/// One draw of the stochastic gradient
/// `(|DAEs|^2 - alpha^2 + gamma u, |EA^TDw|^2 - beta^2 + gamma v)`.
pub fn stochastic_gradient_estimate<O: LinearOperator + ?Sized>(
    op: &O,
    u: &[f64],
    v: &[f64],
    params: &EquilibrationParams,
    rngs: &mut GradientRngs,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("row log-scaling", op.rows(), u.len())?;
    check_len("column log-scaling", op.cols(), v.len())?;
    let p = params.resolve(op.rows(), op.cols())?;
    let mut est = ProductEstimator::new(op, rngs.clone());
    let mut gu = vec![0.0; u.len()];
    let mut gv = vec![0.0; v.len()];
    est.estimate_pair(u, v, &mut gu, &mut gv);
    *rngs = est.rngs;
    let (a2, b2) = (p.alpha * p.alpha, p.beta * p.beta);
    gu.iter_mut().zip(u).for_each(|(g, x)| *g += p.gamma * x - a2);
    gv.iter_mut().zip(v).for_each(|(g, x)| *g += p.gamma * x - b2);
    Ok((gu, gv))
}

/// Callback invoked with `(t, u_t, v_t, u_bar, v_bar)` for `t = 0..=T`.
pub trait IterationObserver {
    fn observe(&mut self, t: usize, u: &[f64], v: &[f64], u_bar: &[f64], v_bar: &[f64]);
}

impl<F: FnMut(usize, &[f64], &[f64], &[f64], &[f64])> IterationObserver for F {
    fn observe(&mut self, t: usize, u: &[f64], v: &[f64], u_bar: &[f64], v_bar: &[f64]) {
        self(t, u, v, u_bar, v_bar)
    }
}

/// Matrix-free projected stochastic gradient equilibration.
pub fn sgd_equilibrate<O: LinearOperator + ?Sized>(op: &O, params: &EquilibrationParams) -> Result<ScalingResult> {
    sgd_equilibrate_observed(op, params, |_: usize, _: &[f64], _: &[f64], _: &[f64], _: &[f64]| {})
}

/// [`sgd_equilibrate`] with a per-iteration hook.
pub fn sgd_equilibrate_observed<O: LinearOperator + ?Sized>(
    op: &O,
    params: &EquilibrationParams,
    mut observer: impl IterationObserver,
) -> Result<ScalingResult> {
    let (m, n) = (op.rows(), op.cols());
    let p = params.resolve(m, n)?;
    let counted = CountingOperator::new(op);
    let mut est = ProductEstimator::new(&counted, GradientRngs::new(p.seed));
    let targets = [vec![p.alpha * p.alpha; m], vec![p.beta * p.beta; n]];
    let out = engine::run(&mut est, &targets, p.schedule(), |t, x, avg| {
        observer.observe(t, &x[0], &x[1], &avg[0], &avg[1])
    });
    let mut avg = out.average.into_iter();
    let u_bar = avg.next().expect("row block");
    let v_bar = avg.next().expect("column block");
    Ok(ScalingResult::from_logs(
        u_bar,
        v_bar,
        Vec::new(),
        p.iterations,
        counted.counts(),
        out.bounds_held,
    ))
}

/// Which explicit diagnostics to record and how often.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsConfig {
    pub stride: usize,
    pub objective: bool,
    pub rms_error: bool,
}

impl DiagnosticsConfig {
    /// Every iteration up to `T = 1000`, about 1000 records beyond.
    pub fn for_iterations(iterations: usize) -> Self {
        Self {
            stride: iterations.div_ceil(1000).max(1),
            objective: true,
            rms_error: true,
        }
    }
}

/// Runs [`sgd_equilibrate`] on `op` and evaluates diagnostics of the running
/// average on the explicit view `a` of the same matrix.
pub fn sgd_equilibrate_with_diagnostics<O: LinearOperator + ?Sized>(
    op: &O,
    a: &ExplicitMatrix,
    params: &EquilibrationParams,
    config: DiagnosticsConfig,
) -> Result<ScalingResult> {
    check_len("explicit view rows", op.rows(), a.rows())?;
    check_len("explicit view cols", op.cols(), a.cols())?;
    let p = params.resolve(op.rows(), op.cols())?;
    let stride = config.stride.max(1);
    let mut history = Vec::new();
    let mut result = sgd_equilibrate_observed(op, params, |t: usize, _: &[f64], _: &[f64], ub: &[f64], vb: &[f64]| {
        if t.is_multiple_of(stride) || t == p.iterations {
            history.push(IterationRecord {
                iter: t,
                objective: config.objective.then(|| objective_resolved(a, ub, vb, &p)),
                rms_error: config
                    .rms_error
                    .then(|| metrics::rms_error(a, ub, vb, p.alpha, p.beta).expect("dimensions checked")),
            });
        }
    })?;
    result.history = history;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{DenseMatrix, FnOperator};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(alpha: f64, beta: f64, gamma: f64) -> EquilibrationParams {
        EquilibrationParams {
            gamma,
            ..Default::default()
        }
        .with_targets(alpha, beta)
    }

    fn random_matrix(m: usize, n: usize, seed: u64) -> ExplicitMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0)).into()
    }

    /// Newton iteration on `4 e^{4u} - 1 + 0.1 u = 0`.
    fn scalar_root() -> f64 {
        let mut u = 0.0f64;
        for _ in 0..100 {
            let g = 4.0 * (4.0 * u).exp() - 1.0 + 0.1 * u;
            let h = 16.0 * (4.0 * u).exp() + 0.1;
            u -= g / h;
        }
        u
    }

    #[test]
    fn resolve_auto_and_consistency() {
        let p = EquilibrationParams::default().resolve(4, 1).unwrap();
        assert!((p.alpha - 0.25f64.powf(0.25)).abs() < 1e-15);
        assert!((p.beta - 4f64.powf(0.25)).abs() < 1e-15);
        assert!((4.0 * p.alpha * p.alpha - p.beta * p.beta).abs() < 1e-12);
        assert!(matches!(
            params(1.0, 1.0, 0.1).resolve(2, 3),
            Err(Error::InconsistentTargets(_))
        ));
        let only_alpha = EquilibrationParams {
            alpha: Some(1.0),
            ..Default::default()
        };
        assert!((only_alpha.resolve(2, 8).unwrap().beta - 0.5).abs() < 1e-15);
        assert!(EquilibrationParams { gamma: 0.0, ..Default::default() }.resolve(2, 2).is_err());
        assert!(EquilibrationParams { max_log_scale: -1.0, ..Default::default() }.resolve(2, 2).is_err());
        assert_eq!(params(1.0, 1.0, 0.3).resolve(3, 3).unwrap().strong_convexity(), 0.3);
    }

    #[test]
    fn objective_small_cases() {
        let a: ExplicitMatrix = DenseMatrix::from_rows(&[vec![2.0]]).into();
        assert_eq!(objective(&a, &[0.0], &[0.0], &params(1.0, 1.0, 0.1)).unwrap(), 2.0);
        let eye: ExplicitMatrix = DenseMatrix::identity(5).into();
        for gamma in [0.01, 1.0, 7.0] {
            let f = objective(&eye, &[0.0; 5], &[0.0; 5], &params(1.0, 1.0, gamma)).unwrap();
            assert_eq!(f, 2.5);
        }
        assert!(objective(&eye, &[0.0; 4], &[0.0; 5], &params(1.0, 1.0, 0.1)).is_err());
    }

    #[test]
    fn objective_matches_double_loop() {
        let a = random_matrix(5, 4, 1);
        let u: [f64; 5] = [0.1, -0.3, 0.2, 0.0, 0.5];
        let v: [f64; 4] = [-0.2, 0.4, 0.1, -0.1];
        let p = EquilibrationParams::default();
        let r = p.resolve(5, 4).unwrap();
        let mut f = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                f += 0.5 * a.get(i, j).powi(2) * (2.0 * u[i] + 2.0 * v[j]).exp();
            }
        }
        for x in u {
            f += -r.alpha * r.alpha * x + 0.5 * r.gamma * x * x;
        }
        for x in v {
            f += -r.beta * r.beta * x + 0.5 * r.gamma * x * x;
        }
        let got = objective(&a, &u, &v, &p).unwrap();
        assert!((got - f).abs() <= 1e-13 * f.abs().max(1.0));
    }

    #[test]
    fn gradient_small_cases() {
        let eye: ExplicitMatrix = DenseMatrix::identity(3).into();
        let (gu, gv) = gradient(&eye, &[0.0; 3], &[0.0; 3], &params(1.0, 1.0, 0.1)).unwrap();
        assert_eq!((gu, gv), (vec![0.0; 3], vec![0.0; 3]));
        // gamma = 0 is not a valid run parameter, use the resolved form
        let a: ExplicitMatrix = DenseMatrix::from_rows(&[vec![2.0]]).into();
        let r = ResolvedParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.0,
            max_log_scale: 1.0,
            iterations: 1,
            seed: 0,
        };
        assert_eq!(gradient_resolved(&a, &[0.0], &[0.0], &r), (vec![3.0], vec![3.0]));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let a = random_matrix(6, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
        let p = EquilibrationParams::default();
        let (gu, gv) = gradient(&a, &u, &v, &p).unwrap();
        let h = 1e-6;
        for k in 0..11 {
            let (mut up, mut vp, mut um, mut vm) = (u.clone(), v.clone(), u.clone(), v.clone());
            if k < 6 {
                up[k] += h;
                um[k] -= h;
            } else {
                vp[k - 6] += h;
                vm[k - 6] -= h;
            }
            let fd = (objective(&a, &up, &vp, &p).unwrap() - objective(&a, &um, &vm, &p).unwrap()) / (2.0 * h);
            let g = if k < 6 { gu[k] } else { gv[k - 6] };
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "{k}: {fd} vs {g}");
        }
    }

    #[test]
    fn project_box_cases() {
        let m = 2.0;
        assert_eq!(project_box(&[0.5, -1.0], m), vec![0.5, -1.0]);
        assert_eq!(project_box(&[2.0 * m, -2.0 * m], m), vec![m, -m]);
        let x = [3.0, -7.0, 1.5];
        assert_eq!(project_box(&project_box(&x, m), m), project_box(&x, m));
    }

    #[test]
    fn estimate_is_zero_at_identity_fixed_point() {
        let eye = DenseMatrix::identity(4);
        let mut rngs = GradientRngs::new(5);
        for _ in 0..10 {
            let (gu, gv) =
                stochastic_gradient_estimate(&eye, &[0.0; 4], &[0.0; 4], &params(1.0, 1.0, 0.2), &mut rngs).unwrap();
            assert_eq!(gu, vec![0.0; 4]);
            assert_eq!(gv, vec![0.0; 4]);
        }
    }

    #[test]
    fn estimate_expectation_is_gradient() {
        let (m, n) = (4usize, 3usize);
        let a = random_matrix(m, n, 9);
        let u = [0.2, -0.1, 0.0, 0.3];
        let v = [-0.2, 0.1, 0.25];
        let p = EquilibrationParams::default();
        let r = p.resolve(m, n).unwrap();
        let (gu, gv) = gradient(&a, &u, &v, &p).unwrap();
        // enumerate s in {-1,1}^n and w in {-1,1}^m by hand
        let d: Vec<f64> = u.iter().map(|x: &f64| x.exp()).collect();
        let e: Vec<f64> = v.iter().map(|x: &f64| x.exp()).collect();
        let mut mean_u = vec![0.0; m];
        for mask in 0..1 << n {
            let s: Vec<f64> = (0..n).map(|k| if mask >> k & 1 == 1 { e[k] } else { -e[k] }).collect();
            let y = a.apply(&s).unwrap();
            for i in 0..m {
                mean_u[i] += (d[i] * y[i]).powi(2) / (1 << n) as f64;
            }
        }
        let mut mean_v = vec![0.0; n];
        for mask in 0..1 << m {
            let w: Vec<f64> = (0..m).map(|k| if mask >> k & 1 == 1 { d[k] } else { -d[k] }).collect();
            let x = a.apply_adjoint(&w).unwrap();
            for j in 0..n {
                mean_v[j] += (e[j] * x[j]).powi(2) / (1 << m) as f64;
            }
        }
        for i in 0..m {
            let g = mean_u[i] - r.alpha * r.alpha + r.gamma * u[i];
            assert!((g - gu[i]).abs() <= 1e-12 * gu[i].abs().max(1.0));
        }
        for j in 0..n {
            let g = mean_v[j] - r.beta * r.beta + r.gamma * v[j];
            assert!((g - gv[j]).abs() <= 1e-12 * gv[j].abs().max(1.0));
        }
    }

    #[test]
    fn one_product_each_per_estimate() {
        let a = random_matrix(3, 2, 1);
        let counted = CountingOperator::new(&a);
        let mut rngs = GradientRngs::new(0);
        stochastic_gradient_estimate(&counted, &[0.0; 3], &[0.0; 2], &EquilibrationParams::default(), &mut rngs)
            .unwrap();
        assert_eq!(counted.counts(), MatvecCount { apply: 1, apply_adjoint: 1 });
    }

    #[test]
    fn identity_stays_at_zero() {
        let eye = DenseMatrix::identity(6);
        for (gamma, bound, iters) in [(0.1, 5.0, 50), (2.0, 0.5, 7)] {
            let p = EquilibrationParams {
                gamma,
                max_log_scale: bound,
                iterations: iters,
                ..Default::default()
            }
            .with_targets(1.0, 1.0);
            let mut max_abs: f64 = 0.0;
            let r = sgd_equilibrate_observed(&eye, &p, |_: usize, u: &[f64], v: &[f64], _: &[f64], _: &[f64]| {
                max_abs = u.iter().chain(v).fold(max_abs, |acc, x| acc.max(x.abs()));
            })
            .unwrap();
            assert_eq!(max_abs, 0.0);
            assert_eq!(r.d, vec![1.0; 6]);
            assert_eq!(r.e, vec![1.0; 6]);
            assert_eq!(r.matvecs, MatvecCount { apply: iters, apply_adjoint: iters });
        }
    }

    #[test]
    fn scalar_problem_converges_to_stationary_point() {
        let a: ExplicitMatrix = DenseMatrix::from_rows(&[vec![2.0]]).into();
        let p = EquilibrationParams {
            gamma: 0.1,
            max_log_scale: 10.0,
            iterations: 10_000,
            ..Default::default()
        }
        .with_targets(1.0, 1.0);
        let root = scalar_root();
        assert!((root + 0.338).abs() < 1e-3);
        let r = sgd_equilibrate(&a, &p).unwrap();
        // a 1x1 matrix has a noise-free estimator, so both blocks agree
        assert_eq!(r.u_bar, r.v_bar);
        assert!((r.u_bar[0] - root).abs() < 1e-2, "{} vs {root}", r.u_bar[0]);
        assert!(r.bounds_held);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = random_matrix(7, 5, 2);
        let p = EquilibrationParams::default().with_iterations(200).with_seed(11);
        let r1 = sgd_equilibrate(&a, &p).unwrap();
        let r2 = sgd_equilibrate(&a, &p).unwrap();
        assert_eq!(r1, r2);
        let r3 = sgd_equilibrate(&a, &p.clone().with_seed(12)).unwrap();
        assert_ne!(r1.u_bar, r3.u_bar);
    }

    #[test]
    fn only_products_are_used() {
        let a = random_matrix(5, 3, 8);
        let op = FnOperator::new(
            5,
            3,
            |x: &[f64], y: &mut [f64]| a.apply_into(x, y),
            |y: &[f64], x: &mut [f64]| a.apply_adjoint_into(y, x),
        );
        let p = EquilibrationParams::default().with_iterations(40);
        assert_eq!(sgd_equilibrate(&op, &p).unwrap(), sgd_equilibrate(&a, &p).unwrap());
    }

    #[test]
    fn scalings_stay_in_box_and_under_ceiling() {
        let a = random_matrix(8, 6, 13);
        let p = EquilibrationParams {
            max_log_scale: 0.5,
            iterations: 300,
            ..Default::default()
        };
        let r = p.resolve(8, 6).unwrap();
        let mut ok = true;
        let res = sgd_equilibrate_observed(&a, &p, |_: usize, u: &[f64], v: &[f64], _: &[f64], _: &[f64]| {
            ok &= u.iter().all(|x| x.abs() <= 0.5 && *x <= r.alpha * r.alpha / r.gamma);
            ok &= v.iter().all(|x| x.abs() <= 0.5 && *x <= r.beta * r.beta / r.gamma);
        })
        .unwrap();
        assert!(ok && res.bounds_held);
        let lo = (-0.5f64).exp();
        let hi = 0.5f64.exp();
        assert!(res.d.iter().chain(&res.e).all(|x| *x >= lo && *x <= hi));
    }

    #[test]
    fn diagnostics_follow_stride() {
        let a = random_matrix(6, 4, 5);
        let p = EquilibrationParams::default().with_iterations(100);
        let cfg = DiagnosticsConfig {
            stride: 10,
            objective: true,
            rms_error: false,
        };
        let r = sgd_equilibrate_with_diagnostics(&a, &a, &p, cfg).unwrap();
        assert_eq!(r.history.len(), 11);
        assert!(r.history.iter().all(|h| h.objective.is_some() && h.rms_error.is_none()));
        assert_eq!(r.history.last().unwrap().iter, 100);
        assert_eq!(DiagnosticsConfig::for_iterations(1000).stride, 1);
        assert_eq!(DiagnosticsConfig::for_iterations(5000).stride, 5);
    }
}
