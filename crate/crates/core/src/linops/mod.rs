//! Linear operators.
//!
//! The equilibration algorithm only ever touches a matrix through
//! [`LinearOperator::apply_into`] and [`LinearOperator::apply_adjoint_into`].
//! [`ExplicitMatrix`] gives entrywise access on top of that and is reserved
//! for reference solvers, diagnostics and file I/O.

mod dense;
mod explicit;
pub mod mm;
mod sparse;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{check_len, Error, Result};

pub use dense::DenseMatrix;
pub use explicit::ExplicitMatrix;
pub use sparse::CsrMatrix;

/// A real `rows x cols` matrix accessible only through products with it and
/// its transpose.
///
/// Implementations must be reentrant: the `*_into` methods take `&self` and
/// may be called from several threads at once.
pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `y <- A x`. Callers guarantee `x.len() == cols` and `y.len() == rows`.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// `x <- A^T y`. Callers guarantee `y.len() == rows` and `x.len() == cols`.
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]);

    /// Checked `A x`.
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("apply", self.cols(), x.len())?;
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    /// Checked `A^T y`.
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_adjoint", self.rows(), y.len())?;
        let mut x = vec![0.0; self.cols()];
        self.apply_adjoint_into(y, &mut x);
        Ok(x)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        (**self).apply_adjoint_into(y, x)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        (**self).apply_adjoint_into(y, x)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Arc<T> {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        (**self).apply_adjoint_into(y, x)
    }
}

/// The lazily composed operator `diag(d) A diag(e)`.
#[derive(Debug, Clone)]
pub struct ScaledOperator<O> {
    inner: O,
    d: Vec<f64>,
    e: Vec<f64>,
}

impl<O: LinearOperator> ScaledOperator<O> {
    pub fn new(inner: O, d: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        check_len("row scaling", inner.rows(), d.len())?;
        check_len("column scaling", inner.cols(), e.len())?;
        for (index, &value) in d.iter().chain(e.iter()).enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveScaling { index, value });
            }
        }
        Ok(Self { inner, d, e })
    }

    /// Scaling by `exp(u)` on the rows and `exp(v)` on the columns.
    pub fn from_log_scalings(inner: O, u: &[f64], v: &[f64]) -> Result<Self> {
        let d = u.iter().map(|x| x.exp()).collect();
        let e = v.iter().map(|x| x.exp()).collect();
        Self::new(inner, d, e)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn row_scaling(&self) -> &[f64] {
        &self.d
    }

    pub fn col_scaling(&self) -> &[f64] {
        &self.e
    }
}

impl<O: LinearOperator> LinearOperator for ScaledOperator<O> {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let ex: Vec<f64> = self.e.iter().zip(x).map(|(e, x)| e * x).collect();
        self.inner.apply_into(&ex, y);
        y.iter_mut().zip(&self.d).for_each(|(y, d)| *y *= d);
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let dy: Vec<f64> = self.d.iter().zip(y).map(|(d, y)| d * y).collect();
        self.inner.apply_adjoint_into(&dy, x);
        x.iter_mut().zip(&self.e).for_each(|(x, e)| *x *= e);
    }
}

/// Wraps `op` as `diag(d) op diag(e)`.
pub fn scale<O: LinearOperator>(op: O, d: Vec<f64>, e: Vec<f64>) -> Result<ScaledOperator<O>> {
    ScaledOperator::new(op, d, e)
}

/// Exact squared row norms `|A|^2 1`.
pub fn row_norms_sq_exact(a: &ExplicitMatrix) -> Vec<f64> {
    a.row_norms_sq()
}

/// Number of products performed through a [`CountingOperator`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatvecCount {
    pub apply: usize,
    pub apply_adjoint: usize,
}

/// Pass-through operator that counts products.
#[derive(Debug)]
pub struct CountingOperator<O> {
    inner: O,
    applies: AtomicUsize,
    adjoints: AtomicUsize,
}

impl<O: LinearOperator> CountingOperator<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            applies: AtomicUsize::new(0),
            adjoints: AtomicUsize::new(0),
        }
    }

    pub fn counts(&self) -> MatvecCount {
        MatvecCount {
            apply: self.applies.load(Ordering::Relaxed),
            apply_adjoint: self.adjoints.load(Ordering::Relaxed),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: LinearOperator> LinearOperator for CountingOperator<O> {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.applies.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_into(x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        self.adjoints.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_adjoint_into(y, x)
    }
}

/// Operator backed by a pair of closures.
pub struct FnOperator<F, G> {
    rows: usize,
    cols: usize,
    apply: F,
    apply_adjoint: G,
}

impl<F, G> FnOperator<F, G>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(rows: usize, cols: usize, apply: F, apply_adjoint: G) -> Self {
        Self {
            rows,
            cols,
            apply,
            apply_adjoint,
        }
    }
}

impl<F, G> LinearOperator for FnOperator<F, G>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (self.apply)(x, y)
    }
    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        (self.apply_adjoint)(y, x)
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
