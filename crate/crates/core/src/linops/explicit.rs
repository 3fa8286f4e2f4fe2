use nalgebra::DMatrix;

use super::{CsrMatrix, DenseMatrix, LinearOperator};
use crate::error::{check_len, Result};

/// A matrix with entrywise access, stored densely or in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub enum ExplicitMatrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl From<DenseMatrix> for ExplicitMatrix {
    fn from(m: DenseMatrix) -> Self {
        ExplicitMatrix::Dense(m)
    }
}

impl From<CsrMatrix> for ExplicitMatrix {
    fn from(m: CsrMatrix) -> Self {
        ExplicitMatrix::Sparse(m)
    }
}

impl ExplicitMatrix {
    pub fn rows(&self) -> usize {
        match self {
            ExplicitMatrix::Dense(m) => m.rows(),
            ExplicitMatrix::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            ExplicitMatrix::Dense(m) => m.cols(),
            ExplicitMatrix::Sparse(m) => m.cols(),
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    /// Stored entries for sparse storage, nonzero entries for dense storage.
    pub fn nnz(&self) -> usize {
        match self {
            ExplicitMatrix::Dense(m) => m.as_slice().iter().filter(|v| **v != 0.0).count(),
            ExplicitMatrix::Sparse(m) => m.nnz(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            ExplicitMatrix::Dense(m) => m.get(i, j),
            ExplicitMatrix::Sparse(m) => m.get(i, j),
        }
    }

    /// Visits every entry that may be nonzero, row by row.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        match self {
            ExplicitMatrix::Dense(m) => {
                for i in 0..m.rows() {
                    for (j, &a) in m.row(i).iter().enumerate() {
                        if a != 0.0 {
                            f(i, j, a);
                        }
                    }
                }
            }
            ExplicitMatrix::Sparse(m) => m.iter().for_each(|(i, j, a)| f(i, j, a)),
        }
    }

    pub fn row_norms_sq(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.rows()];
        self.for_each_entry(|i, _, a| r[i] += a * a);
        r
    }

    pub fn col_norms_sq(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.cols()];
        self.for_each_entry(|_, j, a| c[j] += a * a);
        c
    }

    /// Squared row and column norms of `diag(exp(u)) A diag(exp(v))`.
    pub fn scaled_norms_sq(&self, u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("row log-scaling", self.rows(), u.len())?;
        check_len("column log-scaling", self.cols(), v.len())?;
        let mut r = vec![0.0; self.rows()];
        let mut c = vec![0.0; self.cols()];
        self.for_each_entry(|i, j, a| {
            let w = a * a * (2.0 * (u[i] + v[j])).exp();
            r[i] += w;
            c[j] += w;
        });
        Ok((r, c))
    }

    /// Materializes `diag(d) A diag(e)`.
    pub fn scaled(&self, d: &[f64], e: &[f64]) -> Result<ExplicitMatrix> {
        check_len("row scaling", self.rows(), d.len())?;
        check_len("column scaling", self.cols(), e.len())?;
        Ok(match self {
            ExplicitMatrix::Dense(m) => {
                DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| d[i] * m.get(i, j) * e[j]).into()
            }
            ExplicitMatrix::Sparse(m) => {
                let t: Vec<_> = m.iter().map(|(i, j, a)| (i, j, d[i] * a * e[j])).collect();
                CsrMatrix::from_triplets(m.rows(), m.cols(), &t)?.into()
            }
        })
    }

    pub fn transpose(&self) -> ExplicitMatrix {
        match self {
            ExplicitMatrix::Dense(m) => m.transpose().into(),
            ExplicitMatrix::Sparse(m) => {
                let t: Vec<_> = m.iter().map(|(i, j, a)| (j, i, a)).collect();
                CsrMatrix::from_triplets(m.cols(), m.rows(), &t)
                    .expect("transpose of a valid CSR matrix")
                    .into()
            }
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            ExplicitMatrix::Dense(m) => m.clone(),
            ExplicitMatrix::Sparse(m) => {
                let mut data = vec![0.0; m.rows() * m.cols()];
                for (i, j, a) in m.iter() {
                    data[i * m.cols() + j] = a;
                }
                DenseMatrix::from_row_major(m.rows(), m.cols(), data)
            }
        }
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        self.for_each_entry(|i, j, a| out[(i, j)] = a);
        out
    }
}

impl LinearOperator for ExplicitMatrix {
    fn rows(&self) -> usize {
        ExplicitMatrix::rows(self)
    }

    fn cols(&self) -> usize {
        ExplicitMatrix::cols(self)
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            ExplicitMatrix::Dense(m) => m.apply_into(x, y),
            ExplicitMatrix::Sparse(m) => m.apply_into(x, y),
        }
    }

    fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        match self {
            ExplicitMatrix::Dense(m) => m.apply_adjoint_into(y, x),
            ExplicitMatrix::Sparse(m) => m.apply_adjoint_into(y, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rows: usize, cols: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                if rng.random_bool(density) {
                    t.push((i, j, rng.random_range(-2.0..2.0)));
                }
            }
        }
        CsrMatrix::from_triplets(rows, cols, &t).unwrap()
    }

    #[test]
    fn sparse_row_norms_match_dense_sum() {
        let sparse = ExplicitMatrix::from(random_sparse(10, 8, 0.4, 5));
        let dense = sparse.to_dense();
        let expected: Vec<f64> = (0..10)
            .map(|i| (0..8).map(|j| dense.get(i, j).powi(2)).sum())
            .collect();
        let got = sparse.row_norms_sq();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-14 * (1.0 + e));
        }
    }

    #[test]
    fn explicit_views_agree_exactly() {
        let sparse = ExplicitMatrix::from(random_sparse(7, 5, 0.5, 9));
        let dense = ExplicitMatrix::from(sparse.to_dense());
        let x: Vec<f64> = (0..5).map(|k| k as f64 - 1.5).collect();
        let y: Vec<f64> = (0..7).map(|k| 0.25 * k as f64).collect();
        assert_eq!(sparse.apply(&x).unwrap(), dense.apply(&x).unwrap());
        let mut expected = vec![0.0; 7];
        for (i, e) in expected.iter_mut().enumerate() {
            for j in 0..5 {
                *e += sparse.get(i, j) * x[j];
            }
        }
        assert_eq!(sparse.apply(&x).unwrap(), expected);
        assert_eq!(sparse.apply_adjoint(&y).unwrap(), dense.apply_adjoint(&y).unwrap());
    }

    #[test]
    fn scaled_norms_match_materialized() {
        let a = ExplicitMatrix::from(random_sparse(6, 4, 0.6, 1));
        let u = [0.1, -0.2, 0.3, 0.0, -1.0, 0.5];
        let v = [0.2, 0.0, -0.4, 1.0];
        let d: Vec<f64> = u.iter().map(|x: &f64| x.exp()).collect();
        let e: Vec<f64> = v.iter().map(|x: &f64| x.exp()).collect();
        let (r, c) = a.scaled_norms_sq(&u, &v).unwrap();
        let s = a.scaled(&d, &e).unwrap();
        for (x, y) in r.iter().zip(s.row_norms_sq()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y));
        }
        for (x, y) in c.iter().zip(s.col_norms_sq()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y));
        }
    }

    #[test]
    fn transpose_swaps_products() {
        let a = ExplicitMatrix::from(random_sparse(5, 3, 0.7, 2));
        let t = a.transpose();
        let y = [1.0, -1.0, 2.0, 0.5, 3.0];
        assert_eq!(t.apply(&y).unwrap(), a.apply_adjoint(&y).unwrap());
    }
}
