use rand::seq::index;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linops::{CsrMatrix, ExplicitMatrix, LinearOperator};
use crate::sampling::stream;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Badly scaled sparse test matrix: `floor(density m n)` distinct uniformly
/// placed standard-normal entries, with rows and columns multiplied by
/// `exp(N(1, 1))` factors.
pub fn gen_matrix(m: usize, n: usize, density: f64, seed: u64) -> Result<ExplicitMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!("empty matrix {m}x{n}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidParameter(format!("density must lie in (0, 1], got {density}")));
    }
    let total = m.checked_mul(n).ok_or_else(|| Error::InvalidParameter("matrix too large".into()))?;
    let count = (density * total as f64).floor() as usize;
    let mut rng = rng(seed, stream::MATRIX);
    let positions = index::sample(&mut rng, total, count.min(total));
    let mut triplets: Vec<(usize, usize, f64)> = positions
        .into_iter()
        .map(|p| (p / n, p % n, rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let log_scale = Normal::new(1.0, 1.0).expect("valid normal");
    let u: Vec<f64> = (0..m).map(|_| rng.sample(log_scale)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(log_scale)).collect();
    for (i, j, a) in &mut triplets {
        *a *= (u[*i] + v[*j]).exp();
    }
    Ok(CsrMatrix::from_triplets(m, n, &triplets)?.into())
}

/// Number of rows and of columns without a stored nonzero. Such lines make
/// the unregularized problem unbounded.
pub fn empty_lines(a: &ExplicitMatrix) -> (usize, usize) {
    let (r, c) = (a.row_norms_sq(), a.col_norms_sq());
    (
        r.iter().filter(|x| **x == 0.0).count(),
        c.iter().filter(|x| **x == 0.0).count(),
    )
}

/// `b = A x` for a standard-normal `x`.
pub fn consistent_rhs<O: LinearOperator + ?Sized>(op: &O, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed, stream::RIGHT_HAND_SIDE);
    let x: Vec<f64> = (0..op.cols()).map(|_| rng.sample(StandardNormal)).collect();
    let mut b = vec![0.0; op.rows()];
    op.apply_into(&x, &mut b);
    b
}

/// `b = A x + noise` for an `x` with `n / 10` standard-normal entries at
/// random positions and standard-normal noise.
pub fn sparse_signal_rhs<O: LinearOperator + ?Sized>(op: &O, seed: u64) -> Vec<f64> {
    let n = op.cols();
    let mut rng = rng(seed, stream::RIGHT_HAND_SIDE);
    let mut x = vec![0.0; n];
    for j in index::sample(&mut rng, n, n / 10) {
        x[j] = rng.sample(StandardNormal);
    }
    let mut b = vec![0.0; op.rows()];
    op.apply_into(&x, &mut b);
    b.iter_mut().for_each(|v| *v += rng.sample::<f64, _>(StandardNormal));
    b
}
