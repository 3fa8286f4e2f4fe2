//! Seeded Rademacher draws and the randomized row-norm estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linops::LinearOperator;

/// Stream identifiers for the independent sign sequences of one run.
pub mod stream {
    /// Signs multiplying the columns (used for row-norm estimates).
    pub const COLUMN_SIGNS: u64 = 1;
    /// Signs multiplying the rows (used for column-norm estimates).
    pub const ROW_SIGNS: u64 = 2;
    /// Third axis of tensor runs.
    pub const TUBE_SIGNS: u64 = 3;
    /// Probes of the symmetry check.
    pub const SYMMETRY_PROBES: u64 = 4;
    /// Starting vectors of power iterations.
    pub const POWER_START: u64 = 16;
    /// Random test matrices.
    pub const MATRIX: u64 = 32;
    /// Planted solutions and noise of benchmark right-hand sides.
    pub const RIGHT_HAND_SIDE: u64 = 33;
}

/// ChaCha8 generator keyed by `(seed, stream)`; the draw sequence is
/// identical on every platform.
#[derive(Debug, Clone)]
pub struct SignRng {
    inner: ChaCha8Rng,
}

impl SignRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Overwrites `out` with IID uniform signs.
    pub fn fill_signs(&mut self, out: &mut [f64]) {
        for chunk in out.chunks_mut(64) {
            let mut bits = self.inner.next_u64();
            for v in chunk {
                *v = if bits & 1 == 1 { 1.0 } else { -1.0 };
                bits >>= 1;
            }
        }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// A fresh vector of IID `+-1` entries.
pub fn rademacher(dim: usize, rng: &mut SignRng) -> Vec<f64> {
    let mut s = vec![0.0; dim];
    rng.fill_signs(&mut s);
    s
}

/// Unbiased estimate of the squared row norms `|B|^2 1`: `z = |B s|^2` for a
/// single Rademacher vector `s`.
pub fn estimate_row_norms_sq<O: LinearOperator + ?Sized>(op: &O, rng: &mut SignRng) -> Vec<f64> {
    let s = rademacher(op.cols(), rng);
    let mut z = vec![0.0; op.rows()];
    op.apply_into(&s, &mut z);
    z.iter_mut().for_each(|v| *v *= *v);
    z
}
