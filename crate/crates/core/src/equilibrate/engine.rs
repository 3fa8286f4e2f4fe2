//! Projected stochastic gradient loop shared by every equilibration variant.
//!
//! A variant supplies a [`NormEstimator`] (unbiased estimates of the squared
//! norms that the objective's gradient needs, one vector per block of
//! log-scalings) and the linear coefficients of its objective. The loop,
//! step sizes, projection and weighted averaging live only here.

/// Unbiased estimator of the squared-norm part of the gradient.
pub(crate) trait NormEstimator {
    fn block_sizes(&self) -> Vec<usize>;

    /// Writes estimates at log-scalings `x` into `out` (same shapes as `x`).
    fn estimate(&mut self, x: &[Vec<f64>], out: &mut [Vec<f64>]);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Schedule {
    pub gamma: f64,
    pub max_log_scale: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub average: Vec<Vec<f64>>,
    /// Every iterate stayed in the box and below `target / gamma`.
    pub bounds_held: bool,
}

/// Runs `schedule.iterations` projected steps from zero. `observe` sees
/// `(t, iterate, average)` for `t = 0..=T`.
pub(crate) fn run<E: NormEstimator + ?Sized>(
    estimator: &mut E,
    targets: &[Vec<f64>],
    schedule: Schedule,
    mut observe: impl FnMut(usize, &[Vec<f64>], &[Vec<f64>]),
) -> Outcome {
    let sizes = estimator.block_sizes();
    debug_assert_eq!(sizes.len(), targets.len());
    let mut x: Vec<Vec<f64>> = sizes.iter().map(|&k| vec![0.0; k]).collect();
    let mut avg = x.clone();
    let mut z = x.clone();
    let Schedule {
        gamma,
        max_log_scale: bound,
        iterations,
    } = schedule;
    let mut bounds_held = true;

    observe(0, &x, &avg);
    for t in 1..=iterations {
        // both blocks are estimated at the previous iterate
        estimator.estimate(&x, &mut z);
        let step = 2.0 / (gamma * (t as f64 + 1.0));
        let keep = t as f64 / (t as f64 + 2.0);
        let take = 2.0 / (t as f64 + 2.0);
        for ((xb, zb), (tb, ab)) in x.iter_mut().zip(&z).zip(targets.iter().zip(avg.iter_mut())) {
            for (((xi, zi), ti), ai) in xb.iter_mut().zip(zb).zip(tb).zip(ab.iter_mut()) {
                let g = zi - ti + gamma * *xi;
                *xi = (*xi - step * g).clamp(-bound, bound);
                let ceiling = ti / gamma;
                if !(xi.abs() <= bound && *xi <= ceiling + 1e-12 * ceiling.abs().max(1.0)) {
                    bounds_held = false;
                }
                *ai = take * *xi + keep * *ai;
            }
        }
        observe(t, &x, &avg);
    }
    Outcome {
        average: avg,
        bounds_held,
    }
}

/// Weight of iterate `t` in the average after `T` steps.
pub fn averaging_weight(t: usize, iterations: usize) -> f64 {
    let big_t = iterations as f64;
    2.0 * (t as f64 + 1.0) / ((big_t + 1.0) * (big_t + 2.0))
}
