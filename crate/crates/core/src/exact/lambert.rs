//! Principal branch of the Lambert W function on the nonnegative axis.

use crate::error::{Error, Result};

const MAX_STEPS: usize = 64;

/// `w >= 0` with `w e^w = x`, by Halley's method from `ln(1 + x)`.
pub fn lambert_w(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambert_w needs x >= 0, got {x}")));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x > 1e300 {
        return Ok(lambert_w_exp(x.ln()));
    }
    Ok(halley(x, x.ln_1p()))
}

fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..MAX_STEPS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = w - step;
        if (next - w).abs() <= 4.0 * f64::EPSILON * next.abs() {
            return next;
        }
        w = next;
    }
    w
}

/// `W(exp(l))`, i.e. the solution of `w + ln w = l`, without forming
/// `exp(l)`. Valid for every finite `l`.
pub fn lambert_w_exp(l: f64) -> f64 {
    if l < 20.0 {
        return halley_or_zero(l);
    }
    // Halley on g(w) = w + ln w - l, which is well scaled for large l
    let mut w = l - l.ln();
    for _ in 0..MAX_STEPS {
        let g = w + w.ln() - l;
        let g1 = 1.0 + 1.0 / w;
        let g2 = -1.0 / (w * w);
        let step = g / (g1 - 0.5 * g * g2 / g1);
        let next = w - step;
        if (next - w).abs() <= 4.0 * f64::EPSILON * next.abs() {
            return next;
        }
        w = next;
    }
    w
}

fn halley_or_zero(l: f64) -> f64 {
    let x = l.exp();
    if x == 0.0 {
        0.0
    } else {
        halley(x, x.ln_1p())
    }
}

/// Minimizer over `x in [-bound, bound]` of
/// `s e^{2x} / 2 - c x + gamma x^2 / 2` for `s >= 0`, `gamma > 0`.
///
/// The stationary point is `x = c/gamma - W(2 s e^{2c/gamma} / gamma) / 2`.
pub fn exp_quadratic_argmin(s: f64, c: f64, gamma: f64, bound: f64) -> f64 {
    let free = if s <= 0.0 {
        c / gamma
    } else {
        let l = 2.0 * c / gamma + (2.0 * s / gamma).ln();
        let w = lambert_w_exp(l);
        if w > 1.0 {
            // from s e^{2x} = gamma w / 2, avoiding the cancellation in c/gamma - w/2
            0.5 * (gamma * w / (2.0 * s)).ln()
        } else {
            c / gamma - 0.5 * w
        }
    };
    free.clamp(-bound, bound)
}
