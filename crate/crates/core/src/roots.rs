//! Bracketed root finding for monotone scalar functions.

use crate::error::{Error, Result};

const MAX_BISECTIONS: usize = 200;

/// Finds `x` with `f(x) = 0` for a non-increasing `f`.
///
/// The initial bracket `[lo, hi]` is widened by doubling its width at most
/// `max_expansions` times per side. Bisection stops once the bracket is
/// narrower than `x_tol`; a final secant step across the last bracket makes
/// the result exact on piecewise-linear functions.
pub fn decreasing_root<F>(f: F, lo: f64, hi: f64, max_expansions: usize, x_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    try_decreasing_root(|x| Ok(f(x)), lo, hi, max_expansions, x_tol)
}

/// [`decreasing_root`] for functions whose evaluation can fail.
pub fn try_decreasing_root<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    max_expansions: usize,
    x_tol: f64,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut f_lo = f(lo)?;
    let mut f_hi = f(hi)?;

    let mut width = (hi - lo).max(1e-3 * lo.abs().max(hi.abs()).max(1.0));
    let mut expansions = 0;
    while f_lo < 0.0 && expansions < max_expansions {
        hi = lo;
        f_hi = f_lo;
        lo -= width;
        width *= 2.0;
        f_lo = f(lo)?;
        expansions += 1;
    }
    let mut width = (hi - lo).max(1e-3 * lo.abs().max(hi.abs()).max(1.0));
    let mut expansions = 0;
    while f_hi > 0.0 && expansions < max_expansions {
        lo = hi;
        f_lo = f_hi;
        hi += width;
        width *= 2.0;
        f_hi = f(hi)?;
        expansions += 1;
    }
    if f_lo < 0.0 || f_hi > 0.0 || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::RootBracket { lo, hi });
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }

    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= x_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }

    let mut best = if f_lo.abs() <= f_hi.abs() {
        (lo, f_lo)
    } else {
        (hi, f_hi)
    };
    if f_lo != f_hi {
        let x = lo + f_lo * (hi - lo) / (f_lo - f_hi);
        if x > lo && x < hi {
            let fx = f(x)?;
            if fx.abs() < best.1.abs() {
                best = (x, fx);
            }
        }
    }
    Ok(best.0)
}
