//! Safeguarded Newton iteration on a sign-changing bracket.

use crate::error::{Error, Result};

/// Finds a root of `f` on `[lo, hi]` where `f(lo)` and `f(hi)` differ in sign.
///
/// `f` returns the value and the derivative. A Newton step is taken when it
/// stays inside the current bracket and at least halves the previous step;
/// otherwise the bracket is bisected. Iteration stops when `accept(x, fx, dfx)`
/// holds or the bracket has shrunk to adjacent doubles, in which case the
/// endpoint with the smaller residual is returned.
pub(crate) fn solve<F, A>(f: F, mut lo: f64, mut hi: f64, accept: A, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
    A: Fn(f64, f64, f64) -> bool,
{
    debug_assert!(lo < hi);
    let (mut flo, dflo) = f(lo);
    let (mut fhi, dfhi) = f(hi);
    if flo == 0.0 || accept(lo, flo, dflo) {
        return Ok(lo);
    }
    if fhi == 0.0 || accept(hi, fhi, dfhi) {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!(
            "no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}"
        )));
    }

    let mut x = 0.5 * (lo + hi);
    let mut prev_step = hi - lo;
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx == 0.0 || accept(x, fx, dfx) {
            return Ok(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(if flo.abs() <= fhi.abs() { lo } else { hi });
        }
        let newton = x - fx / dfx;
        let step = (newton - x).abs();
        let next = if newton.is_finite() && newton > lo && newton < hi && step <= 0.5 * prev_step {
            prev_step = step;
            newton
        } else {
            prev_step = hi - lo;
            mid
        };
        x = next;
    }
    Err(Error::SolverFailure {
        lo,
        hi,
        iterations: max_iter,
    })
}
