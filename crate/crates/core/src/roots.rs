//! Bracketed scalar root finding: bisection refined by secant steps.

use crate::error::{Error, Result};

/// Root of a function that changes sign on `[lo, hi]`.
///
/// Secant steps are taken when they fall strictly inside the bracket and
/// shrink it by at least half over two iterations; otherwise the bracket is
/// bisected.  Stops when the bracket width is below `xtol * max(1, |x|)`.
pub fn bisect_secant<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numerical(format!(
            "no sign change on [{lo}, {hi}] (f = {fa:.3e}, {fb:.3e})"
        )));
    }
    let mut last_width = (b - a).abs();
    for iter in 0..400 {
        let width = (b - a).abs();
        let scale = a.abs().max(b.abs()).max(1.0);
        if width <= xtol * scale {
            break;
        }
        let secant = b - fb * (b - a) / (fb - fa);
        let use_secant = iter % 3 != 2
            && secant.is_finite()
            && secant > a.min(b)
            && secant < a.max(b)
            && width < 0.75 * last_width + f64::EPSILON * scale;
        last_width = width;
        let x = if use_secant { secant } else { 0.5 * (a + b) };
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
    }
    // Return the endpoint with the smaller residual.
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// Grows `[lo, hi]` geometrically, starting from `hi = start`, until
/// `f(hi) >= 0` given `f(lo) < 0`.  Returns the bracket.
pub fn grow_bracket<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    lo: f64,
    start: f64,
    max_hi: f64,
) -> Result<(f64, f64)> {
    let mut a = lo;
    let mut b = start;
    for _ in 0..2000 {
        if b >= max_hi {
            b = max_hi;
            if f(b)? >= 0.0 {
                return Ok((a, b));
            }
            return Err(Error::Numerical(format!(
                "no bracket found below {max_hi:.6e}"
            )));
        }
        if f(b)? >= 0.0 {
            return Ok((a, b));
        }
        a = b;
        b *= 2.0;
    }
    Err(Error::Numerical("bracket growth did not terminate".into()))
}
