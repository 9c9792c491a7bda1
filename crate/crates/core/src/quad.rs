//! Adaptive Gauss-Kronrod quadrature.
//!
//! The 7/15-point pair is applied on a priority queue of subintervals
//! (largest error first).  Integrals over the unit interval use the
//! substitutions `y = c e^{-s}` near 0 and `1 - y = (1 - c) e^{-s}` near 1,
//! with `s = u / (1 - u)` mapping the half line onto `[0, 1)`, so that
//! integrable endpoint singularities such as `y^{-0.99}` are resolved.
//! Integrands on the unit interval receive the logarithms of `y`, `1 - y`
//! and of the Jacobian so that weights can be combined in log space.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd-indexed Kronrod nodes (XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-10,
            abs: 1e-14,
            max_intervals: 4000,
        }
    }
}

impl Tolerance {
    pub fn rel(rel: f64) -> Self {
        Tolerance {
            rel,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = resk * half;
    resabs *= half.abs();
    resasc *= half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (value, err)
}

/// Adaptive integration of `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    integrate_partitioned(f, &[a, b], tol)
}

/// Adaptive integration over `[breaks[0], breaks[n-1]]`, seeded with the
/// given increasing breakpoints.
pub fn integrate_partitioned<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: Tolerance) -> Result<Estimate> {
    let (a, b) = (breaks[0], breaks[breaks.len() - 1]);
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    if !breaks.iter().all(|x| x.is_finite()) {
        return Err(Error::Domain(format!("integration bounds [{a}, {b}] must be finite")));
    }
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (value, error) = kronrod15(&f, w[0], w[1]);
            heap.push(Segment {
                a: w[0],
                b: w[1],
                value,
                error,
            });
            total += value;
            total_err += error;
        }
    }
    loop {
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite quadrature sum on [{a}, {b}]"
            )));
        }
        if total_err <= tol.abs.max(tol.rel * total.abs()) {
            break;
        }
        if heap.len() >= tol.max_intervals {
            // Accept if the remaining error is within a loose multiple of the target.
            if total_err <= 1e3 * tol.abs.max(tol.rel * total.abs()) {
                break;
            }
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] did not converge: value {total:.6e}, error {total_err:.3e}"
            )));
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in double precision.
            heap.push(Segment {
                error: 0.0,
                ..worst
            });
            total_err -= worst.error;
            continue;
        }
        let (v1, e1) = kronrod15(&f, worst.a, mid);
        let (v2, e2) = kronrod15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        // Re-sum periodically to contain cancellation drift.
        if heap.len() % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let error: f64 = heap.iter().map(|s| s.error).sum();
    Ok(Estimate { value, error })
}

/// Integral of `f` over `[a, +inf)` via `x = a + u / (1 - u)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Result<Estimate> {
    integrate(
        |u| {
            let w = 1.0 - u;
            let x = a + u / w;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v / (w * w)
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// A point of the open unit interval carried with its logarithmic coordinates.
#[derive(Debug, Clone, Copy)]
pub struct UnitPoint {
    pub y: f64,
    pub ln_y: f64,
    pub ln_1my: f64,
    /// Logarithm of `dy/du` for the substitution in use.
    pub ln_jac: f64,
}

impl UnitPoint {
    fn interior(y: f64) -> Self {
        UnitPoint {
            y,
            ln_y: y.ln(),
            ln_1my: (-y).ln_1p(),
            ln_jac: 0.0,
        }
    }
}

fn left_map(c: f64, u: f64) -> UnitPoint {
    let w = 1.0 - u;
    let s = u / w;
    let ln_c = c.ln();
    let ln_y = ln_c - s;
    let y = ln_y.exp();
    UnitPoint {
        y,
        ln_y,
        ln_1my: (-y).ln_1p(),
        ln_jac: ln_y - 2.0 * w.ln(),
    }
}

fn right_map(c: f64, u: f64) -> UnitPoint {
    let w = 1.0 - u;
    let s = u / w;
    let ln_1my = (1.0 - c).ln() - s;
    let one_minus = ln_1my.exp();
    UnitPoint {
        y: 1.0 - one_minus,
        ln_y: (-one_minus).ln_1p(),
        ln_1my,
        ln_jac: ln_1my - 2.0 * w.ln(),
    }
}

fn unit_breaks() -> Vec<f64> {
    let mut b = vec![0.0];
    let mut s = 0.5;
    while s <= 1024.0 {
        b.push(s / (1.0 + s));
        s *= 2.0;
    }
    b.push(1.0);
    b
}

/// Integral over `[lo, hi] ⊂ [0, 1]` of an integrand evaluated on
/// [`UnitPoint`]s.  The closure must return the integrand already multiplied
/// by `exp(p.ln_jac)`, which lets callers fold the Jacobian into a
/// log-space weight.
pub fn integrate_unit<F: Fn(&UnitPoint) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: Tolerance,
) -> Result<Estimate> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::Domain(format!("[{lo}, {hi}] is not a subinterval of [0, 1]")));
    }
    if lo == hi {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    // Seed with a geometric partition of s = u / (1 - u) so that features
    // at any depth towards the endpoint are sampled by the first pass.
    let breaks = unit_breaks();
    let left = |c: f64| integrate_partitioned(|u| f(&left_map(c, u)), &breaks, tol);
    let right = |c: f64| integrate_partitioned(|u| f(&right_map(c, u)), &breaks, tol);
    let parts = match (lo == 0.0, hi == 1.0) {
        (true, true) => vec![left(0.5)?, right(0.5)?],
        (true, false) => vec![left(hi)?],
        (false, true) => vec![right(lo)?],
        (false, false) => vec![integrate(|y| f(&UnitPoint::interior(y)), lo, hi, tol)?],
    };
    Ok(Estimate {
        value: parts.iter().map(|e| e.value).sum(),
        error: parts.iter().map(|e| e.error).sum(),
    })
}

/// Convenience wrapper of [`integrate_unit`] for a plain function of `y`.
pub fn integrate_unit_plain<F: Fn(f64) -> f64>(
    g: F,
    lo: f64,
    hi: f64,
    tol: Tolerance,
) -> Result<Estimate> {
    integrate_unit(
        |p| {
            let v = g(p.y);
            if v == 0.0 {
                0.0
            } else {
                v * p.ln_jac.exp()
            }
        },
        lo,
        hi,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let e = integrate(|x| 3.0 * x * x, 0.0, 2.0, Tolerance::default()).unwrap();
        assert!((e.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn near_singular_power_at_zero() {
        // ∫₀¹ y^{-0.99} dy = 100
        let e = integrate_unit(|p| (-0.99 * p.ln_y + p.ln_jac).exp(), 0.0, 1.0, Tolerance::default())
            .unwrap();
        assert!((e.value - 100.0).abs() < 1e-7, "{}", e.value);
    }

    #[test]
    fn singular_at_one() {
        // ∫₀¹ (1-y)^{-1/2} dy = 2
        let e = integrate_unit(|p| (-0.5 * p.ln_1my + p.ln_jac).exp(), 0.0, 1.0, Tolerance::default())
            .unwrap();
        assert!((e.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn partial_ranges_add_up() {
        let g = |y: f64| y.sqrt() * (1.0 - y);
        let tol = Tolerance::default();
        let full = integrate_unit_plain(g, 0.0, 1.0, tol).unwrap().value;
        let a = integrate_unit_plain(g, 0.0, 0.3, tol).unwrap().value;
        let b = integrate_unit_plain(g, 0.3, 0.7, tol).unwrap().value;
        let c = integrate_unit_plain(g, 0.7, 1.0, tol).unwrap().value;
        assert!((full - (a + b + c)).abs() < 1e-12);
        // 2/3 - 2/5
        assert!((full - 4.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn semi_infinite() {
        let e = integrate_to_infinity(|x| (-x).exp(), 1.0, Tolerance::default()).unwrap();
        assert!((e.value - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn sharp_peak_near_one() {
        // ∫₀¹ exp(-k(1-y)) dy = (1 - e^{-k}) / k for large k
        let k = 1e8;
        let e = integrate_unit(|p| (-k * p.ln_1my.exp() + p.ln_jac).exp(), 0.0, 1.0, Tolerance::default())
            .unwrap();
        assert!((e.value * k - 1.0).abs() < 1e-8, "{} {}", e.value * k, e.error);
    }
}
