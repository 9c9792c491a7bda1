//! Embedded Dormand-Prince 5(4) integrator for small autonomous systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 200_000,
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Outcome of [`integrate`] when a stopping predicate fires inside a step.
#[derive(Debug, Clone, Copy)]
pub struct Crossing<const N: usize> {
    pub t0: f64,
    pub y0: [f64; N],
    pub t1: f64,
    pub y1: [f64; N],
}

pub enum Outcome<const N: usize> {
    Reached([f64; N]),
    Stopped(Crossing<N>),
}

/// Integrates the autonomous system `y' = f(y)` from `y0` over `[0, t_end]`.
///
/// If `stop` returns true on an accepted state, integration halts and the
/// last accepted step bracketing the event is returned.  Step-size collapse
/// (blow-up of the solution) is reported as [`Error::FlowExplosion`] with
/// the time reached as the explosion estimate.
pub fn integrate<const N: usize, F, S>(
    f: F,
    y0: [f64; N],
    t_end: f64,
    ctl: StepControl,
    mut stop: S,
) -> Result<Outcome<N>>
where
    F: Fn(&[f64; N]) -> [f64; N],
    S: FnMut(&[f64; N]) -> bool,
{
    if t_end == 0.0 {
        return Ok(Outcome::Reached(y0));
    }
    let mut t = 0.0;
    let mut y = y0;
    let mut k1 = f(&y);
    let scale0 = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let slope0 = k1.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let mut h = (0.01 * scale0 / slope0).min(t_end).max(1e-12 * t_end);
    for _ in 0..ctl.max_steps {
        if t + h > t_end {
            h = t_end - t;
        }
        let k2 = f(&axpy(&y, &[(A21, &k1)], h));
        let k3 = f(&axpy(&y, &[(A31, &k1), (A32, &k2)], h));
        let k4 = f(&axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
        let k5 = f(&axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
        let k6 = f(&axpy(
            &y,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            h,
        ));
        let y_new = axpy(
            &y,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            h,
        );
        let k7 = f(&y_new);
        let mut err = 0.0f64;
        let finite = y_new.iter().all(|v| v.is_finite()) && k7.iter().all(|v| v.is_finite());
        if finite {
            for i in 0..N {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = ctl.atol + ctl.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
        } else {
            err = f64::INFINITY;
        }
        if err <= 1.0 {
            let t_new = t + h;
            if stop(&y_new) {
                return Ok(Outcome::Stopped(Crossing {
                    t0: t,
                    y0: y,
                    t1: t_new,
                    y1: y_new,
                }));
            }
            t = t_new;
            y = y_new;
            k1 = k7;
            if t >= t_end {
                return Ok(Outcome::Reached(y));
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= factor;
        }
        if h < 1e-15 * t.abs().max(1e-300) || h < f64::MIN_POSITIVE {
            return Err(Error::FlowExplosion {
                explosion_time: t,
                requested: t_end,
            });
        }
    }
    Err(Error::Numerical(format!(
        "ODE integration exceeded {} steps before t = {t_end}",
        ctl.max_steps
    )))
}
