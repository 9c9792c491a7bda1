//! Deterministic growth flow `phi_z(t)` solving `y' = tau(y)`, its inverse,
//! the jump hazard along the flow and jump-time sampling.

use rand::{Rng, RngExt};
use rand_distr::{Exp1, Open01};

use crate::error::{Error, Result};
use crate::ode::{self, Outcome, StepControl};
use crate::quad::{self, Tolerance};
use crate::rates::{RateFn, RateModel};
use crate::roots;

const QUAD_TOL: Tolerance = Tolerance {
    rel: 1e-12,
    abs: 1e-300,
    max_intervals: 4000,
};

/// Relative tolerance for hazard inversion.
const ROOT_TOL: f64 = 1e-12;

/// `(u^r - z^r) / r` evaluated without cancellation for `u` near `z`, with
/// the `r = 0` limit `ln(u / z)`.
fn power_increment(z: f64, u: f64, r: f64) -> f64 {
    let l = (u / z).ln();
    if r == 0.0 {
        l
    } else {
        (r * z.ln()).exp() * (r * l).exp_m1() / r
    }
}

/// Power-family hazard density `beta / tau` in size space, when `tau` is a
/// single power: terms `(k, r)` with `H(z, x) = sum k (x^r - z^r) / r`.
#[derive(Debug, Clone)]
struct SizeHazard {
    terms: Vec<(f64, f64)>,
}

impl SizeHazard {
    fn from_model(model: &RateModel) -> Option<Self> {
        let (c, p) = model.tau.single_power()?;
        let beta = model.beta.power_terms()?;
        Some(SizeHazard {
            terms: beta.iter().map(|&(b, q)| (b / c, q - p + 1.0)).collect(),
        })
    }

    fn between(&self, z: f64, x: f64) -> f64 {
        self.terms.iter().map(|&(k, r)| k * power_increment(z, x, r)).sum()
    }

    /// `H(z, inf)`, infinite unless every exponent is negative.
    fn total(&self, z: f64) -> f64 {
        if self.terms.iter().any(|&(_, r)| r >= 0.0) {
            f64::INFINITY
        } else {
            self.terms.iter().map(|&(k, r)| -k * z.powf(r) / r).sum()
        }
    }

    /// Size `x >= z` with `H(z, x) = e`, assuming `e < H(z, inf)`.
    fn invert(&self, z: f64, e: f64) -> Result<f64> {
        if let [(k, r)] = self.terms[..] {
            let v = e / k;
            if r == 0.0 {
                return Ok(z * v.exp());
            }
            // x^r = z^r (1 + r v z^{-r})
            let ratio = r * v * (-r * z.ln()).exp();
            let ln_x = if ratio.is_finite() {
                z.ln() + ratio.ln_1p() / r
            } else {
                (r * v).ln() / r
            };
            return Ok(ln_x.exp());
        }
        let g = |x: f64| self.between(z, x) - e;
        let (lo, hi) = roots::grow_bracket(|x| Ok(g(x)), z, 2.0 * z, f64::MAX)?;
        roots::bisect_secant(g, lo, hi, ROOT_TOL)
    }
}

/// The flow of `y' = tau(y)` together with the hazard `beta` along it.
#[derive(Debug, Clone)]
pub struct FlowMap {
    model: RateModel,
    ctl: StepControl,
    /// `(c, p)` when `tau = c x^p`.
    tau_power: Option<(f64, f64)>,
    size_hazard: Option<SizeHazard>,
}

impl FlowMap {
    pub fn new(model: RateModel) -> Self {
        let tau_power = model.tau.single_power();
        let size_hazard = SizeHazard::from_model(&model);
        FlowMap {
            model,
            ctl: StepControl::default(),
            tau_power,
            size_hazard,
        }
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn tau(&self) -> &RateFn {
        &self.model.tau
    }

    pub fn beta(&self) -> &RateFn {
        &self.model.beta
    }

    /// True when both the flow and the hazard have closed forms.
    pub fn is_closed_form(&self) -> bool {
        self.tau_power.is_some() && self.size_hazard.is_some()
    }

    /// Time at which `phi_z` reaches infinity; `+inf` for global flows.
    pub fn explosion_time(&self, z: f64) -> f64 {
        if let Some((c, p)) = self.tau_power {
            return if p > 1.0 {
                (-(p - 1.0) * z.ln()).exp() / ((p - 1.0) * c)
            } else {
                f64::INFINITY
            };
        }
        if self.model.tau.asymptotics().exp_inf <= 1.0 {
            return f64::INFINITY;
        }
        let tau = &self.model.tau;
        let lz = z.ln();
        quad::integrate_to_infinity(
            |s| {
                let u = (lz + s).exp();
                if u.is_finite() {
                    u / tau.eval(u)
                } else {
                    0.0
                }
            },
            0.0,
            QUAD_TOL,
        )
        .map(|e| e.value)
        .unwrap_or(f64::INFINITY)
    }

    fn check_args(z: f64, t: f64) -> Result<()> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("flow started from non-positive size {z}")));
        }
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("flow evaluated at negative time {t}")));
        }
        Ok(())
    }

    /// `phi_z(t)`.
    pub fn flow(&self, z: f64, t: f64) -> Result<f64> {
        Self::check_args(z, t)?;
        if t == 0.0 {
            return Ok(z);
        }
        let t_exp = self.explosion_time(z);
        if t >= t_exp {
            return Err(Error::FlowExplosion {
                explosion_time: t_exp,
                requested: t,
            });
        }
        if let Some((c, p)) = self.tau_power {
            return Ok(if p == 0.0 {
                z + c * t
            } else if p == 1.0 {
                z * (c * t).exp()
            } else {
                let q = 1.0 - p;
                // z^q + q c t = z^q (1 + q c t z^{-q})
                z * ((q * c * t * (-q * z.ln()).exp()).ln_1p() / q).exp()
            });
        }
        let tau = &self.model.tau;
        match ode::integrate(|y: &[f64; 1]| [tau.eval(y[0])], [z], t, self.ctl, |_| false)? {
            Outcome::Reached(y) => Ok(y[0]),
            Outcome::Stopped(_) => unreachable!("no stop predicate"),
        }
    }

    /// `phi_z^{-1}(x) = ∫_z^x du / tau(u)`.
    pub fn flow_inverse(&self, z: f64, x: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("flow started from non-positive size {z}")));
        }
        if !(x >= z) {
            return Err(Error::Domain(format!("flow cannot reach {x} from {z}: sizes only grow")));
        }
        if x == z {
            return Ok(0.0);
        }
        if let Some((c, p)) = self.tau_power {
            return Ok(power_increment(z, x, 1.0 - p) / c);
        }
        let tau = &self.model.tau;
        let (lz, lx) = (z.ln(), x.ln());
        // u = e^s smooths the integrand over many decades.
        Ok(quad::integrate(
            |s| {
                let u = s.exp();
                u / tau.eval(u)
            },
            lz,
            lx,
            QUAD_TOL,
        )?
        .value)
    }

    /// `H(z, x) = ∫_z^x beta(u) / tau(u) du`, the hazard accumulated while
    /// growing from `z` to `x`.
    pub fn hazard_between(&self, z: f64, x: f64) -> Result<f64> {
        if !(z > 0.0 && x >= z) {
            return Err(Error::Domain(format!("hazard between {z} and {x} is undefined")));
        }
        if let Some(h) = &self.size_hazard {
            return Ok(h.between(z, x));
        }
        let (tau, beta) = (&self.model.tau, &self.model.beta);
        Ok(quad::integrate(
            |s| {
                let u = s.exp();
                u * beta.eval(u) / tau.eval(u)
            },
            z.ln(),
            x.ln(),
            QUAD_TOL,
        )?
        .value)
    }

    /// `Lambda_z(t) = ∫_0^t beta(phi_z(s)) ds`.
    pub fn hazard(&self, z: f64, t: f64) -> Result<f64> {
        Self::check_args(z, t)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        if self.is_closed_form() {
            let x = self.flow(z, t)?;
            return self.hazard_between(z, x);
        }
        let (tau, beta) = (&self.model.tau, &self.model.beta);
        let t_exp = self.explosion_time(z);
        if t >= t_exp {
            return Err(Error::FlowExplosion {
                explosion_time: t_exp,
                requested: t,
            });
        }
        match ode::integrate(
            |y: &[f64; 2]| [tau.eval(y[0]), beta.eval(y[0])],
            [z, 0.0],
            t,
            self.ctl,
            |_| false,
        )? {
            Outcome::Reached(y) => Ok(y[1]),
            Outcome::Stopped(_) => unreachable!("no stop predicate"),
        }
    }

    /// Time and pre-jump size of the first jump from `z` when the unit
    /// exponential threshold is `e`.  `None` when the hazard stays below
    /// `e` along a global flow.
    pub fn invert_hazard(&self, z: f64, e: f64) -> Result<Option<(f64, f64)>> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("jump time from non-positive size {z}")));
        }
        if let (Some(h), Some(_)) = (&self.size_hazard, self.tau_power) {
            if e >= h.total(z) {
                return self.bounded_hazard(z);
            }
            let x = h.invert(z, e)?;
            let t = self.flow_inverse(z, x)?;
            return Ok(Some((t, x)));
        }
        self.invert_hazard_ode(z, e)
    }

    fn bounded_hazard(&self, z: f64) -> Result<Option<(f64, f64)>> {
        let t_exp = self.explosion_time(z);
        if t_exp.is_finite() {
            Err(Error::ModelInconsistency(format!(
                "the hazard from z = {z:.6e} stays bounded while the flow explodes at t = {t_exp:.6e}; \
                 fragmentation does not balance growth at infinity"
            )))
        } else {
            Ok(None)
        }
    }

    fn invert_hazard_ode(&self, z: f64, e: f64) -> Result<Option<(f64, f64)>> {
        let (tau, beta) = (&self.model.tau, &self.model.beta);
        let rhs = |y: &[f64; 2]| [tau.eval(y[0]), beta.eval(y[0])];
        let mut t_lo = 0.0;
        let mut state = [z, 0.0];
        let mut width = 1.0;
        loop {
            let out = ode::integrate(rhs, state, width, self.ctl, |y| y[1] >= e);
            let crossing = match out {
                Err(Error::FlowExplosion { .. }) => {
                    return Err(Error::ModelInconsistency(format!(
                        "the flow from z = {z:.6e} explodes before the hazard reaches {e:.6e}"
                    )))
                }
                Err(err) => return Err(err),
                Ok(Outcome::Reached(y)) => {
                    t_lo += width;
                    let stalled = y[1] - state[1] <= 1e-14 * e.max(1.0) && width > 1e12;
                    state = y;
                    width *= 2.0;
                    if stalled || !t_lo.is_finite() || t_lo > 1e300 {
                        return self.bounded_hazard(z);
                    }
                    continue;
                }
                Ok(Outcome::Stopped(c)) => c,
            };
            // Refine inside the accepted step by re-integrating from its start.
            let base = crossing.y0;
            let span = crossing.t1 - crossing.t0;
            let lambda_at = |s: f64| -> f64 {
                match ode::integrate(rhs, base, s, self.ctl, |_| false) {
                    Ok(Outcome::Reached(y)) => y[1] - e,
                    _ => f64::INFINITY,
                }
            };
            let s = roots::bisect_secant(lambda_at, 0.0, span, ROOT_TOL)?;
            let t = t_lo + crossing.t0 + s;
            let x = match ode::integrate(rhs, base, s, self.ctl, |_| false)? {
                Outcome::Reached(y) => y[0],
                Outcome::Stopped(_) => unreachable!(),
            };
            return Ok(Some((t, x)));
        }
    }

    /// Jump time by hazard inversion; `+inf` when the process never jumps.
    pub fn sample_jump_time<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Result<f64> {
        let e: f64 = rng.sample(Exp1);
        Ok(self.invert_hazard(z, e)?.map_or(f64::INFINITY, |(t, _)| t))
    }

    /// Jump time by thinning against a local majorant of
    /// `s -> beta(phi_z(s))` on doubling windows.
    pub fn sample_jump_time_thinning<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Result<f64> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("jump time from non-positive size {z}")));
        }
        let beta = &self.model.beta;
        let mut t0 = 0.0;
        let mut x0 = z;
        let mut width = 1.0 / (beta.eval(z) + self.model.tau.eval(z) / z);
        loop {
            let t_exp = self.explosion_time(x0);
            if width >= t_exp {
                width = 0.5 * t_exp;
            }
            let x1 = self.flow(x0, width)?;
            let bound = beta.sup_on(x0, x1);
            let mut s = 0.0;
            loop {
                let gap: f64 = rng.sample(Exp1);
                s += gap / bound;
                if s > width {
                    break;
                }
                let u: f64 = rng.sample(Open01);
                if u * bound <= beta.eval(self.flow(x0, s)?) {
                    return Ok(t0 + s);
                }
            }
            t0 += width;
            x0 = x1;
            width *= 2.0;
            if !t0.is_finite() || t0 > 1e300 {
                return self.bounded_hazard(z).map(|_| f64::INFINITY);
            }
        }
    }
}
