//! Growth and fragmentation rates, fragmentation kernels and their moments.
//!
//! A [`RateModel`] pairs a growth rate `tau` with a fragmentation rate
//! `beta`.  Both are positive functions on `(0, inf)` with power-law
//! behaviour at 0 and at infinity.  A [`FragmentationKernel`] is the law of
//! the relative size `y ∈ (0, 1)` kept after a division; only
//! size-independent kernels are supported, so `M_x(a) = M(a)` for all `x`.

use rand::{Rng, RngExt};
use rand_distr::{Beta, Distribution, Open01};
use serde::Serialize;
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance, UnitPoint};

/// Leading power-law behaviour `c0 x^e0` at 0 and `cinf x^einf` at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Asymptotics {
    pub coef_zero: f64,
    pub exp_zero: f64,
    pub coef_inf: f64,
    pub exp_inf: f64,
}

impl Asymptotics {
    pub fn scaled(self, c: f64) -> Self {
        Asymptotics {
            coef_zero: self.coef_zero * c,
            coef_inf: self.coef_inf * c,
            ..self
        }
    }
}

/// Rate table, piecewise linear in log-log coordinates and extrapolated
/// with the end slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    ln_x: Vec<f64>,
    ln_v: Vec<f64>,
    fitted: Asymptotics,
    declared: Option<Asymptotics>,
    tolerance: f64,
    notes: Vec<String>,
}

/// Number of extreme knots used for the log-log asymptotic fit of a table.
const TABLE_FIT_POINTS: usize = 5;

fn ls_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

impl RateTable {
    /// Builds a table from `(x, value)` knots.  `declared` asymptotics, when
    /// given, override the least-squares fit on the extreme knots and any
    /// discrepancy above `tolerance` (in exponent units) is noted.
    pub fn new(points: &[(f64, f64)], declared: Option<Asymptotics>, tolerance: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidModel("a rate table needs at least two knots".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidModel("rate table knots must be strictly increasing".into()));
            }
        }
        if points.iter().any(|&(x, v)| !(x > 0.0 && v > 0.0 && x.is_finite() && v.is_finite())) {
            return Err(Error::InvalidModel(
                "rate table knots and values must be positive and finite".into(),
            ));
        }
        let ln_x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
        let ln_v: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
        let k = TABLE_FIT_POINTS.min(points.len());
        let (s0, i0) = ls_line(&ln_x[..k], &ln_v[..k]);
        let n = ln_x.len();
        let (s1, i1) = ls_line(&ln_x[n - k..], &ln_v[n - k..]);
        let fitted = Asymptotics {
            coef_zero: i0.exp(),
            exp_zero: s0,
            coef_inf: i1.exp(),
            exp_inf: s1,
        };
        let mut notes = Vec::new();
        if let Some(d) = declared {
            if (d.exp_zero - fitted.exp_zero).abs() > tolerance {
                notes.push(format!(
                    "declared exponent at 0 ({}) differs from fitted ({:.6})",
                    d.exp_zero, fitted.exp_zero
                ));
            }
            if (d.exp_inf - fitted.exp_inf).abs() > tolerance {
                notes.push(format!(
                    "declared exponent at infinity ({}) differs from fitted ({:.6})",
                    d.exp_inf, fitted.exp_inf
                ));
            }
        }
        Ok(RateTable {
            ln_x,
            ln_v,
            fitted,
            declared,
            tolerance,
            notes,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        let lx = x.ln();
        let n = self.ln_x.len();
        let seg = match self.ln_x.partition_point(|&k| k <= lx) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (x0, x1) = (self.ln_x[seg], self.ln_x[seg + 1]);
        let (v0, v1) = (self.ln_v[seg], self.ln_v[seg + 1]);
        (v0 + (v1 - v0) * (lx - x0) / (x1 - x0)).exp()
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ln_x.iter().zip(&self.ln_v).map(|(x, v)| (x.exp(), v.exp()))
    }

    pub fn fitted(&self) -> Asymptotics {
        self.fitted
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    fn asymptotics(&self) -> Asymptotics {
        self.declared.unwrap_or(self.fitted)
    }

    /// Largest deviation `|log v(x) - log(c x^e)|` over the three extreme
    /// knots at each end.
    pub fn asymptotic_mismatch(&self) -> (f64, f64) {
        let a = self.asymptotics();
        let n = self.ln_x.len();
        let k = 3.min(n);
        let dev = |i: usize, c: f64, e: f64| (self.ln_v[i] - (c.ln() + e * self.ln_x[i])).abs();
        let lo = (0..k).map(|i| dev(i, a.coef_zero, a.exp_zero)).fold(0.0, f64::max);
        let hi = (n - k..n).map(|i| dev(i, a.coef_inf, a.exp_inf)).fold(0.0, f64::max);
        (lo, hi)
    }

    fn scaled(&self, c: f64) -> Self {
        RateTable {
            ln_v: self.ln_v.iter().map(|v| v + c.ln()).collect(),
            fitted: self.fitted.scaled(c),
            declared: self.declared.map(|d| d.scaled(c)),
            ..self.clone()
        }
    }
}

/// A positive rate function on `(0, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFn {
    Constant { c: f64 },
    /// `coef * x^exponent`
    Power { coef: f64, exponent: f64 },
    /// `c1 x^p1 + c2 x^p2` with nonnegative coefficients, not both zero.
    TwoTerm { c1: f64, p1: f64, c2: f64, p2: f64 },
    Table(RateTable),
}

impl RateFn {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidModel(format!("constant rate must be positive, got {c}")));
        }
        Ok(RateFn::Constant { c })
    }

    pub fn power(coef: f64, exponent: f64) -> Result<Self> {
        if !(coef > 0.0 && coef.is_finite() && exponent.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "power rate needs a positive coefficient, got {coef} x^{exponent}"
            )));
        }
        Ok(RateFn::Power { coef, exponent })
    }

    pub fn two_term(c1: f64, p1: f64, c2: f64, p2: f64) -> Result<Self> {
        let ok = c1 >= 0.0 && c2 >= 0.0 && c1 + c2 > 0.0;
        if !ok || ![c1, p1, c2, p2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "two-term rate needs nonnegative coefficients, not both zero (got {c1}, {c2})"
            )));
        }
        Ok(RateFn::TwoTerm { c1, p1, c2, p2 })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RateFn::Constant { c } => *c,
            RateFn::Power { coef, exponent } => coef * x.powf(*exponent),
            RateFn::TwoTerm { c1, p1, c2, p2 } => {
                let mut v = 0.0;
                if *c1 > 0.0 {
                    v += c1 * x.powf(*p1);
                }
                if *c2 > 0.0 {
                    v += c2 * x.powf(*p2);
                }
                v
            }
            RateFn::Table(t) => t.eval(x),
        }
    }

    /// Nonzero `(coefficient, exponent)` terms for the power families.
    pub fn power_terms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            RateFn::Constant { c } => Some(vec![(*c, 0.0)]),
            RateFn::Power { coef, exponent } => Some(vec![(*coef, *exponent)]),
            RateFn::TwoTerm { c1, p1, c2, p2 } => {
                let mut v = Vec::with_capacity(2);
                if *c1 > 0.0 {
                    v.push((*c1, *p1));
                }
                if *c2 > 0.0 {
                    v.push((*c2, *p2));
                }
                Some(v)
            }
            RateFn::Table(_) => None,
        }
    }

    /// The function as a single power `c x^p`, when it is one.
    pub fn single_power(&self) -> Option<(f64, f64)> {
        match self.power_terms() {
            Some(t) if t.len() == 1 => Some(t[0]),
            Some(t) if t.len() == 2 && t[0].1 == t[1].1 => Some((t[0].0 + t[1].0, t[0].1)),
            _ => None,
        }
    }

    pub fn asymptotics(&self) -> Asymptotics {
        match self {
            RateFn::Table(t) => t.asymptotics(),
            _ => {
                let terms = self.power_terms().expect("power family");
                let lo = terms
                    .iter()
                    .copied()
                    .fold(None::<(f64, f64)>, |acc, (c, p)| match acc {
                        None => Some((c, p)),
                        Some((_, pa)) if p < pa => Some((c, p)),
                        Some((ca, pa)) if p == pa => Some((ca + c, pa)),
                        keep => keep,
                    })
                    .unwrap();
                let hi = terms
                    .iter()
                    .copied()
                    .fold(None::<(f64, f64)>, |acc, (c, p)| match acc {
                        None => Some((c, p)),
                        Some((_, pa)) if p > pa => Some((c, p)),
                        Some((ca, pa)) if p == pa => Some((ca + c, pa)),
                        keep => keep,
                    })
                    .unwrap();
                Asymptotics {
                    coef_zero: lo.0,
                    exp_zero: lo.1,
                    coef_inf: hi.0,
                    exp_inf: hi.1,
                }
            }
        }
    }

    /// `c * self`.
    pub fn scaled(&self, c: f64) -> RateFn {
        match self {
            RateFn::Constant { c: k } => RateFn::Constant { c: k * c },
            RateFn::Power { coef, exponent } => RateFn::Power {
                coef: coef * c,
                exponent: *exponent,
            },
            RateFn::TwoTerm { c1, p1, c2, p2 } => RateFn::TwoTerm {
                c1: c1 * c,
                p1: *p1,
                c2: c2 * c,
                p2: *p2,
            },
            RateFn::Table(t) => RateFn::Table(t.scaled(c)),
        }
    }

    /// Upper bound of the function on `[lo, hi]` (`hi` may be infinite).
    ///
    /// Exact for the power families (each term is monotone) and for tables
    /// (monotone between knots in log-log coordinates).
    pub fn sup_on(&self, lo: f64, hi: f64) -> f64 {
        match self {
            RateFn::Table(t) => {
                let mut m = t.eval(lo).max(if hi.is_finite() { t.eval(hi) } else { 0.0 });
                if !hi.is_finite() && t.ln_v[t.ln_v.len() - 1] > t.ln_v[t.ln_v.len() - 2] {
                    return f64::INFINITY;
                }
                for (x, v) in t.knots() {
                    if x > lo && x < hi {
                        m = m.max(v);
                    }
                }
                m
            }
            _ => self
                .power_terms()
                .unwrap()
                .iter()
                .map(|&(c, p)| {
                    let a = c * lo.powf(p);
                    let b = c * hi.powf(p);
                    a.max(b)
                })
                .sum(),
        }
    }
}

/// Growth rate `tau` and fragmentation rate `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    pub tau: RateFn,
    pub beta: RateFn,
}

/// Outcome of the standing-assumption checks on a [`RateModel`].
#[derive(Debug, Clone, Serialize)]
pub struct RateValidation {
    pub tau: Asymptotics,
    pub beta: Asymptotics,
    pub warnings: Vec<String>,
}

fn probe_grid() -> impl Iterator<Item = f64> {
    (-32..=32).map(|k| 10f64.powf(k as f64 / 4.0))
}

impl RateModel {
    pub fn new(tau: RateFn, beta: RateFn) -> Self {
        RateModel { tau, beta }
    }

    pub fn tau_asym(&self) -> Asymptotics {
        self.tau.asymptotics()
    }

    pub fn beta_asym(&self) -> Asymptotics {
        self.beta.asymptotics()
    }

    /// Checks positivity of both rates on a log-spaced probe grid and, for
    /// tables, the agreement with the declared asymptotics.
    pub fn validate(&self) -> Result<RateValidation> {
        let mut warnings = Vec::new();
        for (name, f) in [("tau", &self.tau), ("beta", &self.beta)] {
            for x in probe_grid() {
                let v = f.eval(x);
                if !(v > 0.0) || v.is_nan() {
                    return Err(Error::InvalidModel(format!(
                        "{name}({x:.3e}) = {v} is not positive"
                    )));
                }
            }
            if let RateFn::Table(t) = f {
                let (lo, hi) = t.asymptotic_mismatch();
                if lo > t.tolerance || hi > t.tolerance {
                    return Err(Error::InvalidModel(format!(
                        "{name} table deviates from its asymptotic power laws (log error {lo:.3e} at 0, {hi:.3e} at infinity)"
                    )));
                }
                warnings.extend(t.notes().iter().map(|n| format!("{name}: {n}")));
            }
        }
        Ok(RateValidation {
            tau: self.tau_asym(),
            beta: self.beta_asym(),
            warnings,
        })
    }

    /// The same model with time rescaled: `(c tau, c beta)`.
    pub fn time_scaled(&self, c: f64) -> RateModel {
        RateModel {
            tau: self.tau.scaled(c),
            beta: self.beta.scaled(c),
        }
    }
}

pub fn eval_tau(model: &RateModel, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("tau evaluated at non-positive size {x}")));
    }
    Ok(model.tau.eval(x))
}

pub fn eval_beta(model: &RateModel, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("beta evaluated at non-positive size {x}")));
    }
    Ok(model.beta.eval(x))
}

/// Density asymptotics `q(y) ≈ q0 y^mu0` at 0 and `q(y) ≈ q1 (1-y)^mu1` at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryData {
    pub q0: f64,
    pub mu0: f64,
    pub q1: f64,
    pub mu1: f64,
}

/// Beta-shaped relative-size density proportional to `y^mu0 (1-y)^mu1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaKernel {
    mu0: f64,
    mu1: f64,
    ln_norm: f64,
}

impl BetaKernel {
    pub fn mu0(&self) -> f64 {
        self.mu0
    }
    pub fn mu1(&self) -> f64 {
        self.mu1
    }
    /// `ln B(mu0 + 1, mu1 + 1)`
    pub fn ln_normalizer(&self) -> f64 {
        self.ln_norm
    }
}

/// Piecewise-linear density on knots spanning `[0, 1]`, renormalized to
/// unit mass at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    knots: Vec<f64>,
    values: Vec<f64>,
    cdf: Vec<f64>,
    raw_mass: f64,
    warnings: Vec<String>,
}

impl TabulatedKernel {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn density(&self, y: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= y).clamp(1, self.knots.len() - 1) - 1;
        let (y0, y1) = (self.knots[i], self.knots[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        v0 + (v1 - v0) * (y - y0) / (y1 - y0)
    }

    fn first_slope(&self) -> f64 {
        (self.values[1] - self.values[0]) / (self.knots[1] - self.knots[0])
    }

    fn last_slope(&self) -> f64 {
        let n = self.knots.len();
        (self.values[n - 2] - self.values[n - 1]) / (self.knots[n - 1] - self.knots[n - 2])
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let n = self.knots.len();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, n - 1) - 1;
        let target = u - self.cdf[i];
        let q0 = self.values[i];
        let width = self.knots[i + 1] - self.knots[i];
        let slope = (self.values[i + 1] - q0) / width;
        let disc = (q0 * q0 + 2.0 * slope * target).max(0.0);
        let denom = q0 + disc.sqrt();
        let d = if denom > 0.0 { 2.0 * target / denom } else { 0.0 };
        (self.knots[i] + d.clamp(0.0, width)).clamp(self.knots[i], self.knots[i + 1])
    }
}

/// Law `Q(dy)` of the relative size kept at a division.
#[derive(Debug, Clone, PartialEq)]
pub enum FragmentationKernel {
    PointMass { r: f64 },
    Uniform,
    BetaShape(BetaKernel),
    Tabulated(TabulatedKernel),
}

/// Default quadrature tolerance for kernel integrals.
pub const KERNEL_TOL: Tolerance = Tolerance {
    rel: 1e-11,
    abs: 1e-15,
    max_intervals: 4000,
};

impl FragmentationKernel {
    pub fn point_mass(r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidModel(format!("point mass must lie in (0, 1), got {r}")));
        }
        Ok(FragmentationKernel::PointMass { r })
    }

    pub fn uniform() -> Self {
        FragmentationKernel::Uniform
    }

    pub fn beta_shape(mu0: f64, mu1: f64) -> Result<Self> {
        if !(mu0 > -1.0 && mu1 > -1.0 && mu0.is_finite() && mu1.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "beta kernel exponents must exceed -1, got ({mu0}, {mu1})"
            )));
        }
        Ok(FragmentationKernel::BetaShape(BetaKernel {
            mu0,
            mu1,
            ln_norm: ln_beta(mu0 + 1.0, mu1 + 1.0),
        }))
    }

    /// Piecewise-linear density through `(knot, value)` pairs.  Knots must
    /// start at 0 and end at 1; values must be nonnegative with positive
    /// total mass.
    pub fn tabulated(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidModel("tabulated kernel needs at least two knots".into()));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(Error::InvalidModel("tabulated kernel knots must span [0, 1]".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidModel("tabulated kernel knots must increase".into()));
            }
        }
        if points.iter().any(|p| !(p.1 >= 0.0) || !p.1.is_finite()) {
            return Err(Error::InvalidModel("tabulated density values must be nonnegative".into()));
        }
        let raw_mass: f64 = points
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum();
        if !(raw_mass > 0.0) {
            return Err(Error::InvalidModel("tabulated density has zero mass".into()));
        }
        let mut warnings = Vec::new();
        if (raw_mass - 1.0).abs() > 1e-3 {
            warnings.push(format!("tabulated density renormalized from mass {raw_mass:.6}"));
        }
        let knots: Vec<f64> = points.iter().map(|p| p.0).collect();
        let values: Vec<f64> = points.iter().map(|p| p.1 / raw_mass).collect();
        let mut cdf = Vec::with_capacity(knots.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..knots.len() {
            acc += 0.5 * (values[i - 1] + values[i]) * (knots[i] - knots[i - 1]);
            cdf.push(acc);
        }
        let last = cdf.len() - 1;
        cdf[last] = 1.0;
        Ok(FragmentationKernel::Tabulated(TabulatedKernel {
            knots,
            values,
            cdf,
            raw_mass,
            warnings,
        }))
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, FragmentationKernel::PointMass { .. })
    }

    pub fn boundary_data(&self) -> Option<BoundaryData> {
        match self {
            FragmentationKernel::PointMass { .. } => None,
            FragmentationKernel::Uniform => Some(BoundaryData {
                q0: 1.0,
                mu0: 0.0,
                q1: 1.0,
                mu1: 0.0,
            }),
            FragmentationKernel::BetaShape(b) => {
                let q = (-b.ln_norm).exp();
                Some(BoundaryData {
                    q0: q,
                    mu0: b.mu0,
                    q1: q,
                    mu1: b.mu1,
                })
            }
            FragmentationKernel::Tabulated(t) => {
                let n = t.values.len();
                let (q0, mu0) = if t.values[0] > 0.0 {
                    (t.values[0], 0.0)
                } else if t.first_slope() > 0.0 {
                    (t.first_slope(), 1.0)
                } else {
                    (0.0, 0.0)
                };
                let (q1, mu1) = if t.values[n - 1] > 0.0 {
                    (t.values[n - 1], 0.0)
                } else if t.last_slope() > 0.0 {
                    (t.last_slope(), 1.0)
                } else {
                    (0.0, 0.0)
                };
                Some(BoundaryData { q0, mu0, q1, mu1 })
            }
        }
    }

    /// Moments `M(a)` diverge for `a <= threshold`; `-inf` when every
    /// negative moment is finite.
    pub fn divergence_threshold(&self) -> f64 {
        match self {
            FragmentationKernel::PointMass { .. } => f64::NEG_INFINITY,
            FragmentationKernel::Uniform => -1.0,
            FragmentationKernel::BetaShape(b) => -(b.mu0 + 1.0),
            FragmentationKernel::Tabulated(t) => {
                if t.values[0] > 0.0 {
                    -1.0
                } else if t.first_slope() > 0.0 {
                    -2.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Natural log of the density at `p`.
    fn ln_density(&self, p: &UnitPoint) -> f64 {
        match self {
            FragmentationKernel::PointMass { .. } => unreachable!("point mass has no density"),
            FragmentationKernel::Uniform => 0.0,
            FragmentationKernel::BetaShape(b) => {
                let mut v = -b.ln_norm;
                if b.mu0 != 0.0 {
                    v += b.mu0 * p.ln_y;
                }
                if b.mu1 != 0.0 {
                    v += b.mu1 * p.ln_1my;
                }
                v
            }
            FragmentationKernel::Tabulated(t) => t.density(p.y).ln(),
        }
    }

    /// Integral over `y ∈ [lo, hi]` against `Q(dy)`.
    ///
    /// The closure receives the point and the log-weight `ln(q(y) dy/du)`;
    /// it returns the weighted integrand, e.g. `g(p.y) * ln_w.exp()` or
    /// `(a * p.ln_y + ln_w).exp()` for positive integrands evaluated in log
    /// space.  For the point mass the closure is called once at `r` (when
    /// `lo <= r < hi`, or `r == hi == 1`) with `ln_w = 0`.
    pub fn integrate_with<F>(&self, lo: f64, hi: f64, f: F, tol: Tolerance) -> Result<f64>
    where
        F: Fn(&UnitPoint, f64) -> f64,
    {
        let lo = lo.clamp(0.0, 1.0);
        let hi = hi.clamp(0.0, 1.0);
        if hi <= lo {
            return Ok(0.0);
        }
        match self {
            FragmentationKernel::PointMass { r } => {
                if *r >= lo && *r < hi {
                    let p = UnitPoint {
                        y: *r,
                        ln_y: r.ln(),
                        ln_1my: (-r).ln_1p(),
                        ln_jac: 0.0,
                    };
                    Ok(f(&p, 0.0))
                } else {
                    Ok(0.0)
                }
            }
            FragmentationKernel::Tabulated(t) => {
                let mut total = 0.0;
                for w in t.knots.windows(2) {
                    let a = w[0].max(lo);
                    let b = w[1].min(hi);
                    if b > a {
                        total += quad::integrate_unit(
                            |p| f(p, self.ln_density(p) + p.ln_jac),
                            a,
                            b,
                            tol,
                        )?
                        .value;
                    }
                }
                Ok(total)
            }
            _ => Ok(quad::integrate_unit(|p| f(p, self.ln_density(p) + p.ln_jac), lo, hi, tol)?.value),
        }
    }

    /// `E[g(Y)]` for a bounded `g`.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        match self {
            FragmentationKernel::PointMass { r } => Ok(g(*r)),
            _ => self.integrate_with(
                0.0,
                1.0,
                |p, ln_w| {
                    let w = ln_w.exp();
                    if w == 0.0 {
                        0.0
                    } else {
                        g(p.y) * w
                    }
                },
                KERNEL_TOL,
            ),
        }
    }

    /// `∫_lo^hi y^a Q(dy)`, `+inf` when divergent at 0.
    pub fn partial_moment(&self, a: f64, lo: f64, hi: f64) -> Result<f64> {
        if lo <= 0.0 && a <= self.divergence_threshold() && hi > 0.0 {
            if let FragmentationKernel::Tabulated(t) = self {
                if t.density((hi * 0.5).min(t.knots[1] * 0.5)) > 0.0 || t.values[0] > 0.0 {
                    return Ok(f64::INFINITY);
                }
            } else {
                return Ok(f64::INFINITY);
            }
        }
        self.integrate_with(lo, hi, |p, ln_w| (a * p.ln_y + ln_w).exp(), KERNEL_TOL)
    }

    /// `M(a) = ∫ y^a Q(dy)`, with `+inf` when divergent.
    pub fn moment(&self, a: f64) -> f64 {
        if a == 0.0 {
            return 1.0;
        }
        match self {
            FragmentationKernel::PointMass { r } => r.powf(a),
            FragmentationKernel::Uniform => {
                if a > -1.0 {
                    1.0 / (a + 1.0)
                } else {
                    f64::INFINITY
                }
            }
            _ => {
                if a <= self.divergence_threshold() {
                    return f64::INFINITY;
                }
                self.partial_moment(a, 0.0, 1.0).unwrap_or(f64::NAN)
            }
        }
    }

    /// `E[ln Y]`.
    pub fn log_moment(&self) -> f64 {
        match self {
            FragmentationKernel::PointMass { r } => r.ln(),
            FragmentationKernel::Uniform => -1.0,
            FragmentationKernel::BetaShape(b) => digamma(b.mu0 + 1.0) - digamma(b.mu0 + b.mu1 + 2.0),
            FragmentationKernel::Tabulated(_) => self
                .integrate_with(
                    0.0,
                    1.0,
                    |p, ln_w| {
                        let w = ln_w.exp();
                        if w == 0.0 {
                            0.0
                        } else {
                            p.ln_y * w
                        }
                    },
                    KERNEL_TOL,
                )
                .unwrap_or(f64::NAN),
        }
    }

    /// Draws a relative size in the open interval `(0, 1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FragmentationKernel::PointMass { r } => *r,
            FragmentationKernel::Uniform => rng.sample(Open01),
            FragmentationKernel::BetaShape(b) => {
                let d = Beta::new(b.mu0 + 1.0, b.mu1 + 1.0).expect("validated beta parameters");
                loop {
                    let y: f64 = d.sample(rng);
                    if y > 0.0 && y < 1.0 {
                        return y;
                    }
                }
            }
            FragmentationKernel::Tabulated(t) => loop {
                let u: f64 = rng.random();
                let y = t.inverse_cdf(u);
                if y > 0.0 && y < 1.0 {
                    return y;
                }
            },
        }
    }

    /// Mass of the ratio interval `(lo, hi) ∩ (0, 1)`.
    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        let lo = lo.clamp(0.0, 1.0);
        let hi = hi.clamp(0.0, 1.0);
        if hi <= lo {
            return Ok(0.0);
        }
        match self {
            FragmentationKernel::PointMass { r } => Ok(if *r > lo && *r <= hi { 1.0 } else { 0.0 }),
            FragmentationKernel::Uniform => Ok(hi - lo),
            FragmentationKernel::BetaShape(b) => {
                let cdf = |y: f64| {
                    if y <= 0.0 {
                        0.0
                    } else if y >= 1.0 {
                        1.0
                    } else {
                        statrs::function::beta::beta_reg(b.mu0 + 1.0, b.mu1 + 1.0, y)
                    }
                };
                Ok((cdf(hi) - cdf(lo)).max(0.0))
            }
            FragmentationKernel::Tabulated(t) => {
                let cdf = |y: f64| {
                    let i = t.knots.partition_point(|&k| k <= y).clamp(1, t.knots.len() - 1) - 1;
                    let d = y - t.knots[i];
                    let q = t.values[i];
                    let slope = (t.values[i + 1] - q) / (t.knots[i + 1] - t.knots[i]);
                    t.cdf[i] + q * d + 0.5 * slope * d * d
                };
                Ok((cdf(hi) - cdf(lo)).max(0.0))
            }
        }
    }
}

/// Result of the moment assumption checks for candidate exponents.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentCheck {
    pub a: f64,
    pub b: f64,
    pub m_a: f64,
    pub m_minus_b: f64,
    pub contraction_holds: bool,
    pub negative_moment_finite: bool,
}

/// Checks `M(a) < 1` and `M(-b) < inf` for `a, b > 0`.
pub fn check_moments(kernel: &FragmentationKernel, a: f64, b: f64) -> MomentCheck {
    let m_a = kernel.moment(a);
    let m_minus_b = kernel.moment(-b);
    MomentCheck {
        a,
        b,
        m_a,
        m_minus_b,
        contraction_holds: a > 0.0 && m_a < 1.0,
        negative_moment_finite: b > 0.0 && m_minus_b.is_finite(),
    }
}

/// Kernel written as `p1 δ_1 + (1 - p1) Q'` with `Q'` free of an atom at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomKernel {
    pub atom_at_one: f64,
    pub rest: FragmentationKernel,
}

/// Removes phantom jumps: `beta' = (1 - p1) beta` and the kernel loses its
/// atom at 1.  The generator is unchanged.
pub fn strip_phantom_jumps(beta: &RateFn, kernel: &PhantomKernel) -> Result<(RateFn, PhantomKernel)> {
    let p1 = kernel.atom_at_one;
    if !(0.0..=1.0).contains(&p1) {
        return Err(Error::Domain(format!("atom at 1 must be a probability, got {p1}")));
    }
    if p1 == 1.0 {
        return Err(Error::DegenerateKernel(
            "all mass sits at 1: the process never fragments".into(),
        ));
    }
    let beta = if p1 == 0.0 { beta.clone() } else { beta.scaled(1.0 - p1) };
    Ok((
        beta,
        PhantomKernel {
            atom_at_one: 0.0,
            rest: kernel.rest.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tcp() -> RateModel {
        RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::power(1.0, 1.0).unwrap())
    }

    #[test]
    fn eval_tau_examples() {
        let m = RateModel::new(RateFn::constant(2.0).unwrap(), RateFn::constant(1.0).unwrap());
        assert_eq!(eval_tau(&m, 5.0).unwrap(), 2.0);
        let m = RateModel::new(RateFn::power(1.0, 1.0).unwrap(), RateFn::constant(1.0).unwrap());
        assert_eq!(eval_tau(&m, 3.5).unwrap(), 3.5);
        // hand evaluation: 4^{1/2} + 4^2 = 2 + 16
        let m = RateModel::new(
            RateFn::two_term(1.0, 0.5, 1.0, 2.0).unwrap(),
            RateFn::constant(1.0).unwrap(),
        );
        assert!((eval_tau(&m, 4.0).unwrap() - 18.0).abs() < 1e-12);
        assert!(matches!(eval_tau(&m, 0.0), Err(Error::Domain(_))));
        assert!(matches!(eval_tau(&m, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn two_term_asymptotics() {
        let f = RateFn::two_term(3.0, 2.0, 0.5, -1.0).unwrap();
        let a = f.asymptotics();
        assert_eq!((a.coef_zero, a.exp_zero), (0.5, -1.0));
        assert_eq!((a.coef_inf, a.exp_inf), (3.0, 2.0));
        let g = RateFn::two_term(0.0, 2.0, 0.5, 1.0).unwrap();
        assert_eq!(g.single_power(), Some((0.5, 1.0)));
    }

    #[test]
    fn invalid_rates_rejected() {
        assert!(RateFn::constant(0.0).is_err());
        assert!(RateFn::power(-1.0, 1.0).is_err());
        assert!(RateFn::two_term(0.0, 1.0, 0.0, 2.0).is_err());
        assert!(RateFn::two_term(-1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn table_interpolates_in_log_log() {
        let pts: Vec<(f64, f64)> = (-6..=6).map(|k| {
            let x = 10f64.powi(k);
            (x, 2.0 * x.powf(1.5))
        }).collect();
        let t = RateTable::new(&pts, None, 1e-6).unwrap();
        let f = RateFn::Table(t);
        assert!((f.eval(3.0) - 2.0 * 3f64.powf(1.5)).abs() < 1e-9);
        // extrapolation keeps the end slope
        assert!((f.eval(1e9) / (2.0 * 1e9f64.powf(1.5)) - 1.0).abs() < 1e-9);
        let a = f.asymptotics();
        assert!((a.exp_zero - 1.5).abs() < 1e-12 && (a.exp_inf - 1.5).abs() < 1e-12);
        assert!((a.coef_inf - 2.0).abs() < 1e-9);
        let m = RateModel::new(f, RateFn::constant(1.0).unwrap());
        assert!(m.validate().unwrap().warnings.is_empty());
    }

    #[test]
    fn declared_table_asymptotics_override() {
        let pts: Vec<(f64, f64)> = (-6..=6).map(|k| (10f64.powi(k), 10f64.powi(k))).collect();
        let declared = Asymptotics {
            coef_zero: 1.0,
            exp_zero: 1.2,
            coef_inf: 1.0,
            exp_inf: 1.0,
        };
        let t = RateTable::new(&pts, Some(declared), 0.05).unwrap();
        assert_eq!(t.notes().len(), 1);
        let f = RateFn::Table(t);
        assert_eq!(f.asymptotics().exp_zero, 1.2);
        // mismatch against the declared law exceeds the tolerance
        let m = RateModel::new(f, RateFn::constant(1.0).unwrap());
        assert!(matches!(m.validate(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn model_validation_reports_exponents() {
        let v = tcp().validate().unwrap();
        assert_eq!(v.beta.exp_inf, 1.0);
        assert_eq!(v.tau.exp_zero, 0.0);
    }

    #[test]
    fn moment_examples() {
        assert_eq!(FragmentationKernel::uniform().moment(1.0), 0.5);
        let pm = FragmentationKernel::point_mass(0.5).unwrap();
        assert_eq!(pm.moment(-1.0), 2.0);
        let b = FragmentationKernel::beta_shape(1.0, 1.0).unwrap();
        assert!((b.moment(1.0) - 0.5).abs() < 1e-12);
        assert_eq!(FragmentationKernel::uniform().moment(-1.0), f64::INFINITY);
        assert_eq!(b.moment(-2.0), f64::INFINITY);
    }

    fn beta_closed_form(mu0: f64, mu1: f64, a: f64) -> f64 {
        (ln_beta(mu0 + a + 1.0, mu1 + 1.0) - ln_beta(mu0 + 1.0, mu1 + 1.0)).exp()
    }

    #[test]
    fn beta_quadrature_matches_closed_form() {
        for &(mu0, mu1) in &[(1.0, 1.0), (-0.5, 0.3), (-0.95, -0.9), (2.5, -0.99), (0.0, 4.0)] {
            let k = FragmentationKernel::beta_shape(mu0, mu1).unwrap();
            for &a in &[-mu0 / 2.0, 1.0, 2.0] {
                let m = k.moment(a);
                let exact = beta_closed_form(mu0, mu1, a);
                assert!(((m - exact) / exact).abs() < 1e-8, "mu=({mu0},{mu1}) a={a}: {m} vs {exact}");
            }
        }
    }

    #[test]
    fn tabulated_kernel_moments_and_sampling() {
        // density 2y on (0, 1), given with mass 2 to trigger renormalization
        let k = FragmentationKernel::tabulated(&[(0.0, 0.0), (0.5, 2.0), (1.0, 4.0)]).unwrap();
        if let FragmentationKernel::Tabulated(t) = &k {
            assert_eq!(t.warnings().len(), 1);
            assert!((t.raw_mass() - 2.0).abs() < 1e-12);
        }
        assert!((k.moment(1.0) - 2.0 / 3.0).abs() < 1e-10);
        assert!((k.moment(-1.0) - 2.0).abs() < 1e-9);
        assert_eq!(k.moment(-2.0), f64::INFINITY);
        assert_eq!(k.divergence_threshold(), -2.0);
        let bd = k.boundary_data().unwrap();
        assert_eq!((bd.q0, bd.mu0), (2.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n).map(|_| k.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01);
        assert!((k.mass(0.0, 0.5).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pm = FragmentationKernel::point_mass(0.5).unwrap();
        assert!((0..100).all(|_| pm.sample(&mut rng) == 0.5));
        let n = 100_000;
        let u = FragmentationKernel::uniform();
        let mean = (0..n).map(|_| u.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
        let b = FragmentationKernel::beta_shape(1.0, 1.0).unwrap();
        let mean = (0..n).map(|_| b.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - b.moment(1.0)).abs() < 0.01);
    }

    #[test]
    fn moment_assumption_for_uniform() {
        let u = FragmentationKernel::uniform();
        let c = check_moments(&u, 0.1, 0.9);
        assert!(c.contraction_holds && c.negative_moment_finite);
        let c = check_moments(&u, 0.1, 1.0);
        assert!(!c.negative_moment_finite);
    }

    #[test]
    fn point_mass_rejects_boundary() {
        assert!(FragmentationKernel::point_mass(1.0).is_err());
        assert!(FragmentationKernel::point_mass(0.0).is_err());
        assert!(FragmentationKernel::beta_shape(-1.0, 0.0).is_err());
    }

    #[test]
    fn strip_phantom_examples() {
        let beta = RateFn::constant(2.0).unwrap();
        let k = PhantomKernel {
            atom_at_one: 0.0,
            rest: FragmentationKernel::uniform(),
        };
        let (b2, k2) = strip_phantom_jumps(&beta, &k).unwrap();
        assert_eq!(b2, beta);
        assert_eq!(k2, k);

        let k = PhantomKernel {
            atom_at_one: 0.5,
            rest: FragmentationKernel::uniform(),
        };
        let (b2, k2) = strip_phantom_jumps(&beta, &k).unwrap();
        assert_eq!(b2.eval(3.0), 1.0);
        assert_eq!(k2.rest, FragmentationKernel::Uniform);
        assert_eq!(k2.atom_at_one, 0.0);

        let lin = RateFn::power(1.0, 1.0).unwrap();
        let k = PhantomKernel {
            atom_at_one: 0.25,
            rest: FragmentationKernel::uniform(),
        };
        let (b2, _) = strip_phantom_jumps(&lin, &k).unwrap();
        assert!((b2.eval(2.0) - 1.5).abs() < 1e-15);

        let k = PhantomKernel {
            atom_at_one: 1.0,
            rest: FragmentationKernel::uniform(),
        };
        assert!(matches!(strip_phantom_jumps(&lin, &k), Err(Error::DegenerateKernel(_))));
    }

    #[test]
    fn sup_on_bounds_power_terms() {
        let f = RateFn::two_term(1.0, -1.0, 1.0, 2.0).unwrap();
        let s = f.sup_on(0.5, 3.0);
        let grid_max = (0..=1000)
            .map(|i| f.eval(0.5 + 2.5 * i as f64 / 1000.0))
            .fold(0.0, f64::max);
        assert!(s >= grid_max);
    }
}
