//! Generator evaluation, Lyapunov functions and the recurrence
//! classification of a growth-fragmentation model.
//!
//! The generator is `Lf(x) = tau(x) f'(x) + beta(x) ∫ [f(xy) - f(x)] Q(dy)`.
//! [`LyapunovSpec`] is the power function `x^-b` near 0 and `x^a` near
//! infinity; [`ExpSpec`] is the exponential function `x^-eps exp(eta x^theta)`
//! used for the right tail.

use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::rates::{FragmentationKernel, RateModel, KERNEL_TOL};

/// Margin for strict inequalities between asymptotic quantities.
pub const STRICT_MARGIN: f64 = 1e-9;
/// Relative tolerance under which two exponents are considered equal.
pub const EQUALITY_RTOL: f64 = 1e-6;

/// Test functions with analytic derivatives and kernel integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { c: f64 },
    /// `x^p`
    Power { p: f64 },
    /// `ln x`
    Log,
    /// `exp(-((x - center) / width)^2)`
    Bump { center: f64, width: f64 },
    /// `x^-eps exp(eta x^theta)`
    ExpTilt { eps: f64, eta: f64, theta: f64 },
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::Constant { c } => format!("{c}"),
            TestFunction::Power { p } => format!("x^{p}"),
            TestFunction::Log => "ln x".into(),
            TestFunction::Bump { center, width } => format!("bump({center}, {width})"),
            TestFunction::ExpTilt { eps, eta, theta } => format!("x^-{eps} exp({eta} x^{theta})"),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Constant { c } => c,
            TestFunction::Power { p } => x.powf(p),
            TestFunction::Log => x.ln(),
            TestFunction::Bump { center, width } => (-((x - center) / width).powi(2)).exp(),
            TestFunction::ExpTilt { eps, eta, theta } => (-eps * x.ln() + eta * x.powf(theta)).exp(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Power { p } => {
                if p == 0.0 {
                    0.0
                } else {
                    p * x.powf(p - 1.0)
                }
            }
            TestFunction::Log => 1.0 / x,
            TestFunction::Bump { center, width } => {
                let u = (x - center) / width;
                -2.0 * u / width * (-u * u).exp()
            }
            TestFunction::ExpTilt { eps, eta, theta } => {
                self.value(x) * (-eps / x + eta * theta * x.powf(theta - 1.0))
            }
        }
    }

    /// `∫ f(xy) Q(dy)`.
    pub fn kernel_integral(&self, kernel: &FragmentationKernel, x: f64) -> Result<f64> {
        match *self {
            TestFunction::Constant { c } => Ok(c),
            TestFunction::Power { p } => {
                let m = kernel.moment(p);
                if !m.is_finite() {
                    return Err(Error::InfiniteResult(format!(
                        "M({p}) diverges, so ∫ (xy)^{p} Q(dy) is infinite"
                    )));
                }
                Ok(x.powf(p) * m)
            }
            TestFunction::Log => Ok(x.ln() + kernel.log_moment()),
            TestFunction::Bump { center, width } => match kernel {
                FragmentationKernel::PointMass { r } => Ok(self.value(r * x)),
                FragmentationKernel::Uniform => {
                    // (1/x) ∫_0^x exp(-((u - c)/w)^2) du
                    let s = std::f64::consts::PI.sqrt() * width / (2.0 * x);
                    Ok(s * (erf((x - center) / width) - erf(-center / width)))
                }
                _ => kernel.expect(|y| self.value(x * y)),
            },
            TestFunction::ExpTilt { eps, eta, theta } => {
                Ok(self.value(x) * tilt_ratio(kernel, eps, eta, theta, x)?)
            }
        }
    }
}

/// `I(x) = ∫ y^-eps exp(eta x^theta (y^theta - 1)) Q(dy)`, the ratio
/// `E[V~(xY)] / V~(x)`.
pub fn tilt_ratio(kernel: &FragmentationKernel, eps: f64, eta: f64, theta: f64, x: f64) -> Result<f64> {
    if -eps <= kernel.divergence_threshold() {
        return Err(Error::InfiniteResult(format!(
            "M(-{eps}) diverges: y^-eps is not integrable against the kernel"
        )));
    }
    let k = eta * x.powf(theta);
    match kernel {
        FragmentationKernel::PointMass { r } => Ok((-eps * r.ln() + k * (theta * r.ln()).exp_m1()).exp()),
        _ => kernel.integrate_with(
            0.0,
            1.0,
            |p, ln_w| (-eps * p.ln_y + k * (theta * p.ln_y).exp_m1() + ln_w).exp(),
            KERNEL_TOL,
        ),
    }
}

/// `Lf(x)` for a declared test function.
pub fn apply_generator(model: &RateModel, kernel: &FragmentationKernel, f: &TestFunction, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("generator evaluated at non-positive size {x}")));
    }
    let jump = f.kernel_integral(kernel, x)? - f.value(x);
    Ok(model.tau.eval(x) * f.derivative(x) + model.beta.eval(x) * jump)
}

/// `Lf(x)` for an arbitrary bounded smooth `f`: five-point central
/// difference with step `1e-5 x` and kernel quadrature.
pub fn apply_generator_fn<F: Fn(f64) -> f64>(
    model: &RateModel,
    kernel: &FragmentationKernel,
    f: F,
    x: f64,
) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("generator evaluated at non-positive size {x}")));
    }
    let h = 1e-5 * x;
    let d = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
    let jump = kernel.expect(|y| f(x * y))? - f(x);
    Ok(model.tau.eval(x) * d + model.beta.eval(x) * jump)
}

/// Quintic smoothstep with zero first and second derivatives at 0 and 1.
fn smoothstep(u: f64) -> (f64, f64) {
    let w = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
    let dw = 30.0 * u * u * (1.0 - u) * (1.0 - u);
    (w, dw)
}

/// `V(x) = x^-b` on `(0, 1]`, `x^a` on `[2, inf)`, joined on `[1, 2]` by a
/// log-space blend `ln V = s (-b + (a + b) w(s / ln 2))`, `s = ln x`, which
/// is C² at both junctions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovSpec {
    pub a: f64,
    pub b: f64,
}

/// Auto-selection limits.
const A_GRID_MAX: f64 = 8.0;
const B_CAP_WITHOUT_DENSITY: f64 = 8.0;
const M_A_CEILING: f64 = 1.0 - 1e-3;
const M_B_CEILING: f64 = 1e3;

impl LyapunovSpec {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidModel(format!("Lyapunov exponents must be positive, got a = {a}, b = {b}")));
        }
        Ok(LyapunovSpec { a, b })
    }

    /// Largest `a ∈ {0.5, 1, ..., 8}` with `M(a) < 1 - 1e-3` and largest
    /// `b ∈ {0.25, 0.5, ...}` below `mu0 + 1 - 1e-3` with `M(-b) < 1e3`.
    pub fn auto(kernel: &FragmentationKernel) -> LyapunovSpec {
        LyapunovSpec {
            a: auto_a(kernel, |_| true).unwrap_or(0.5),
            b: auto_b(kernel, |_| true).unwrap_or(0.25),
        }
    }

    /// As [`auto`](Self::auto), but at an end where the balance is critical
    /// the exponent is also required to satisfy the critical ratio
    /// condition, and smaller grid values down to 1/16 are allowed.
    pub fn auto_for(model: &RateModel, kernel: &FragmentationKernel) -> LyapunovSpec {
        let base = Self::auto(kernel);
        let (ends, _) = end_exponents(model);
        let mut spec = base;
        if ends.critical_inf {
            let t = model.tau_asym();
            let bt = model.beta_asym();
            let target = bt.coef_inf / t.coef_inf;
            if let Some(a) = auto_a(kernel, |a| {
                Inequality::less(CRITICAL_INF, a / (1.0 - kernel.moment(a)), target).holds
            }) {
                spec.a = a;
            }
        }
        if ends.critical_zero {
            let t = model.tau_asym();
            let bt = model.beta_asym();
            let target = bt.coef_zero / t.coef_zero;
            if let Some(b) = auto_b(kernel, |b| {
                Inequality::greater(CRITICAL_ZERO, b / (kernel.moment(-b) - 1.0), target).holds
            }) {
                spec.b = b;
            }
        }
        spec
    }

    pub fn value(&self, x: f64) -> f64 {
        self.ln_value(x).exp()
    }

    pub fn ln_value(&self, x: f64) -> f64 {
        let s = x.ln();
        if x <= 1.0 {
            -self.b * s
        } else if x >= 2.0 {
            self.a * s
        } else {
            let (w, _) = smoothstep(s / std::f64::consts::LN_2);
            s * (-self.b + (self.a + self.b) * w)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let s = x.ln();
        let dlog = if x <= 1.0 {
            -self.b
        } else if x >= 2.0 {
            self.a
        } else {
            let u = s / std::f64::consts::LN_2;
            let (w, dw) = smoothstep(u);
            -self.b + (self.a + self.b) * w + s * (self.a + self.b) * dw / std::f64::consts::LN_2
        };
        self.value(x) * dlog / x
    }

    /// Whether `V` is convex on a fine grid of the splice interval.
    pub fn splice_is_convex(&self) -> bool {
        let n = 400;
        let xs: Vec<f64> = (0..=n).map(|i| 0.9 + 1.2 * i as f64 / n as f64).collect();
        xs.windows(2).all(|w| self.derivative(w[1]) >= self.derivative(w[0]) - 1e-12)
    }

    /// `∫ V(xy) Q(dy)`, split where `xy` crosses 1 and 2.
    pub fn kernel_integral(&self, kernel: &FragmentationKernel, x: f64) -> Result<f64> {
        let (a, b) = (self.a, self.b);
        let lx = x.ln();
        let (y1, y2) = (1.0 / x, 2.0 / x);
        if -b <= kernel.divergence_threshold() {
            return Err(Error::InfiniteResult(format!("M(-{b}) diverges")));
        }
        let low = kernel.integrate_with(0.0, y1, |p, ln_w| (-b * (lx + p.ln_y) + ln_w).exp(), KERNEL_TOL)?;
        let mid = kernel.integrate_with(
            y1,
            y2,
            |p, ln_w| (self.ln_value(x * p.y) + ln_w).exp(),
            KERNEL_TOL,
        )?;
        let high = kernel.integrate_with(y2, 1.0, |p, ln_w| (a * (lx + p.ln_y) + ln_w).exp(), KERNEL_TOL)?;
        Ok(low + mid + high)
    }
}

fn auto_a(kernel: &FragmentationKernel, extra: impl Fn(f64) -> bool) -> Option<f64> {
    let mut grid: Vec<f64> = (1..=(2.0 * A_GRID_MAX) as usize).map(|k| 0.5 * k as f64).collect();
    grid.extend([0.25, 0.125, 0.0625]);
    grid.sort_by(|x, y| y.partial_cmp(x).unwrap());
    grid.into_iter().find(|&a| kernel.moment(a) < M_A_CEILING && extra(a))
}

fn auto_b(kernel: &FragmentationKernel, extra: impl Fn(f64) -> bool) -> Option<f64> {
    let thr = kernel.divergence_threshold();
    let limit = if thr.is_finite() { -thr - 1e-3 } else { B_CAP_WITHOUT_DENSITY };
    let mut grid: Vec<f64> = (1..).map(|k| 0.25 * k as f64).take_while(|&b| b <= limit).collect();
    grid.extend([0.125, 0.0625]);
    if limit < 0.0625 {
        grid.push(limit / 2.0);
    }
    grid.sort_by(|x, y| y.partial_cmp(x).unwrap());
    grid.into_iter()
        .filter(|&b| b <= limit)
        .find(|&b| kernel.moment(-b) < M_B_CEILING && extra(b))
}

/// Exponential Lyapunov function `V~(x) = x^-eps exp(eta x^theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpSpec {
    pub eps: f64,
    pub eta: f64,
    pub theta: f64,
    pub c: f64,
}

impl ExpSpec {
    /// `theta = gamma_inf + 1 - nu_inf`, `eta = C beta_inf / (theta tau_inf)`.
    pub fn from_model(model: &RateModel, c: f64, eps: f64) -> Result<ExpSpec> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Domain(format!("C must lie in (0, 1), got {c}")));
        }
        let t = model.tau_asym();
        let b = model.beta_asym();
        let theta = b.exp_inf + 1.0 - t.exp_inf;
        if !(theta > 0.0) {
            return Err(Error::InvalidModel(format!(
                "theta = gamma_inf + 1 - nu_inf = {theta} is not positive"
            )));
        }
        Ok(ExpSpec {
            eps,
            eta: c * b.coef_inf / (theta * t.coef_inf),
            theta,
            c,
        })
    }

    pub fn test_function(&self) -> TestFunction {
        TestFunction::ExpTilt {
            eps: self.eps,
            eta: self.eta,
            theta: self.theta,
        }
    }

    pub fn ln_value(&self, x: f64) -> f64 {
        -self.eps * x.ln() + self.eta * x.powf(self.theta)
    }
}

/// `LV(x)` with the closed form for `x <= 1` and the upper bound for `x >= 2`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriftPoint {
    pub x: f64,
    pub v: f64,
    pub exact: f64,
    pub closed_form: Option<f64>,
    pub upper_bound: Option<f64>,
    /// `beta (V + KV)`, the size of the terms that cancel in `exact`.
    pub jump_scale: f64,
}

/// Relative slack for comparing the quadrature drift with closed forms.
pub const DRIFT_RTOL: f64 = 1e-9;

impl DriftPoint {
    /// `exact <= upper_bound` up to quadrature error; true when no bound applies.
    pub fn respects_bound(&self) -> bool {
        self.upper_bound
            .map_or(true, |ub| self.exact <= ub + DRIFT_RTOL * self.jump_scale)
    }
}

pub fn drift_v(model: &RateModel, kernel: &FragmentationKernel, spec: &LyapunovSpec, x: f64) -> Result<DriftPoint> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("drift evaluated at non-positive size {x}")));
    }
    let m_b = kernel.moment(-spec.b);
    if !m_b.is_finite() {
        return Err(Error::InfiniteResult(format!(
            "M(-{}) diverges; choose b below the kernel's integrability limit",
            spec.b
        )));
    }
    let tau = model.tau.eval(x);
    let beta = model.beta.eval(x);
    let v = spec.value(x);
    let kv = spec.kernel_integral(kernel, x)?;
    let exact = tau * spec.derivative(x) + beta * (kv - v);
    let closed_form = (x <= 1.0).then(|| (-spec.b * tau / x + beta * (m_b - 1.0)) * v);
    let upper_bound = (x >= 2.0).then(|| {
        let m_a = kernel.moment(spec.a);
        (spec.a * tau / x - beta) * v
            + beta * (x.powf(-spec.b) * m_b + 2f64.powf(spec.a) + x.powf(spec.a) * m_a)
    });
    Ok(DriftPoint {
        x,
        v,
        exact,
        closed_form,
        upper_bound,
        jump_scale: beta * (v + kv),
    })
}

/// `n` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if n == 1 || i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Drift of `V` over a grid, with the compact set outside which it is
/// negative and the Foster-Lyapunov constants `LV <= -alpha V + alpha' 1_K`.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub spec: LyapunovSpec,
    pub points: Vec<DriftPoint>,
    /// Log-log slope of `|LV|` over the first and last decade of the grid.
    pub slope_zero: Option<f64>,
    pub slope_inf: Option<f64>,
    /// `[1/A, A]`.
    pub compact: Option<(f64, f64)>,
    pub radius: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_prime: Option<f64>,
    pub splice_convex: bool,
}

fn loglog_slope(points: &[DriftPoint]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.exact != 0.0 && p.exact.is_finite())
        .map(|p| (p.x.ln(), p.exact.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

pub fn drift_report(
    model: &RateModel,
    kernel: &FragmentationKernel,
    spec: &LyapunovSpec,
    grid: &[f64],
) -> Result<DriftReport> {
    let points = grid
        .iter()
        .map(|&x| drift_v(model, kernel, spec, x))
        .collect::<Result<Vec<_>>>()?;
    let decade = |lo: f64, hi: f64| -> Vec<DriftPoint> {
        points.iter().copied().filter(|p| p.x >= lo && p.x <= hi).collect()
    };
    let (x_first, x_last) = (grid[0], grid[grid.len() - 1]);
    let slope_zero = loglog_slope(&decade(x_first, 10.0 * x_first));
    let slope_inf = loglog_slope(&decade(x_last / 10.0, x_last));

    // K is the hull of [1, 2] and every grid point with nonnegative drift.
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 2.0;
    for p in &points {
        if p.exact >= 0.0 {
            lo = lo.min(p.x);
            hi = hi.max(p.x);
        }
    }
    let interior = lo > x_first && hi < x_last;
    let (compact, radius, alpha, alpha_prime) = if interior {
        let radius = (1.0 / lo).max(hi);
        let (k_lo, k_hi) = (1.0 / radius, radius);
        let outside = points.iter().filter(|p| p.x < k_lo || p.x > k_hi);
        let alpha = outside.map(|p| -p.exact / p.v).fold(f64::INFINITY, f64::min);
        let alpha = if alpha.is_finite() { alpha } else { 1.0 };
        let alpha_prime = points
            .iter()
            .filter(|p| p.x >= k_lo && p.x <= k_hi)
            .map(|p| p.exact + alpha * p.v)
            .fold(0.0, f64::max);
        (Some((k_lo, k_hi)), Some(radius), Some(alpha), Some(alpha_prime))
    } else {
        (None, None, None, None)
    };
    Ok(DriftReport {
        spec: *spec,
        points,
        slope_zero,
        slope_inf,
        compact,
        radius,
        alpha,
        alpha_prime,
        splice_convex: spec.splice_is_convex(),
    })
}

/// One inequality of the classification with its two sides.
#[derive(Debug, Clone, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub relation: &'static str,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl Inequality {
    fn greater(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            relation: ">",
            rhs,
            margin: lhs - rhs,
            holds: lhs - rhs > STRICT_MARGIN,
        }
    }

    fn less(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            relation: "<",
            rhs,
            margin: rhs - lhs,
            holds: rhs - lhs > STRICT_MARGIN,
        }
    }

    fn at_least(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            relation: ">=",
            rhs,
            margin: lhs - rhs,
            holds: lhs - rhs >= -STRICT_MARGIN,
        }
    }

    fn at_most(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            relation: "<=",
            rhs,
            margin: rhs - lhs,
            holds: rhs - lhs >= -STRICT_MARGIN,
        }
    }
}

/// Three-tier recurrence classification.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceClassification {
    pub harris_recurrent: bool,
    pub positive_recurrent: bool,
    pub exp_ergodic: bool,
    pub critical_at_0: bool,
    pub critical_at_inf: bool,
    pub spec: LyapunovSpec,
    pub checks: Vec<Inequality>,
    /// Names of the failing conditions, most fundamental first.
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl BalanceClassification {
    pub fn check(&self, name: &str) -> Option<&Inequality> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Ends {
    critical_zero: bool,
    critical_inf: bool,
}

fn is_equal(x: f64, y: f64) -> bool {
    (x - y).abs() <= EQUALITY_RTOL * x.abs().max(y.abs()).max(1.0)
}

fn end_exponents(model: &RateModel) -> (Ends, (f64, f64, f64, f64)) {
    let t = model.tau_asym();
    let b = model.beta_asym();
    let ends = Ends {
        critical_zero: is_equal(b.exp_zero, t.exp_zero - 1.0),
        critical_inf: is_equal(b.exp_inf, t.exp_inf - 1.0),
    };
    (ends, (t.exp_zero, t.exp_inf, b.exp_zero, b.exp_inf))
}

pub const BALANCE_ZERO: &str = "balance at 0";
pub const BALANCE_INF: &str = "balance at ∞";
pub const CRITICAL_ZERO: &str = "critical ratio at 0";
pub const CRITICAL_INF: &str = "critical ratio at ∞";
pub const MOMENT_A: &str = "M(a) < 1";
pub const MOMENT_B: &str = "M(-b) finite";
pub const POSITIVE_ZERO: &str = "b >= nu0 - 1";
pub const POSITIVE_INF: &str = "a >= -gamma_inf";
pub const ERGODIC_ZERO: &str = "nu0 <= 1";
pub const ERGODIC_INF: &str = "gamma_inf >= 0";

/// Evaluates the balance, moment and tier conditions.
///
/// At an end where the exponents are equal, the drift of `V` there is
/// `x^(nu-1)` times `-b tau0 + beta0 (M(-b) - 1)` (at 0) or
/// `a tau_inf - beta_inf (1 - M(a))` (at infinity), so the critical ratio
/// checks are `b / (M(-b) - 1) > beta0 / tau0` and
/// `a / (1 - M(a)) < beta_inf / tau_inf`.
pub fn classify_balance(
    model: &RateModel,
    kernel: &FragmentationKernel,
    spec: Option<LyapunovSpec>,
) -> BalanceClassification {
    let spec = spec.unwrap_or_else(|| LyapunovSpec::auto_for(model, kernel));
    let (ends, (nu0, nu_inf, g0, g_inf)) = end_exponents(model);
    let t = model.tau_asym();
    let bt = model.beta_asym();
    let m_a = kernel.moment(spec.a);
    let m_b = kernel.moment(-spec.b);
    let mut checks = Vec::new();
    let mut notes = Vec::new();

    let moment_a = Inequality::less(MOMENT_A, m_a, 1.0);
    let moment_b = Inequality::less(MOMENT_B, m_b, f64::INFINITY);
    let moments_ok = moment_a.holds && moment_b.holds;
    checks.push(moment_a);
    checks.push(moment_b);

    let strict_zero = Inequality::greater(BALANCE_ZERO, g0, nu0 - 1.0);
    let zero_ok = if ends.critical_zero {
        let ratio = spec.b / (m_b - 1.0);
        let crit = Inequality::greater(CRITICAL_ZERO, ratio, bt.coef_zero / t.coef_zero);
        let ok = crit.holds;
        checks.push(strict_zero);
        checks.push(crit);
        ok
    } else {
        let ok = strict_zero.holds;
        checks.push(strict_zero);
        ok
    };

    let strict_inf = Inequality::greater(BALANCE_INF, g_inf, nu_inf - 1.0);
    let inf_ok = if ends.critical_inf {
        let ratio = spec.a / (1.0 - m_a);
        let crit = Inequality::less(CRITICAL_INF, ratio, bt.coef_inf / t.coef_inf);
        let ok = crit.holds && m_a < 1.0;
        checks.push(strict_inf);
        checks.push(crit);
        ok
    } else {
        let ok = strict_inf.holds;
        checks.push(strict_inf);
        ok
    };

    let pos_zero = Inequality::at_least(POSITIVE_ZERO, spec.b, nu0 - 1.0);
    let pos_inf = Inequality::at_least(POSITIVE_INF, spec.a, -g_inf);
    let erg_zero = Inequality::at_most(ERGODIC_ZERO, nu0, 1.0);
    let erg_inf = Inequality::at_least(ERGODIC_INF, g_inf, 0.0);

    let harris = moments_ok && zero_ok && inf_ok;
    let positive = harris && pos_zero.holds && pos_inf.holds;
    let ergodic = positive && erg_zero.holds && erg_inf.holds;

    if positive && is_equal(spec.a + g_inf, 0.0) {
        notes.push(
            "a + gamma_inf = 0: the drift bound at infinity is a constant, so positive recurrence holds \
             but the moment pi(x^(a + gamma_inf)) < inf carries no information"
                .into(),
        );
    }
    if ends.critical_zero || ends.critical_inf {
        notes.push("critical balance: tails of the stationary law are not covered by the tail predictions".into());
    }

    let mut failures = Vec::new();
    let order = [
        MOMENT_A,
        MOMENT_B,
        BALANCE_ZERO,
        CRITICAL_ZERO,
        BALANCE_INF,
        CRITICAL_INF,
    ];
    for name in order {
        if let Some(c) = checks.iter().find(|c| c.name == name) {
            let decisive = match name {
                BALANCE_ZERO => !ends.critical_zero,
                BALANCE_INF => !ends.critical_inf,
                _ => true,
            };
            if decisive && !c.holds {
                failures.push(name.to_string());
            }
        }
    }
    for c in [&pos_zero, &pos_inf, &erg_zero, &erg_inf] {
        if !c.holds {
            failures.push(c.name.clone());
        }
    }
    checks.extend([pos_zero, pos_inf, erg_zero, erg_inf]);

    BalanceClassification {
        harris_recurrent: harris,
        positive_recurrent: positive,
        exp_ergodic: ergodic,
        critical_at_0: ends.critical_zero,
        critical_at_inf: ends.critical_inf,
        spec,
        checks,
        failures,
        notes,
    }
}

/// Result of the uniform bound check on `I(x)` over `x >= x0`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundVReport {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
    pub sup: f64,
    pub argmax: f64,
    pub target: f64,
    pub pass: bool,
}

/// Checks `sup_{x >= x0} I(x) < 1 - C` on a log grid of `[x0, 1000 x0]`
/// plus the `x -> inf` limit, which is 0 whenever the integral is finite.
pub fn check_bound_v(
    kernel: &FragmentationKernel,
    theta: f64,
    eta: f64,
    eps: f64,
    x0: f64,
    c: f64,
) -> Result<BoundVReport> {
    if !(theta > 0.0 && eta >= 0.0 && eps >= 0.0 && x0 > 0.0) {
        return Err(Error::Domain(format!(
            "bound check needs theta > 0, eta >= 0, eps >= 0, x0 > 0 (got {theta}, {eta}, {eps}, {x0})"
        )));
    }
    let grid = log_grid(x0, 1e3 * x0, 61);
    let values = grid
        .iter()
        .map(|&x| tilt_ratio(kernel, eps, eta, theta, x))
        .collect::<Result<Vec<_>>>()?;
    let limit = if eta > 0.0 { 0.0 } else { kernel.moment(-eps) };
    let (mut sup, mut argmax) = (limit, f64::INFINITY);
    for (&x, &v) in grid.iter().zip(&values) {
        if v > sup {
            sup = v;
            argmax = x;
        }
    }
    Ok(BoundVReport {
        grid,
        values,
        limit,
        sup,
        argmax,
        target: 1.0 - c,
        pass: sup < 1.0 - c,
    })
}

/// `LV~(x)` through the ratio `LV~ / V~`, which stays finite where `V~`
/// overflows.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TiltDrift {
    pub x: f64,
    /// `LV~(x) / V~(x)`
    pub ratio: f64,
    pub ln_v: f64,
    /// `-(eps tau_inf / 4) x^(nu_inf - 1)`
    pub bound_ratio: f64,
    pub below_bound: bool,
}

impl TiltDrift {
    pub fn value(&self) -> f64 {
        self.ratio * self.ln_v.exp()
    }
}

pub fn drift_vtilde(model: &RateModel, kernel: &FragmentationKernel, spec: &ExpSpec, x: f64) -> Result<TiltDrift> {
    if !(x >= 1.0) {
        return Err(Error::Refused(format!("V~ drift is only asserted for x >= 1, got {x}")));
    }
    let i = tilt_ratio(kernel, spec.eps, spec.eta, spec.theta, x)?;
    let tau = model.tau.eval(x);
    let beta = model.beta.eval(x);
    let ratio = tau * (-spec.eps / x + spec.eta * spec.theta * x.powf(spec.theta - 1.0)) + beta * (i - 1.0);
    let t = model.tau_asym();
    let bound_ratio = -(spec.eps * t.coef_inf / 4.0) * x.powf(t.exp_inf - 1.0);
    Ok(TiltDrift {
        x,
        ratio,
        ln_v: spec.ln_value(x),
        bound_ratio,
        below_bound: ratio <= bound_ratio,
    })
}

/// Smallest grid point beyond which `LV~ <= -(eps tau_inf / 4) x^(nu_inf-1) V~`
/// holds at every remaining grid point.
pub fn vtilde_threshold(
    model: &RateModel,
    kernel: &FragmentationKernel,
    spec: &ExpSpec,
    grid: &[f64],
) -> Result<Option<f64>> {
    let drifts = grid
        .iter()
        .filter(|&&x| x >= 1.0)
        .map(|&x| drift_vtilde(model, kernel, spec, x))
        .collect::<Result<Vec<_>>>()?;
    let mut threshold = None;
    for d in drifts.iter().rev() {
        if d.below_bound {
            threshold = Some(d.x);
        } else {
            break;
        }
    }
    Ok(threshold)
}
