//! Tail exponents of the empirical stationary law, their predicted values
//! and stationarity residuals `∫ Lf dπ`.

use rand::RngExt;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyapunov::{apply_generator, TestFunction};
use crate::pdmp::{stream_rng, EmpiricalDistribution};
use crate::rates::{FragmentationKernel, RateModel};
use crate::stats::{self, quantile_sorted, weighted_lstsq};

/// Minimum number of samples inside a fit window.
pub const MIN_WINDOW: usize = 200;
pub const MIN_R2: f64 = 0.95;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Log bins in the left-tail density estimate.
const LEFT_POINTS: usize = 20;
/// Survival points in the right-tail regression.
const RIGHT_POINTS: usize = 30;
/// The right window stops where fewer samples than this remain above.
const RIGHT_MIN_COUNT: f64 = 50.0;

#[derive(Debug, Clone, Serialize)]
pub struct TailPrediction {
    /// `mu0 + 1 - nu0`; absent without a kernel density.
    pub alpha0: Option<f64>,
    /// The left prediction needs `mu0 + 2 - nu0 > 0`.
    pub left_valid: bool,
    pub theta: f64,
    pub eta: f64,
    pub c: f64,
    pub notes: Vec<String>,
}

pub fn predict_tails(model: &RateModel, kernel: &FragmentationKernel, c: f64) -> Result<TailPrediction> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(format!("C must lie in (0, 1), got {c}")));
    }
    let t = model.tau_asym();
    let b = model.beta_asym();
    let theta = b.exp_inf + 1.0 - t.exp_inf;
    let eta = c * b.coef_inf / (theta * t.coef_inf);
    let mut notes = Vec::new();
    let (alpha0, left_valid) = match kernel.boundary_data() {
        Some(bd) => {
            let valid = bd.mu0 + 2.0 - t.exp_zero > 0.0;
            if !valid {
                notes.push(format!(
                    "mu0 + 2 - nu0 = {} <= 0: no left-tail prediction",
                    bd.mu0 + 2.0 - t.exp_zero
                ));
            }
            (Some(bd.mu0 + 1.0 - t.exp_zero), valid)
        }
        None => {
            notes.push("kernel has no density: no left-tail prediction".into());
            (None, false)
        }
    };
    if !(theta > 0.0) {
        notes.push(format!("theta = {theta} <= 0: the balance at infinity fails"));
    }
    Ok(TailPrediction {
        alpha0,
        left_valid,
        theta,
        eta,
        c,
        notes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LeftFit {
    pub alpha0: f64,
    pub std_error: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub count: usize,
    /// Whether the linear curvature term was needed.
    pub curvature: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RightFit {
    pub theta: f64,
    pub theta_std_error: f64,
    pub eta: f64,
    pub eta_std_error: f64,
    /// Polynomial prefactor exponent; low confidence.
    pub alpha_inf: Option<f64>,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailFit {
    pub left: Option<LeftFit>,
    pub right: Option<RightFit>,
    pub left_error: Option<String>,
    pub right_error: Option<String>,
}

pub fn fit_tails(dist: &EmpiricalDistribution) -> TailFit {
    let (left, left_error) = match fit_left_tail(dist) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (right, right_error) = match fit_right_tail(dist) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    TailFit {
        left,
        right,
        left_error,
        right_error,
    }
}

/// Log-binned histogram density on `[lo, hi]`: `(geometric centre, density,
/// count)` for non-empty bins.  With a fixed bin ratio the centring bias of
/// a power law is the same factor in every bin, so slopes are unbiased.
fn log_bin_density(v: &[f64], lo: f64, hi: f64, bins: usize, n: f64) -> Vec<(f64, f64, f64)> {
    let h = (hi / lo).ln() / bins as f64;
    (0..bins)
        .filter_map(|b| {
            let a = lo * (h * b as f64).exp();
            let c = lo * (h * (b + 1) as f64).exp();
            let cnt = (v.partition_point(|&x| x < c) - v.partition_point(|&x| x < a)) as f64;
            (cnt > 0.0).then(|| ((a * c).sqrt(), cnt / (n * (c - a)), cnt))
        })
        .collect()
}

/// Log-density slope near 0 over the decade below the 10th percentile.
///
/// The pure power law `ln G = c + alpha0 ln x` is tried first; when its
/// residuals exceed the counting noise a curvature term `- lambda x` is
/// added.  A fit is accepted when its residuals are consistent with noise
/// and `R^2 >= 0.95`, or the slope is within 3 standard errors of 0 (a flat
/// density makes `R^2` meaningless).  Otherwise the window is widened
/// downward by half-decades.
pub fn fit_left_tail(dist: &EmpiricalDistribution) -> Result<LeftFit> {
    let v = dist.sorted();
    let n = v.len() as f64;
    let q10 = quantile_sorted(&v, 0.1);
    let below = v.partition_point(|&x| x <= q10);
    if below < MIN_WINDOW {
        return Err(Error::Window(format!(
            "{below} samples below the 10th percentile, need {MIN_WINDOW}"
        )));
    }
    let mut lo = q10 / 10.0;
    loop {
        let i0 = v.partition_point(|&x| x < lo);
        let count = below - i0;
        if count >= MIN_WINDOW {
            let pts = log_bin_density(&v, lo, q10, LEFT_POINTS, n);
            let y: Vec<f64> = pts.iter().map(|&(_, g, _)| g.ln()).collect();
            // Poisson counts: var(ln count) ≈ 1 / count.
            let w: Vec<f64> = pts.iter().map(|&(_, _, c)| c).collect();
            for curvature in [false, true] {
                let rows: Vec<Vec<f64>> = pts
                    .iter()
                    .map(|&(x, _, _)| if curvature { vec![1.0, x.ln(), x] } else { vec![1.0, x.ln()] })
                    .collect();
                let Some(fit) = weighted_lstsq(&rows, &y, &w) else { continue };
                let flat = fit.coef[1].abs() < 3.0 * fit.std_err[1];
                if residuals_are_noise(&rows, &y, &w, &fit.coef) && (fit.r_squared >= MIN_R2 || flat) {
                    return Ok(LeftFit {
                        alpha0: fit.coef[1],
                        std_error: fit.std_err[1],
                        window: (lo.max(v[i0]), q10),
                        r_squared: fit.r_squared,
                        count,
                        curvature,
                    });
                }
            }
        }
        if lo <= v[0] {
            break;
        }
        lo /= 10f64.sqrt();
    }
    Err(Error::Window(format!(
        "no window below the 10th percentile ({q10:.4e}) gives an adequate log-log fit"
    )))
}

/// Weighted residual sum of squares against its chi-square law, with the
/// count weights standing in for inverse Poisson variances.
fn residuals_are_noise(rows: &[Vec<f64>], y: &[f64], w: &[f64], coef: &[f64]) -> bool {
    let stat: f64 = rows
        .iter()
        .zip(y)
        .zip(w)
        .map(|((r, &yi), &wi)| {
            let fit: f64 = r.iter().zip(coef).map(|(a, b)| a * b).sum();
            wi * (yi - fit).powi(2)
        })
        .sum();
    let dof = rows.len().saturating_sub(coef.len());
    dof > 0 && stats::chi_square_sf(stat, dof) > 1e-3
}

/// Two-stage fit of the survival `S(x) ≈ exp(-eta x^theta)` beyond the 90th
/// percentile: `ln(-ln S)` against `ln x` gives `theta`, then `-ln S`
/// against `x^theta` gives `eta`.
///
/// The window runs from the 90th percentile to the point where 50 samples
/// remain above, which is often less than a decade for light tails.
pub fn fit_right_tail(dist: &EmpiricalDistribution) -> Result<RightFit> {
    let v = dist.sorted();
    let n = v.len() as f64;
    let q90 = quantile_sorted(&v, 0.9);
    let above = v.len() - v.partition_point(|&x| x <= q90);
    if above < MIN_WINDOW {
        return Err(Error::Window(format!(
            "{above} samples above the 90th percentile, need {MIN_WINDOW}"
        )));
    }
    let hi = quantile_sorted(&v, 1.0 - RIGHT_MIN_COUNT / n);
    if !(hi > q90) {
        return Err(Error::Window("degenerate right tail".into()));
    }
    let pts: Vec<(f64, f64)> = (0..RIGHT_POINTS)
        .map(|i| {
            let x = q90 * (hi / q90).powf(i as f64 / (RIGHT_POINTS - 1) as f64);
            let cnt = v.len() - v.partition_point(|&s| s <= x);
            (x, cnt as f64 / n)
        })
        .filter(|&(_, s)| s > 0.0 && s < 1.0)
        .collect();
    let ones = vec![1.0; pts.len()];
    let rows: Vec<Vec<f64>> = pts.iter().map(|&(x, _)| vec![1.0, x.ln()]).collect();
    let y: Vec<f64> = pts.iter().map(|&(_, s)| (-s.ln()).ln()).collect();
    let stage1 = weighted_lstsq(&rows, &y, &ones).ok_or_else(|| Error::Window("singular right-tail fit".into()))?;
    let theta = stage1.coef[1];
    let rows2: Vec<Vec<f64>> = pts.iter().map(|&(x, _)| vec![1.0, x.powf(theta)]).collect();
    let y2: Vec<f64> = pts.iter().map(|&(_, s)| -s.ln()).collect();
    let stage2 = weighted_lstsq(&rows2, &y2, &ones).ok_or_else(|| Error::Window("singular right-tail fit".into()))?;
    let eta = stage2.coef[1];
    // -ln S = eta x^theta - (alpha_inf - theta + 1) ln x + c for a density
    // G x^alpha_inf exp(-eta x^theta).
    let resid: Vec<f64> = pts
        .iter()
        .map(|&(x, s)| -s.ln() - eta * x.powf(theta))
        .collect();
    let alpha_inf = weighted_lstsq(&rows, &resid, &ones).map(|f| theta - 1.0 - f.coef[1]);
    Ok(RightFit {
        theta,
        theta_std_error: stage1.std_err[1],
        eta,
        eta_std_error: stage2.std_err[1],
        alpha_inf,
        window: (q90, hi),
        r_squared: stage1.r_squared,
        count: above,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Residual {
    pub name: String,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub skipped: Option<String>,
}

/// The default battery: `x`, `x^2`, `ln x`, `x^-1/2` and a bump at the
/// sample median.
pub fn default_battery(dist: &EmpiricalDistribution) -> Vec<TestFunction> {
    let med = quantile_sorted(&dist.sorted(), 0.5);
    vec![
        TestFunction::Power { p: 1.0 },
        TestFunction::Power { p: 2.0 },
        TestFunction::Log,
        TestFunction::Power { p: -0.5 },
        TestFunction::Bump {
            center: med,
            width: 0.5 * med,
        },
    ]
}

/// `∫ Lf dπ̂` with a bootstrap standard error over 200 resamples.
pub fn stationarity_residual(
    model: &RateModel,
    kernel: &FragmentationKernel,
    dist: &EmpiricalDistribution,
    functions: &[TestFunction],
    seed: u64,
) -> Vec<Residual> {
    let evaluated: Vec<Result<Vec<f64>>> = functions
        .iter()
        .map(|f| dist.samples.iter().map(|&x| apply_generator(model, kernel, f, x)).collect())
        .collect();
    let columns: Vec<&[f64]> = evaluated.iter().filter_map(|v| v.as_deref().ok()).collect();
    let mut summaries = bootstrap_means(&columns, &dist.weights, seed).into_iter();
    functions
        .iter()
        .zip(&evaluated)
        .map(|(f, v)| match v {
            Err(e) => Residual {
                name: f.name(),
                mean: None,
                std_error: None,
                skipped: Some(e.to_string()),
            },
            Ok(_) => {
                let (mean, se) = summaries.next().expect("one result per column");
                Residual {
                    name: f.name(),
                    mean: Some(mean),
                    std_error: Some(se),
                    skipped: None,
                }
            }
        })
        .collect()
}

/// Weighted mean and its bootstrap standard error; resample `r` draws from
/// stream `r` of `seed`.
pub fn bootstrap_mean(values: &[f64], weights: &[f64], seed: u64) -> (f64, f64) {
    bootstrap_means(&[values], weights, seed)[0]
}

/// [`bootstrap_mean`] for several columns over the same samples; each
/// resample draws one set of indices shared by all columns.
pub fn bootstrap_means(columns: &[&[f64]], weights: &[f64], seed: u64) -> Vec<(f64, f64)> {
    let n = weights.len();
    let wsum: f64 = weights.iter().sum();
    let uniform = weights.iter().all(|&w| w == weights[0]);
    // Cumulative weights for weighted resampling.
    let cum: Vec<f64> = weights
        .iter()
        .scan(0.0, |s, w| {
            *s += w / wsum;
            Some(*s)
        })
        .collect();
    let k = columns.len();
    let means: Vec<Vec<f64>> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut s = vec![0.0; k];
            for _ in 0..n {
                let i = if uniform {
                    rng.random_range(0..n)
                } else {
                    let u: f64 = rng.random();
                    cum.partition_point(|&c| c <= u).min(n - 1)
                };
                for (acc, col) in s.iter_mut().zip(columns) {
                    *acc += col[i];
                }
            }
            s.iter().map(|v| v / n as f64).collect()
        })
        .collect();
    (0..k)
        .map(|c| {
            let mean: f64 = columns[c].iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
            let col: Vec<f64> = means.iter().map(|m| m[c]).collect();
            let (m, _) = stats::mean_se(&col);
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            (mean, var.sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentStability {
    pub value: f64,
    /// Running estimates at sample counts 10^k and at the full sample.
    pub running: Vec<(usize, f64)>,
    /// Relative change between the last two running estimates.
    pub last_change: f64,
}

/// Sample average of `g`.
pub fn empirical_moment(dist: &EmpiricalDistribution, g: impl Fn(f64) -> f64) -> f64 {
    dist.expect(g)
}

/// Running averages of `g` over growing prefixes of the sample, as a
/// stability diagnostic for moment finiteness.
pub fn moment_stability(dist: &EmpiricalDistribution, g: impl Fn(f64) -> f64) -> MomentStability {
    let n = dist.len();
    let mut marks: Vec<usize> = std::iter::successors(Some(100usize), |m| m.checked_mul(10))
        .take_while(|&m| m < n)
        .collect();
    marks.push(n);
    let (mut s, mut ws, mut k) = (0.0, 0.0, 0);
    let mut running = Vec::new();
    for (i, (&x, &w)) in dist.samples.iter().zip(&dist.weights).enumerate() {
        s += w * g(x);
        ws += w;
        if i + 1 == marks[k] {
            running.push((i + 1, s / ws));
            k += 1;
        }
    }
    let value = empirical_moment(dist, &g);
    let last_change = match running.len() {
        0 | 1 => f64::NAN,
        l => ((running[l - 1].1 - running[l - 2].1) / running[l - 1].1).abs(),
    };
    MomentStability {
        value,
        running,
        last_change,
    }
}
