//! Small statistics helpers shared by the samplers, the tail fits and the
//! test suites.

use statrs::distribution::{ChiSquared, ContinuousCDF};

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let v = sorted(xs);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).max((i + 1) as f64 / n - c)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Pearson chi-square goodness of fit; returns `(statistic, dof, p-value)`.
///
/// Cells with expected count below 5 are pooled from the tails inward.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, usize, f64) {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => cells.push((o_acc, e_acc)),
        }
    }
    let stat: f64 = cells.iter().map(|&(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len().saturating_sub(1).max(1);
    (stat, dof, chi_square_sf(stat, dof))
}

/// Upper tail probability of the chi-square law with `dof` degrees of freedom.
pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").sf(stat)
}

/// Weighted least squares `y ≈ X c` through the normal equations.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    pub r_squared: f64,
}

/// Fits `y ≈ sum_k c_k f_k(x)` with weights `w`.  Standard errors use the
/// residual variance.  Returns `None` when the system is singular.
pub fn weighted_lstsq(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<LinearFit> {
    let p = rows.first()?.len();
    let n = rows.len();
    if n <= p {
        return None;
    }
    let mut a = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for i in 0..p {
            rhs[i] += wi * r[i] * yi;
            for j in 0..p {
                a[i][j] += wi * r[i] * r[j];
            }
        }
    }
    let inv = invert(a)?;
    let coef: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * rhs[j]).sum()).collect();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        let fit: f64 = r.iter().zip(&coef).map(|(a, b)| a * b).sum();
        ss_res += wi * (yi - fit).powi(2);
        ss_tot += wi * (yi - ybar).powi(2);
    }
    let sigma2 = ss_res / (n - p) as f64;
    let std_err = (0..p).map(|i| (inv[i][i] * sigma2).sqrt()).collect();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearFit { coef, std_err, r_squared })
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(c, piv);
        inv.swap(c, piv);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = a[i][c];
                if f != 0.0 {
                    for j in 0..n {
                        a[i][j] -= f * a[c][j];
                        inv[i][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Empirical quantile of sorted data by linear interpolation.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - f) + v[i + 1] * f
    } else {
        v[i]
    }
}
