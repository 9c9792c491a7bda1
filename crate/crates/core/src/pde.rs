//! Finite-volume solver for the conservative growth-fragmentation equation
//!
//! ```text
//! ∂t u = -∂x[tau u] - beta u + ∫_x^∞ beta(z) κ(x, z) u(z) dz
//! ```
//!
//! on a log-spaced grid: first-order upwind transport, explicit Euler in
//! time and a fragmentation gain that moves mass between cells exactly.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pdmp::EmpiricalDistribution;
use crate::rates::{FragmentationKernel, RateModel};

pub const CFL: f64 = 0.9;

/// Log-spaced cells `[e_j, e_{j+1}]` with geometric centres.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeGrid {
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    /// `ln(e_{j+1} / e_j)`.
    pub log_step: f64,
}

impl SizeGrid {
    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_max > x_min && x_max.is_finite()) || cells == 0 {
            return Err(Error::Domain(format!(
                "grid needs 0 < x_min < x_max and cells > 0 (got {x_min}, {x_max}, {cells})"
            )));
        }
        Ok(Self::from_step(x_min, (x_max / x_min).ln() / cells as f64, cells))
    }

    /// A grid whose ratio is `(1/r)^(1/k)` for an integer `k`, so that
    /// multiplying a centre by `r` lands on another centre.  The cell count
    /// is kept close to `cells` and `x_max` is rounded up.
    pub fn aligned(x_min: f64, x_max: f64, cells: usize, r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Domain(format!("alignment ratio {r} outside (0, 1)")));
        }
        let rough = Self::new(x_min, x_max, cells)?;
        let per = (-r.ln() / rough.log_step).round().max(1.0);
        let h = -r.ln() / per;
        let n = ((x_max / x_min).ln() / h - 1e-9).ceil() as usize;
        Ok(Self::from_step(x_min, h, n))
    }

    /// Aligned to the atom for point-mass kernels, plain otherwise.
    pub fn for_kernel(kernel: &FragmentationKernel, x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        match kernel {
            FragmentationKernel::PointMass { r } => Self::aligned(x_min, x_max, cells, *r),
            _ => Self::new(x_min, x_max, cells),
        }
    }

    fn from_step(x_min: f64, h: f64, n: usize) -> Self {
        let edges: Vec<f64> = (0..=n).map(|j| x_min * (h * j as f64).exp()).collect();
        let centers = edges.windows(2).map(|e| (e[0] * e[1]).sqrt()).collect();
        let widths = edges.windows(2).map(|e| e[1] - e[0]).collect();
        SizeGrid {
            edges,
            centers,
            widths,
            log_step: h,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn x_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }
}

/// Cell averages of the density at a given time.
#[derive(Debug, Clone, Serialize)]
pub struct DensityField {
    pub grid: SizeGrid,
    pub values: Vec<f64>,
    pub time: f64,
    /// Mass lost through the boundaries so far.
    pub leaked: f64,
}

impl DensityField {
    /// Unit-mass log-normal bump `exp(-(ln(x / center) / width)^2 / 2) / x`.
    pub fn log_normal(grid: SizeGrid, center: f64, width: f64) -> Self {
        let values: Vec<f64> = grid
            .centers
            .iter()
            .map(|&x| (-0.5 * ((x / center).ln() / width).powi(2)).exp() / x)
            .collect();
        let mut f = DensityField {
            grid,
            values,
            time: 0.0,
            leaked: 0.0,
        };
        f.normalize();
        f
    }

    pub fn cell_masses(&self) -> Vec<f64> {
        self.values.iter().zip(&self.grid.widths).map(|(u, w)| u * w).collect()
    }

    /// `∫ u dx`, summed in cell order.
    pub fn mass(&self) -> f64 {
        self.values.iter().zip(&self.grid.widths).map(|(u, w)| u * w).sum()
    }

    pub fn normalize(&mut self) {
        let m = self.mass();
        if m > 0.0 {
            for u in &mut self.values {
                *u /= m;
            }
        }
    }

    /// `∫ g u dx` by the midpoint rule on cell centres.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .centers
            .iter()
            .zip(self.cell_masses())
            .map(|(&x, m)| g(x) * m)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x_center,G")?;
        for (x, u) in self.grid.centers.iter().zip(&self.values) {
            writeln!(w, "{x:e},{u:e}")?;
        }
        Ok(())
    }
}

/// Where fragmentation sends the mass leaving a cell, by cell offset.
#[derive(Debug, Clone)]
enum Gain {
    /// Point mass: offset `-(whole + frac)` cells, split linearly.
    Shift { whole: usize, frac: f64 },
    /// Uniform: `W_0` stays, `W_m = c rho^-m` for `m >= 1`.
    Geometric { w0: f64, c: f64, inv_rho: f64 },
    /// Any density: `W_m` for `m = 0..n`.
    Toeplitz(Vec<f64>),
}

/// Per-step mass balance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepReport {
    pub mass_before: f64,
    pub mass_after: f64,
    /// Fragmentation sink `dt sum beta m`.
    pub sink: f64,
    /// Fragmentation gain inside the grid.
    pub gain: f64,
    pub outflow: f64,
    pub fragment_leak: f64,
}

impl StepReport {
    /// `|mass_after + leaks - mass_before| / mass_before`.
    pub fn conservation_error(&self) -> f64 {
        ((self.mass_after + self.outflow + self.fragment_leak - self.mass_before) / self.mass_before).abs()
    }
}

/// Precomputed operator for one model, kernel and grid.
#[derive(Debug, Clone)]
pub struct PdeSolver {
    grid: SizeGrid,
    /// `tau` at the right edge of each cell.
    tau_right: Vec<f64>,
    beta: Vec<f64>,
    gain: Gain,
    /// Fraction of a cell's fragments landing below `x_min`.
    leak: Vec<f64>,
    max_dt: f64,
    sink: Vec<f64>,
    gained: Vec<f64>,
    /// Outflow and sink fractions for the step `frac_dt`.
    frac_dt: f64,
    out_frac: Vec<f64>,
    sink_frac: Vec<f64>,
}

impl PdeSolver {
    pub fn new(model: &RateModel, kernel: &FragmentationKernel, grid: SizeGrid) -> Result<Self> {
        let n = grid.len();
        let h = grid.log_step;
        let tau_right: Vec<f64> = grid.edges[1..].iter().map(|&x| model.tau.eval(x)).collect();
        let beta: Vec<f64> = grid.centers.iter().map(|&x| model.beta.eval(x)).collect();
        let (gain, leak) = match kernel {
            FragmentationKernel::PointMass { r } => {
                let off = -r.ln() / h;
                let mut whole = off.floor();
                let mut frac = off - whole;
                if frac < 1e-9 || frac > 1.0 - 1e-9 {
                    whole = off.round();
                    frac = 0.0;
                }
                let whole = whole as usize;
                let leak = (0..n)
                    .map(|k| {
                        if k < whole {
                            1.0
                        } else if k < whole + 1 && frac > 0.0 {
                            frac
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (Gain::Shift { whole, frac }, leak)
            }
            FragmentationKernel::Uniform => {
                let rho = h.exp();
                let w0 = -(-0.5 * h).exp_m1();
                let c = 2.0 * (0.5 * h).sinh();
                let leak = (0..n).map(|k| (-(k as f64 + 0.5) * h).exp()).collect();
                (Gain::Geometric { w0, c, inv_rho: 1.0 / rho }, leak)
            }
            _ => {
                // F at rho^{-m-1/2}, m = 0..n-1
                let cdf: Vec<f64> = (0..n)
                    .map(|m| kernel.mass(0.0, (-(m as f64 + 0.5) * h).exp()))
                    .collect::<Result<_>>()?;
                let mut w = Vec::with_capacity(n);
                w.push(1.0 - cdf[0]);
                for m in 1..n {
                    w.push(cdf[m - 1] - cdf[m]);
                }
                (Gain::Toeplitz(w), cdf)
            }
        };
        let mut transport: f64 = 0.0;
        let mut positivity: f64 = 0.0;
        for j in 0..n {
            let a = tau_right[j] / grid.widths[j];
            transport = transport.max(a);
            positivity = positivity.max(a + beta[j]);
        }
        let max_dt = (CFL / transport).min(1.0 / positivity);
        Ok(PdeSolver {
            grid,
            tau_right,
            beta,
            gain,
            leak,
            max_dt,
            sink: vec![0.0; n],
            gained: vec![0.0; n],
            frac_dt: f64::NAN,
            out_frac: vec![0.0; n],
            sink_frac: vec![0.0; n],
        })
    }

    pub fn grid(&self) -> &SizeGrid {
        &self.grid
    }

    /// Largest step satisfying `dt max(tau / dx) <= 0.9` and
    /// `dt max(tau / dx + beta) <= 1`, which keeps the update positive.
    pub fn max_stable_dt(&self) -> f64 {
        self.max_dt
    }

    fn assemble_gain(&mut self) {
        let n = self.grid.len();
        let (s, g) = (&self.sink, &mut self.gained);
        match &self.gain {
            Gain::Shift { whole, frac } => {
                g.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..n {
                    if k >= *whole {
                        g[k - whole] += (1.0 - frac) * s[k];
                    }
                    if *frac > 0.0 && k > *whole {
                        g[k - whole - 1] += frac * s[k];
                    }
                }
            }
            Gain::Geometric { w0, c, inv_rho } => {
                let mut tail = 0.0;
                for j in (0..n).rev() {
                    g[j] = w0 * s[j] + c * tail;
                    tail = inv_rho * (s[j] + tail);
                }
            }
            Gain::Toeplitz(w) => {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in j..n {
                        acc += w[k - j] * s[k];
                    }
                    g[j] = acc;
                }
            }
        }
    }

    fn check(&self, field: &DensityField, dt: f64) -> Result<()> {
        let (f, g) = (&field.grid, &self.grid);
        if f.len() != g.len() || f.log_step != g.log_step || f.edges[0] != g.edges[0] {
            return Err(Error::Domain("field and solver grids differ".into()));
        }
        if dt > self.max_dt {
            return Err(Error::Cfl {
                dt,
                max_stable_dt: self.max_dt,
            });
        }
        Ok(())
    }

    /// Update of the cell masses `m` with the fractions set by
    /// [`set_fractions`](Self::set_fractions); returns the outflow at `x_max`.
    fn update(&mut self, m: &mut [f64]) -> f64 {
        for k in 0..m.len() {
            self.sink[k] = self.sink_frac[k] * m[k];
        }
        self.assemble_gain();
        let mut inflow = 0.0;
        for j in 0..m.len() {
            let out = self.out_frac[j] * m[j];
            m[j] = m[j] + inflow - out - self.sink[j] + self.gained[j];
            inflow = out;
        }
        inflow
    }

    fn set_fractions(&mut self, dt: f64) {
        if dt == self.frac_dt {
            return;
        }
        for (a, (t, w)) in self.out_frac.iter_mut().zip(self.tau_right.iter().zip(&self.grid.widths)) {
            *a = dt * t / w;
        }
        for (b, beta) in self.sink_frac.iter_mut().zip(&self.beta) {
            *b = dt * beta;
        }
        self.frac_dt = dt;
    }

    fn store(field: &mut DensityField, m: &[f64]) {
        for ((u, m), w) in field.values.iter_mut().zip(m).zip(&field.grid.widths) {
            *u = m / w;
        }
    }

    /// One explicit step of length `dt`.
    pub fn step(&mut self, field: &mut DensityField, dt: f64) -> Result<StepReport> {
        self.check(field, dt)?;
        self.set_fractions(dt);
        let mut m = field.cell_masses();
        let mass_before: f64 = m.iter().sum();
        let outflow = self.update(&mut m);
        let sink: f64 = self.sink.iter().sum();
        let fragment_leak: f64 = self.sink.iter().zip(&self.leak).map(|(s, l)| s * l).sum();
        let gain: f64 = self.gained.iter().sum();
        Self::store(field, &m);
        field.time += dt;
        field.leaked += outflow + fragment_leak;
        Ok(StepReport {
            mass_before,
            mass_after: field.mass(),
            sink,
            gain,
            outflow,
            fragment_leak,
        })
    }

    /// Equal steps of at most `max_stable_dt` up to `t`.
    pub fn advance(&mut self, field: &mut DensityField, t: f64) -> Result<()> {
        let steps = ((t / self.max_dt).ceil() as usize).max(1);
        let dt = t / steps as f64;
        self.check(field, dt)?;
        self.set_fractions(dt);
        let mut m = field.cell_masses();
        let before: f64 = m.iter().sum();
        for _ in 0..steps {
            self.update(&mut m);
        }
        Self::store(field, &m);
        field.time += t;
        field.leaked += before - m.iter().sum::<f64>();
        Ok(())
    }
}

pub const DEFAULT_STEADY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct SteadyOptions {
    /// Stop when `||u(t + check) - u(t)||_1 / check < tol`.
    pub tol: f64,
    pub check_interval: f64,
    pub max_time: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions {
            tol: DEFAULT_STEADY_TOL,
            check_interval: 1.0,
            max_time: 2000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    pub field: DensityField,
    /// `(t, ||u(t) - u(t - check)||_1 / check)`.
    pub residuals: Vec<(f64, f64)>,
    pub converged: bool,
}

impl SteadyState {
    pub fn write_residuals_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,residual")?;
        for (t, r) in &self.residuals {
            writeln!(w, "{t:e},{r:e}")?;
        }
        Ok(())
    }
}

/// Time-marches `initial` until the normalized profile stops changing.
///
/// The profile is renormalized to unit mass after every check interval, so
/// slow boundary leakage does not prevent convergence; the leaked mass is
/// still accumulated in the field.  A non-finite `tol` returns the initial
/// condition unchanged.
pub fn steady_state(
    model: &RateModel,
    kernel: &FragmentationKernel,
    initial: DensityField,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    if !opts.tol.is_finite() {
        return Ok(SteadyState {
            field: initial,
            residuals: Vec::new(),
            converged: true,
        });
    }
    let mut solver = PdeSolver::new(model, kernel, initial.grid.clone())?;
    let mut field = initial;
    field.normalize();
    let mut residuals = Vec::new();
    while field.time < opts.max_time {
        let prev = field.values.clone();
        solver.advance(&mut field, opts.check_interval)?;
        field.normalize();
        let diff: f64 = field
            .values
            .iter()
            .zip(&prev)
            .zip(&field.grid.widths)
            .map(|((a, b), w)| (a - b).abs() * w)
            .sum();
        let r = diff / opts.check_interval;
        residuals.push((field.time, r));
        if r < opts.tol {
            return Ok(SteadyState {
                field,
                residuals,
                converged: true,
            });
        }
    }
    let tail: Vec<String> = residuals.iter().rev().take(5).map(|(t, r)| format!("t={t:.1}: {r:.3e}")).collect();
    Err(Error::NonConvergence(format!(
        "residual above {:.1e} at t = {:.1}; last: {}",
        opts.tol,
        field.time,
        tail.join(", ")
    )))
}

pub const DEFAULT_COMPARE_BINS: usize = 100;

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub l1: f64,
    pub range: (f64, f64),
    pub bins: usize,
    pub edges: Vec<f64>,
    /// Bin masses of the field and of the sample, each renormalized on the range.
    pub field_mass: Vec<f64>,
    pub sample_mass: Vec<f64>,
}

/// L1 distance between the field and the sample on their common range
/// (intersected with `range` when given), both renormalized there.
///
/// Masses are compared on `bins` log bins; cell masses are split in
/// proportion to overlap.  Coarse bins keep the sampling noise of the
/// histogram well below the distances of interest.
pub fn compare_distributions(
    field: &DensityField,
    dist: &EmpiricalDistribution,
    range: Option<(f64, f64)>,
    bins: usize,
) -> Result<Comparison> {
    let (dl, dh) = dist.range();
    let mut lo = field.grid.x_min().max(dl);
    let mut hi = field.grid.x_max().min(dh);
    if let Some((a, b)) = range {
        lo = lo.max(a);
        hi = hi.min(b);
    }
    if !(hi > lo) {
        return Err(Error::Domain(format!(
            "supports do not overlap: field [{:.3e}, {:.3e}], sample [{dl:.3e}, {dh:.3e}]",
            field.grid.x_min(),
            field.grid.x_max()
        )));
    }
    let hist = dist.histogram_on(lo, hi, bins);
    let edges = &hist.edges;
    let mut fm = vec![0.0; bins];
    let g = &field.grid;
    for j in 0..g.len() {
        let (a, b) = (g.edges[j].max(lo), g.edges[j + 1].min(hi));
        if b <= a {
            continue;
        }
        let u = field.values[j];
        let first = edges.partition_point(|&e| e <= a).saturating_sub(1);
        for k in first..bins {
            let (c, d) = (edges[k].max(a), edges[k + 1].min(b));
            if d <= c {
                if edges[k] >= b {
                    break;
                }
                continue;
            }
            fm[k] += u * (d - c);
        }
    }
    let norm = |v: &mut Vec<f64>| {
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
        }
    };
    let mut sm = hist.mass.clone();
    norm(&mut fm);
    norm(&mut sm);
    let l1 = fm.iter().zip(&sm).map(|(a, b)| (a - b).abs()).sum();
    Ok(Comparison {
        l1,
        range: (lo, hi),
        bins,
        edges: hist.edges.clone(),
        field_mass: fm,
        sample_mass: sm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdmp::{stream_rng, Provenance};
    use crate::rates::RateFn;
    use rand::RngExt;

    fn tcp() -> (RateModel, FragmentationKernel) {
        (
            RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::power(1.0, 1.0).unwrap()),
            FragmentationKernel::point_mass(0.5).unwrap(),
        )
    }

    #[test]
    fn aligned_grid() {
        let g = SizeGrid::aligned(1e-3, 30.0, 2000, 0.5).unwrap();
        let per = (2f64.ln() / g.log_step).round();
        assert!((per * g.log_step - 2f64.ln()).abs() < 1e-14);
        assert!(g.x_max() >= 30.0 * (1.0 - 1e-12) && g.x_max() < 30.0 * g.log_step.exp());
        assert!(g.edges.windows(2).all(|e| e[1] > e[0]));
    }

    #[test]
    fn pure_transport_moves_at_unit_speed() {
        // beta is tiny, so the bump only translates
        let model = RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::constant(1e-300).unwrap());
        let g = SizeGrid::new(1.0, 20.0, 3000).unwrap();
        let mut f = DensityField::log_normal(g.clone(), 3.0, 0.05);
        let mut s = PdeSolver::new(&model, &FragmentationKernel::Uniform, g).unwrap();
        let c0 = f.integrate(|x| x);
        let dt = s.max_stable_dt();
        for _ in 0..100 {
            s.step(&mut f, dt).unwrap();
        }
        let c1 = f.integrate(|x| x) / f.mass();
        // within one cell of 100 dt
        let cell = f.grid.widths[f.grid.centers.partition_point(|&x| x < c1)];
        assert!((c1 - c0 - 100.0 * dt).abs() < cell, "{c0} {c1} {dt}");
    }

    #[test]
    fn gain_balances_sink() {
        let models = [
            tcp(),
            (
                RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::power(1.0, 1.0).unwrap()),
                FragmentationKernel::Uniform,
            ),
            (
                RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::constant(1.0).unwrap()),
                FragmentationKernel::beta_shape(2.0, 1.0).unwrap(),
            ),
            (
                RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::constant(1.0).unwrap()),
                FragmentationKernel::point_mass(0.3).unwrap(),
            ),
        ];
        for (m, k) in &models {
            let g = SizeGrid::for_kernel(k, 1e-2, 20.0, 300).unwrap();
            let mut f = DensityField::log_normal(g.clone(), 1.0, 0.5);
            let mut s = PdeSolver::new(m, k, g).unwrap();
            let dt = s.max_stable_dt();
            for _ in 0..200 {
                let r = s.step(&mut f, dt).unwrap();
                assert!(((r.gain + r.fragment_leak - r.sink) / r.sink).abs() < 1e-10, "{k:?} {r:?}");
                assert!(r.conservation_error() < 1e-10);
                assert!(f.values.iter().all(|&u| u >= 0.0));
            }
        }
    }

    #[test]
    fn cfl_violation_reports_max_step() {
        let (m, k) = tcp();
        let g = SizeGrid::for_kernel(&k, 1e-2, 20.0, 100).unwrap();
        let mut f = DensityField::log_normal(g.clone(), 1.0, 0.5);
        let mut s = PdeSolver::new(&m, &k, g).unwrap();
        let max = s.max_stable_dt();
        match s.step(&mut f, 2.0 * max) {
            Err(Error::Cfl { max_stable_dt, .. }) => assert_eq!(max_stable_dt, max),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vacuous_tolerance_returns_initial() {
        let (m, k) = tcp();
        let g = SizeGrid::for_kernel(&k, 1e-2, 20.0, 100).unwrap();
        let f = DensityField::log_normal(g, 1.0, 0.5);
        let opts = SteadyOptions {
            tol: f64::INFINITY,
            ..Default::default()
        };
        let s = steady_state(&m, &k, f.clone(), &opts).unwrap();
        assert_eq!(s.field.values, f.values);
    }

    #[test]
    fn coarse_tcp_steady_state() {
        let (m, k) = tcp();
        let g = SizeGrid::for_kernel(&k, 1e-2, 20.0, 400).unwrap();
        let f = DensityField::log_normal(g, 1.0, 0.5);
        let opts = SteadyOptions {
            tol: 1e-6,
            ..Default::default()
        };
        let s = steady_state(&m, &k, f, &opts).unwrap();
        let m2 = s.field.integrate(|x| x * x);
        assert!((m2 - 2.0).abs() < 0.05, "{m2}");
    }

    #[test]
    fn self_comparison() {
        let (m, k) = tcp();
        let g = SizeGrid::for_kernel(&k, 1e-2, 20.0, 400).unwrap();
        let f = DensityField::log_normal(g, 1.0, 0.5);
        let s = steady_state(&m, &k, f, &SteadyOptions { tol: 1e-6, ..Default::default() }).unwrap();
        // sample the field: pick a cell by mass, then a uniform point in it
        let masses = s.field.cell_masses();
        let total: f64 = masses.iter().sum();
        let cum: Vec<f64> = masses.iter().scan(0.0, |a, m| { *a += m / total; Some(*a) }).collect();
        let mut rng = stream_rng(1, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let u: f64 = rng.random();
                let j = cum.partition_point(|&c| c < u).min(cum.len() - 1);
                let (a, b) = (s.field.grid.edges[j], s.field.grid.edges[j + 1]);
                a + (b - a) * rng.random::<f64>()
            })
            .collect();
        let p = Provenance {
            source: "field".into(),
            seed: 1,
            horizon: 0.0,
            burn_in: 0.0,
            stride: 0.0,
            n_chains: 1,
            x0: 0.0,
        };
        let d = EmpiricalDistribution::from_samples(xs, p).unwrap();
        let c = compare_distributions(&s.field, &d, None, DEFAULT_COMPARE_BINS).unwrap();
        assert!(c.l1 < 0.02, "{}", c.l1);
        assert!(compare_distributions(&s.field, &d, Some((100.0, 200.0)), 10).is_err());
    }

    fn unit_uniform() -> (RateModel, FragmentationKernel) {
        (
            RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::constant(1.0).unwrap()),
            FragmentationKernel::Uniform,
        )
    }

    #[test]
    fn uniform_kernel_matches_gamma_profile() {
        // stationary density x exp(-x): slope 1 at the origin
        let (m, k) = unit_uniform();
        let g = SizeGrid::new(1e-4, 40.0, 400).unwrap();
        let f = DensityField::log_normal(g, 1.0, 0.5);
        let s = steady_state(&m, &k, f, &SteadyOptions { tol: 1e-7, ..Default::default() }).unwrap();
        let pts: Vec<(f64, f64)> = s
            .field
            .grid
            .centers
            .iter()
            .zip(&s.field.values)
            .filter(|(x, _)| **x > 1e-2 && **x < 3e-2)
            .map(|(x, u)| (x.ln(), u.ln()))
            .collect();
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - 1.0).abs() < 0.15, "{slope}");
        let l1: f64 = s
            .field
            .grid
            .edges
            .windows(2)
            .zip(s.field.cell_masses())
            .map(|(e, m)| {
                let cdf = |x: f64| 1.0 - (1.0 + x) * (-x).exp();
                (m - (cdf(e[1]) - cdf(e[0]))).abs()
            })
            .sum();
        assert!(l1 < 0.05, "{l1}");
    }

    fn restrict(fine: &DensityField, coarse: &SizeGrid) -> Vec<f64> {
        let ratio = fine.grid.len() / coarse.len();
        fine.cell_masses().chunks(ratio).map(|c| c.iter().sum()).collect()
    }

    #[test]
    fn refinement_is_first_order() {
        let (m, k) = tcp();
        let opts = SteadyOptions { tol: 1e-7, ..Default::default() };
        // eleven octaves, so the grids nest
        let solve = |per_octave: usize| {
            let g = SizeGrid::aligned(1e-2, 20.48, 11 * per_octave, 0.5).unwrap();
            steady_state(&m, &k, DensityField::log_normal(g, 1.0, 0.5), &opts).unwrap().field
        };
        let (f1, f2, f3) = (solve(10), solve(20), solve(40));
        assert_eq!((f2.grid.len(), f3.grid.len()), (2 * f1.grid.len(), 4 * f1.grid.len()));
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let c1 = f1.cell_masses();
        let d1 = l1(&c1, &restrict(&f2, &f1.grid));
        let d2 = l1(&restrict(&f2, &f1.grid), &restrict(&f3, &f1.grid));
        // first order: each halving roughly halves the change
        assert!(d2 > 0.35 * d1 && d2 < 0.7 * d1, "{d1} {d2}");
    }
}
