//! Event-driven simulation of the cell process, stationary sampling by
//! ergodic averages and Monte Carlo checks of the generator.

use std::io::{self, Write};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowMap;
use crate::lyapunov::{apply_generator, classify_balance, TestFunction};
use crate::rates::{FragmentationKernel, RateModel};

/// Sizes outside this band are multiplied in log space.
const LOG_BAND: (f64, f64) = (1e-100, 1e100);

/// Stream reserved for the pilot run that picks the default stride.
const PILOT_STREAM: u64 = u64::MAX;

/// Generator for chain `stream` under `seed`.  Every consumer of
/// randomness in this crate derives its streams this way.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn apply_jump(x_pre: f64, y: f64) -> Result<f64> {
    let x = if x_pre < LOG_BAND.0 || x_pre > LOG_BAND.1 {
        (x_pre.ln() + y.ln()).exp()
    } else {
        x_pre * y
    };
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numerical(format!(
            "post-jump size left double precision: {x_pre:.6e} * {y:.6e}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub x_pre: f64,
    pub y: f64,
}

impl JumpEvent {
    pub fn x_post(&self) -> f64 {
        self.x_pre * self.y
    }
}

/// A realized path: flow between events, multiplication by `y` at events.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub x0: f64,
    pub events: Vec<JumpEvent>,
    pub horizon: f64,
}

impl Trajectory {
    /// `X_t`, right-continuous at the jump epochs.
    pub fn at(&self, flow: &FlowMap, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let k = self.events.partition_point(|e| e.t <= t);
        let (t0, x) = match k {
            0 => (0.0, self.x0),
            _ => {
                let e = &self.events[k - 1];
                (e.t, e.x_post())
            }
        };
        flow.flow(x, t - t0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x_pre,y,x_post")?;
        for e in &self.events {
            writeln!(w, "{:e},{:e},{:e},{:e}", e.t, e.x_pre, e.y, e.x_post())?;
        }
        Ok(())
    }
}

/// Advances one path, remembering the already drawn next jump so that the
/// state can be read at arbitrary times without disturbing the law.
struct Stepper<'a> {
    flow: &'a FlowMap,
    kernel: &'a FragmentationKernel,
    t_last: f64,
    x_last: f64,
    next: Option<(f64, f64)>,
    jumps: u64,
}

impl<'a> Stepper<'a> {
    fn new(flow: &'a FlowMap, kernel: &'a FragmentationKernel, x0: f64) -> Self {
        Stepper {
            flow,
            kernel,
            t_last: 0.0,
            x_last: x0,
            next: None,
            jumps: 0,
        }
    }

    fn pending<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(f64, f64)> {
        if let Some(n) = self.next {
            return Ok(n);
        }
        let e: f64 = rng.sample(Exp1);
        let n = match self.flow.invert_hazard(self.x_last, e)? {
            Some((dt, x_pre)) => (self.t_last + dt, x_pre),
            None => (f64::INFINITY, f64::INFINITY),
        };
        self.next = Some(n);
        Ok(n)
    }

    /// Performs every jump up to and including `t`, reporting each one.
    fn advance<R: Rng + ?Sized>(
        &mut self,
        t: f64,
        rng: &mut R,
        mut on_jump: impl FnMut(JumpEvent),
    ) -> Result<()> {
        loop {
            let (tj, x_pre) = self.pending(rng)?;
            if tj > t {
                return Ok(());
            }
            let y = self.kernel.sample(rng);
            self.x_last = apply_jump(x_pre, y)?;
            self.t_last = tj;
            self.next = None;
            self.jumps += 1;
            on_jump(JumpEvent { t: tj, x_pre, y });
        }
    }

    /// `X_t` for `t` not before the last performed jump.
    fn state_at<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<f64> {
        self.advance(t, rng, |_| {})?;
        self.flow.flow(self.x_last, t - self.t_last)
    }
}

/// Stationary sampling settings; unset fields take the documented defaults.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryConfig {
    pub horizon: f64,
    /// Defaults to `horizon / 5`.
    pub burn_in: Option<f64>,
    /// Defaults to `1 / max(beta(xbar), tau(xbar) / xbar)` from a pilot run.
    pub stride: Option<f64>,
    /// Defaults to the worker count.
    pub n_chains: Option<usize>,
    pub x0: f64,
    /// Sample even when the model is not classified positive recurrent.
    pub force: bool,
}

impl StationaryConfig {
    pub fn new(horizon: f64) -> Self {
        StationaryConfig {
            horizon,
            burn_in: None,
            stride: None,
            n_chains: None,
            x0: 1.0,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
    pub horizon: f64,
    pub burn_in: f64,
    pub stride: f64,
    pub n_chains: usize,
    pub x0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

impl Histogram {
    /// Log-spaced bins over `[lo, hi]`; samples outside are dropped and the
    /// masses are fractions of the total weight.
    pub fn log_binned(samples: &[f64], weights: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let (a, b) = (lo.ln(), hi.ln());
        let width = (b - a) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| match i {
                0 => lo,
                i if i == bins => hi,
                i => (a + width * i as f64).exp(),
            })
            .collect();
        let mut mass = vec![0.0; bins];
        for (&x, &w) in samples.iter().zip(weights) {
            if x < lo || x > hi {
                continue;
            }
            let k = (((x.ln() - a) / width) as usize).min(bins - 1);
            // Correct the float index against the stored edges.
            let k = if x < edges[k] { k - 1 } else if k + 1 < bins && x >= edges[k + 1] { k + 1 } else { k };
            mass[k] += w;
        }
        Histogram { edges, mass }
    }

    pub fn density(&self) -> Vec<f64> {
        self.mass
            .iter()
            .zip(self.edges.windows(2))
            .map(|(m, e)| m / (e[1] - e[0]))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_left,bin_right,mass")?;
        for (m, e) in self.mass.iter().zip(self.edges.windows(2)) {
            writeln!(w, "{:e},{:e},{:e}", e[0], e[1], m)?;
        }
        Ok(())
    }
}

pub const DEFAULT_BINS: usize = 200;

/// Weighted sample of sizes estimating the stationary law.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalDistribution {
    #[serde(skip)]
    pub samples: Vec<f64>,
    #[serde(skip)]
    pub weights: Vec<f64>,
    pub histogram: Histogram,
    pub count: usize,
    pub provenance: Provenance,
}

impl EmpiricalDistribution {
    /// Equally weighted samples.
    pub fn from_samples(samples: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Refused("empty sample".into()));
        }
        if let Some(x) = samples.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::Domain(format!("sample {x} is not a positive size")));
        }
        let n = samples.len();
        let weights = vec![1.0 / n as f64; n];
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let hi = if hi > lo { hi } else { lo * (1.0 + 1e-12) };
        let histogram = Histogram::log_binned(&samples, &weights, lo, hi, DEFAULT_BINS);
        Ok(EmpiricalDistribution {
            samples,
            weights,
            histogram,
            count: n,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `sum_i w_i g(x_i)`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.histogram.edges[0], *self.histogram.edges.last().unwrap())
    }

    pub fn histogram_on(&self, lo: f64, hi: f64, bins: usize) -> Histogram {
        Histogram::log_binned(&self.samples, &self.weights, lo, hi, bins)
    }

    /// Samples sorted ascending.
    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.samples.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// L1 distance between two samples' log-binned masses over the union of
/// their ranges.
pub fn histogram_l1(a: &EmpiricalDistribution, b: &EmpiricalDistribution, bins: usize) -> f64 {
    let (la, ha) = a.range();
    let (lb, hb) = b.range();
    let (lo, hi) = (la.min(lb), ha.max(hb));
    let (p, q) = (a.histogram_on(lo, hi, bins), b.histogram_on(lo, hi, bins));
    p.mass.iter().zip(&q.mass).map(|(x, y)| (x - y).abs()).sum()
}

/// Monte Carlo estimate of `(E[f(X_h)] - f(x)) / h - Lf(x)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeneratorResidual {
    pub estimate: f64,
    pub std_error: f64,
    pub generator: f64,
    pub h: f64,
    pub n: usize,
}

const BATCH: usize = 10_000;

/// The cell process for one rate model and kernel.
#[derive(Debug, Clone)]
pub struct Simulator {
    flow: FlowMap,
    kernel: FragmentationKernel,
}

impl Simulator {
    pub fn new(model: RateModel, kernel: FragmentationKernel) -> Result<Self> {
        model.validate()?;
        Ok(Simulator {
            flow: FlowMap::new(model),
            kernel,
        })
    }

    pub fn flow(&self) -> &FlowMap {
        &self.flow
    }

    pub fn model(&self) -> &RateModel {
        self.flow.model()
    }

    pub fn kernel(&self) -> &FragmentationKernel {
        &self.kernel
    }

    pub fn simulate_trajectory<R: Rng + ?Sized>(&self, x0: f64, horizon: f64, rng: &mut R) -> Result<Trajectory> {
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::Domain(format!("initial size {x0} is not positive")));
        }
        if !(horizon > 0.0) {
            return Err(Error::Domain(format!("horizon {horizon} is not positive")));
        }
        let mut events = Vec::new();
        let mut st = Stepper::new(&self.flow, &self.kernel, x0);
        st.advance(horizon, rng, |e| events.push(e))?;
        Ok(Trajectory { x0, events, horizon })
    }

    /// Time-average of the post-jump sizes of a single pilot chain, used to
    /// pick the default stride.
    fn pilot_stride(&self, seed: u64, x0: f64, horizon: f64) -> Result<f64> {
        let mut rng = stream_rng(seed, PILOT_STREAM);
        let mut st = Stepper::new(&self.flow, &self.kernel, x0);
        let span = horizon.min(1e3);
        let mut sizes = Vec::new();
        st.advance(span, &mut rng, |e| sizes.push(e.x_post()))?;
        // Skip the first half as warm-up.
        let tail = &sizes[sizes.len() / 2..];
        let xbar = if tail.is_empty() {
            st.state_at(span, &mut rng)?
        } else {
            (tail.iter().map(|x| x.ln()).sum::<f64>() / tail.len() as f64).exp()
        };
        let m = self.model();
        let rate = m.beta.eval(xbar).max(m.tau.eval(xbar) / xbar);
        Ok(1.0 / rate)
    }

    /// Pooled samples `X_{burn_in + j stride}` over independent chains.
    ///
    /// Chain `i` uses [`stream_rng`]`(seed, i)`; pooling is in chain order,
    /// so the result does not depend on scheduling.
    pub fn sample_stationary(&self, cfg: &StationaryConfig, seed: u64) -> Result<EmpiricalDistribution> {
        if !cfg.force {
            let c = classify_balance(self.model(), &self.kernel, None);
            if !c.positive_recurrent {
                return Err(Error::Refused(format!(
                    "the model is not positive recurrent (failed: {}); use force to sample anyway",
                    c.failures.join(", ")
                )));
            }
        }
        let burn_in = cfg.burn_in.unwrap_or(cfg.horizon / 5.0);
        if !(burn_in >= 0.0 && burn_in < cfg.horizon) {
            return Err(Error::Refused(format!(
                "burn-in {burn_in} leaves nothing to sample before the horizon {}",
                cfg.horizon
            )));
        }
        let stride = match cfg.stride {
            Some(s) => s,
            None => self.pilot_stride(seed, cfg.x0, cfg.horizon)?,
        };
        if !(stride > 0.0 && stride.is_finite()) {
            return Err(Error::Domain(format!("stride {stride} is not positive")));
        }
        let n_chains = cfg.n_chains.unwrap_or_else(rayon::current_num_threads).max(1);
        let per_chain = ((cfg.horizon - burn_in) / stride).floor() as usize + 1;
        let chains = (0..n_chains)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let mut st = Stepper::new(&self.flow, &self.kernel, cfg.x0);
                (0..per_chain)
                    .map(|j| st.state_at(burn_in + j as f64 * stride, &mut rng))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let provenance = Provenance {
            source: "pdmp".into(),
            seed,
            horizon: cfg.horizon,
            burn_in,
            stride,
            n_chains,
            x0: cfg.x0,
        };
        EmpiricalDistribution::from_samples(chains.concat(), provenance)
    }

    /// `(E[f(X_h) | X_0 = x] - f(x)) / h - Lf(x)` over `n` independent
    /// short paths, batched on streams of `seed`.
    pub fn generator_residual(&self, f: &TestFunction, x: f64, h: f64, n: usize, seed: u64) -> Result<GeneratorResidual> {
        if !(h > 0.0) || n < 2 {
            return Err(Error::Domain(format!("need h > 0 and n >= 2 (got {h}, {n})")));
        }
        let generator = apply_generator(self.model(), &self.kernel, f, x)?;
        let fx = f.value(x);
        let batches = n.div_ceil(BATCH);
        let sums = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream_rng(seed, b as u64);
                let m = BATCH.min(n - b * BATCH);
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..m {
                    let mut st = Stepper::new(&self.flow, &self.kernel, x);
                    let d = (f.value(st.state_at(h, &mut rng)?) - fx) / h;
                    s += d;
                    s2 += d * d;
                }
                Ok((s, s2))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let nf = n as f64;
        let mean = s / nf;
        let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
        Ok(GeneratorResidual {
            estimate: mean - generator,
            std_error: (var / nf).sqrt(),
            generator,
            h,
            n,
        })
    }

    /// First-jump epochs from `z` by inversion, for law checks.
    pub fn first_jump_times(&self, z: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| self.flow.sample_jump_time(z, &mut rng)).collect()
    }
}

/// Counts of events on `[0, horizon]` over `n` paths from `x0`.
pub fn event_counts(sim: &Simulator, x0: f64, horizon: f64, n: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| sim.simulate_trajectory(x0, horizon, &mut rng).map(|t| t.events.len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::RateFn;
    use crate::stats;
    use statrs::distribution::{Discrete, Poisson};

    fn sim(tau: RateFn, beta: RateFn, k: FragmentationKernel) -> Simulator {
        Simulator::new(RateModel::new(tau, beta), k).unwrap()
    }

    fn tcp() -> Simulator {
        sim(
            RateFn::constant(1.0).unwrap(),
            RateFn::power(1.0, 1.0).unwrap(),
            FragmentationKernel::point_mass(0.5).unwrap(),
        )
    }

    fn unit_rates() -> Simulator {
        sim(
            RateFn::constant(1.0).unwrap(),
            RateFn::constant(1.0).unwrap(),
            FragmentationKernel::point_mass(0.5).unwrap(),
        )
    }

    #[test]
    fn unit_rate_event_count() {
        let counts = event_counts(&unit_rates(), 1.0, 10.0, 1000, 1).unwrap();
        let mean = counts.iter().sum::<usize>() as f64 / 1000.0;
        assert!((mean - 10.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn event_count_is_poisson() {
        let (c, t, n) = (1.5, 4.0, 10_000);
        let s = sim(
            RateFn::power(1.0, 1.0).unwrap(),
            RateFn::constant(c).unwrap(),
            FragmentationKernel::Uniform,
        );
        let counts = event_counts(&s, 1.0, t, n, 2).unwrap();
        let kmax = *counts.iter().max().unwrap() + 1;
        let mut obs = vec![0.0; kmax + 1];
        for k in counts {
            obs[k] += 1.0;
        }
        let law = Poisson::new(c * t).unwrap();
        let mut exp: Vec<f64> = (0..=kmax).map(|k| n as f64 * law.pmf(k as u64)).collect();
        // fold the upper tail into the last cell
        let below: f64 = exp.iter().sum();
        exp[kmax] += n as f64 - below;
        let (_, _, p) = stats::chi_square(&obs, &exp);
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn tcp_jumps_halve_the_size() {
        let s = tcp();
        let mut rng = stream_rng(3, 0);
        let tr = s.simulate_trajectory(1.0, 50.0, &mut rng).unwrap();
        assert!(tr.events.len() > 10);
        let mut prev = (0.0, 1.0);
        for e in &tr.events {
            assert_eq!(e.y, 0.5);
            assert!(e.t > prev.0);
            // pre-jump size is the flow of the previous post-jump size
            let expect = prev.1 + (e.t - prev.0);
            assert!(((e.x_pre - expect) / expect).abs() < 1e-12);
            prev = (e.t, e.x_post());
        }
        // right-continuity at the epochs
        let e = tr.events[3];
        assert_eq!(tr.at(s.flow(), e.t).unwrap(), e.x_post());
    }

    #[test]
    fn exponential_growth_stays_finite() {
        let s = sim(
            RateFn::power(1.0, 1.0).unwrap(),
            RateFn::power(1.0, 1.0).unwrap(),
            FragmentationKernel::Uniform,
        );
        let mut rng = stream_rng(4, 0);
        let mut max = 0.0f64;
        for _ in 0..1000 {
            let tr = s.simulate_trajectory(1.0, 10.0, &mut rng).unwrap();
            for e in &tr.events {
                assert!(e.x_post() > 0.0);
                max = max.max(e.x_pre);
            }
            max = max.max(tr.at(s.flow(), 10.0).unwrap());
        }
        assert!(max.is_finite() && max > 1.0);
    }

    #[test]
    fn first_jump_law() {
        let xs = tcp().first_jump_times(1.0, 100_000, 5).unwrap();
        let d = stats::ks_statistic(&xs, |t| 1.0 - (-(t + t * t / 2.0)).exp());
        assert!(d < 0.01, "{d}");
    }

    #[test]
    fn log_space_jumps() {
        assert_eq!(apply_jump(1e-200, 0.5).unwrap(), (1e-200f64.ln() + 0.5f64.ln()).exp());
        assert_eq!(apply_jump(4.0, 0.5).unwrap(), 2.0);
        assert!(apply_jump(1e-320, 1e-10).is_err());
    }

    #[test]
    fn stationary_second_moment_small_run() {
        let mut cfg = StationaryConfig::new(20_000.0);
        cfg.n_chains = Some(4);
        let d = tcp().sample_stationary(&cfg, 7).unwrap();
        assert!(d.len() > 50_000);
        let m2 = d.expect(|x| x * x);
        assert!((m2 - 2.0).abs() < 0.1, "{m2}");
        assert!((d.expect(|_| 1.0) - 1.0).abs() < 1e-9);
        // same seed, same bytes
        let again = tcp().sample_stationary(&cfg, 7).unwrap();
        assert_eq!(d.samples, again.samples);
    }

    #[test]
    fn stationary_refusals() {
        let mut cfg = StationaryConfig::new(10.0);
        cfg.burn_in = Some(10.0);
        assert!(matches!(tcp().sample_stationary(&cfg, 1), Err(Error::Refused(_))));
        // tau = 1 + x^3, beta = x violates the balance at infinity
        let s = sim(
            RateFn::two_term(1.0, 0.0, 1.0, 3.0).unwrap(),
            RateFn::power(1.0, 1.0).unwrap(),
            FragmentationKernel::Uniform,
        );
        match s.sample_stationary(&StationaryConfig::new(10.0), 1) {
            Err(Error::Refused(m)) => assert!(m.contains("balance at ∞"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generator_residual_examples() {
        let s = tcp();
        let r = s.generator_residual(&TestFunction::Power { p: 1.0 }, 1.0, 1e-3, 200_000, 8).unwrap();
        assert!((r.generator - 0.5).abs() < 1e-12);
        assert!(r.estimate.abs() < 3.0 * r.std_error, "{r:?}");
        let r = s.generator_residual(&TestFunction::Constant { c: 3.0 }, 1.0, 1e-3, 1000, 8).unwrap();
        assert_eq!((r.estimate, r.std_error), (0.0, 0.0));
        // tau = x, beta = x, Uniform: Lf(x) = x - x^2 / 2
        let s = sim(
            RateFn::power(1.0, 1.0).unwrap(),
            RateFn::power(1.0, 1.0).unwrap(),
            FragmentationKernel::Uniform,
        );
        let r = s.generator_residual(&TestFunction::Power { p: 1.0 }, 2.0, 1e-3, 200_000, 9).unwrap();
        assert!((r.generator - 0.0).abs() < 1e-12);
        assert!(r.estimate.abs() < 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn histogram_masses() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64 / 100.0).collect();
        let p = Provenance {
            source: "test".into(),
            seed: 0,
            horizon: 0.0,
            burn_in: 0.0,
            stride: 0.0,
            n_chains: 0,
            x0: 0.0,
        };
        let d = EmpiricalDistribution::from_samples(xs, p).unwrap();
        assert!((d.histogram.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(histogram_l1(&d, &d, 50), 0.0);
    }
}
