//! The `gfrag` command-line front end.
//!
//! Every subcommand reads a [`RunConfig`], writes its results under the
//! output directory and returns an exit code: 0 success, 1 usage or
//! configuration error, 2 failed assumption or refusal, 3 numerical
//! failure, 4 acceptance threshold exceeded.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lyapunov::{
    check_bound_v, classify_balance, drift_report, log_grid, vtilde_threshold, BoundVReport, ExpSpec,
};
use crate::pde::{compare_distributions, steady_state, DensityField, SizeGrid};
use crate::pdmp::{stream_rng, EmpiricalDistribution, Simulator};
use crate::rates::{FragmentationKernel, RateModel};
use crate::tails::{default_battery, fit_tails, moment_stability, predict_tails, stationarity_residual};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

/// Length of the exported sample path.
const TRAJECTORY_SPAN: f64 = 100.0;
/// Size at which the bound on `I(x)` starts.
const BOUND_X0: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(name = "gfrag", version, about = "Growth-fragmentation cell process toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the assumptions and classify recurrence.
    Validate(Common),
    /// Sample the stationary law and export its histogram.
    Simulate(Common),
    /// Evaluate the Lyapunov drift on a grid.
    Drift(Common),
    /// Fit the tails of the sampled stationary law.
    Tails(Common),
    /// Solve for the PDE steady state.
    Pde(Common),
    /// Compare the PDE steady state with the sampled law.
    Compare(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Path of the TOML configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Run even when the model fails the recurrence checks.
    #[arg(long)]
    pub force: bool,
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gfrag: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    force: bool,
    model: RateModel,
    kernel: FragmentationKernel,
}

impl Ctx {
    fn load(c: &Common) -> Result<Ctx> {
        let text = fs::read_to_string(&c.config)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", c.config.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(o) = &c.out {
            cfg.output = o.to_string_lossy().into_owned();
        }
        let (model, kernel) = cfg.model()?;
        let out = PathBuf::from(&cfg.output);
        fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
        Ok(Ctx {
            hash: cfg.hash(),
            cfg,
            out,
            force: c.force,
            model,
            kernel,
        })
    }

    fn header(&self) -> String {
        format!("# gfrag {VERSION} config {}", self.hash)
    }

    fn envelope(&self, command: &str, report: impl Serialize) -> Value {
        json!({
            "tool": "gfrag",
            "version": VERSION,
            "command": command,
            "config_hash": self.hash,
            "config": serde_json::from_str::<Value>(&self.cfg.canonical_json()).expect("valid json"),
            "report": report,
        })
    }

    fn write_json(&self, name: &str, command: &str, report: impl Serialize) -> Result<Value> {
        let v = self.envelope(command, report);
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(&v).expect("report serializes");
        fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        Ok(v)
    }

    fn write_csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header()).expect("write to memory");
        body(&mut buf).expect("write to memory");
        let path = self.out.join(name);
        fs::write(&path, buf).map_err(|e| io_error(&path, e))
    }

    fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.model.clone(), self.kernel.clone())
    }

    fn sample(&self) -> Result<EmpiricalDistribution> {
        self.simulator()?.sample_stationary(&self.cfg.stationary(self.force), self.cfg.seed)
    }

    fn refuse_unless_recurrent(&self) -> Result<()> {
        if self.force {
            return Ok(());
        }
        let c = classify_balance(&self.model, &self.kernel, None);
        if c.positive_recurrent {
            Ok(())
        } else {
            Err(Error::Refused(format!(
                "the model is not positive recurrent (failed: {}); use --force to run anyway",
                c.failures.join(", ")
            )))
        }
    }

    fn steady(&self) -> Result<crate::pde::SteadyState> {
        let p = &self.cfg.pde;
        let grid = SizeGrid::for_kernel(&self.kernel, p.x_min, p.x_max, p.cells)?;
        let initial = DensityField::log_normal(grid, 1.0, 0.5);
        steady_state(&self.model, &self.kernel, initial, &self.cfg.steady_options())
    }
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Validate(c) => cmd_validate(&Ctx::load(c)?),
        Command::Simulate(c) => cmd_simulate(&Ctx::load(c)?),
        Command::Drift(c) => cmd_drift(&Ctx::load(c)?),
        Command::Tails(c) => cmd_tails(&Ctx::load(c)?),
        Command::Pde(c) => cmd_pde(&Ctx::load(c)?),
        Command::Compare(c) => cmd_compare(&Ctx::load(c)?),
    }
}

fn cmd_validate(ctx: &Ctx) -> Result<i32> {
    let validation = ctx.model.validate()?;
    let spec = ctx.cfg.lyapunov_spec(&ctx.model, &ctx.kernel)?;
    let class = classify_balance(&ctx.model, &ctx.kernel, Some(spec));
    let v = ctx.write_json(
        "validate.json",
        "validate",
        json!({ "rates": validation, "classification": class }),
    )?;
    println!("{}", serde_json::to_string_pretty(&v["report"]["classification"]).expect("serializes"));
    if class.harris_recurrent {
        Ok(EXIT_OK)
    } else {
        eprintln!("gfrag: assumptions fail: {}", class.failures.join(", "));
        Ok(EXIT_ASSUMPTION)
    }
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    dist: &'a EmpiricalDistribution,
    mean: f64,
    second_moment: f64,
    mean_log: f64,
}

fn summary(dist: &EmpiricalDistribution) -> SampleSummary<'_> {
    SampleSummary {
        dist,
        mean: dist.expect(|x| x),
        second_moment: dist.expect(|x| x * x),
        mean_log: dist.expect(f64::ln),
    }
}

fn cmd_simulate(ctx: &Ctx) -> Result<i32> {
    let dist = ctx.sample()?;
    ctx.write_csv("pi_hat.csv", |w| dist.histogram.write_csv(w))?;
    ctx.write_json("pi_hat.json", "simulate", summary(&dist))?;
    let sim = ctx.simulator()?;
    let span = TRAJECTORY_SPAN.min(ctx.cfg.simulation.horizon);
    let mut rng = stream_rng(ctx.cfg.seed, u64::MAX - 1);
    let traj = sim.simulate_trajectory(ctx.cfg.simulation.x0, span, &mut rng)?;
    ctx.write_csv("trajectory.csv", |w| traj.write_csv(w))?;
    eprintln!("gfrag: {} samples, E[X^2] = {:.6}", dist.len(), dist.expect(|x| x * x));
    Ok(EXIT_OK)
}

fn cmd_drift(ctx: &Ctx) -> Result<i32> {
    let (m, k, l) = (&ctx.model, &ctx.kernel, &ctx.cfg.lyapunov);
    let spec = ctx.cfg.lyapunov_spec(m, k)?;
    let grid = log_grid(l.grid.0, l.grid.1, l.grid_points);
    let report = drift_report(m, k, &spec, &grid)?;

    // exponential function for the right tail, when it exists
    let tilt = ExpSpec::from_model(m, l.c, l.eps).map(|mut e| {
        if let Some(t) = l.theta.value() {
            e.theta = t;
        }
        if let Some(h) = l.eta.value() {
            e.eta = h;
        }
        e
    });
    let (tilt_json, bound) = match &tilt {
        Ok(e) => {
            let threshold = vtilde_threshold(m, k, e, &grid);
            let bound: Result<BoundVReport> = check_bound_v(k, e.theta, e.eta, e.eps, BOUND_X0, e.c);
            (
                json!({
                    "spec": e,
                    "threshold": threshold.as_ref().ok(),
                    "threshold_error": threshold.as_ref().err().map(|x| x.to_string()),
                }),
                json!({
                    "report": bound.as_ref().ok(),
                    "error": bound.as_ref().err().map(|x| x.to_string()),
                }),
            )
        }
        Err(err) => (json!({ "error": err.to_string() }), Value::Null),
    };
    let negative_outside = report.compact.is_some();
    ctx.write_json(
        "drift.json",
        "drift",
        json!({ "drift": report, "negative_outside_compact": negative_outside, "tilt": tilt_json, "bound_v": bound }),
    )?;
    match report.compact {
        Some((lo, hi)) => {
            eprintln!("gfrag: LV < 0 outside [{lo:.4e}, {hi:.4e}]");
            Ok(EXIT_OK)
        }
        None => {
            eprintln!("gfrag: the drift is not negative near both ends of the grid");
            Ok(EXIT_THRESHOLD)
        }
    }
}

fn cmd_tails(ctx: &Ctx) -> Result<i32> {
    let dist = ctx.sample()?;
    let fit = fit_tails(&dist);
    let prediction = predict_tails(&ctx.model, &ctx.kernel, ctx.cfg.lyapunov.c)?;
    let residuals = stationarity_residual(&ctx.model, &ctx.kernel, &dist, &default_battery(&dist), ctx.cfg.seed);
    let stability = moment_stability(&dist, |x| x * x);
    ctx.write_json(
        "tails.json",
        "tails",
        json!({
            "fit": fit,
            "prediction": prediction,
            "stationarity_residuals": residuals,
            "second_moment": stability,
            "sample": summary(&dist),
        }),
    )?;
    if let Some(r) = &fit.right {
        eprintln!("gfrag: theta = {:.4} (predicted {:.4})", r.theta, prediction.theta);
    }
    if let Some(l) = &fit.left {
        eprintln!("gfrag: alpha0 = {:.4} (predicted {:?})", l.alpha0, prediction.alpha0);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PdeSummary {
    converged: bool,
    time: f64,
    cells: usize,
    x_range: (f64, f64),
    mass: f64,
    leaked: f64,
    mean: f64,
    second_moment: f64,
    mean_log: f64,
    final_residual: Option<f64>,
}

fn cmd_pde(ctx: &Ctx) -> Result<i32> {
    ctx.refuse_unless_recurrent()?;
    let st = ctx.steady()?;
    let f = &st.field;
    ctx.write_csv("pde_steady.csv", |w| f.write_csv(w))?;
    ctx.write_csv("pde_residuals.csv", |w| st.write_residuals_csv(w))?;
    let s = PdeSummary {
        converged: st.converged,
        time: f.time,
        cells: f.grid.len(),
        x_range: (f.grid.x_min(), f.grid.x_max()),
        mass: f.mass(),
        leaked: f.leaked,
        mean: f.integrate(|x| x),
        second_moment: f.integrate(|x| x * x),
        mean_log: f.integrate(f64::ln),
        final_residual: st.residuals.last().map(|r| r.1),
    };
    ctx.write_json("pde.json", "pde", &s)?;
    eprintln!("gfrag: steady state at t = {:.1}, E[X^2] = {:.6}", s.time, s.second_moment);
    Ok(EXIT_OK)
}

fn cmd_compare(ctx: &Ctx) -> Result<i32> {
    ctx.refuse_unless_recurrent()?;
    let st = ctx.steady()?;
    let dist = ctx.sample()?;
    let c = &ctx.cfg.compare;
    let cmp = compare_distributions(&st.field, &dist, c.range, c.bins)?;
    let mut notes = Vec::new();
    if matches!(ctx.kernel, FragmentationKernel::PointMass { .. }) {
        notes.push("point-mass kernel: both laws are compared as histograms on the common bins");
    }
    let pass = cmp.l1 <= c.max_l1;
    ctx.write_csv("compare.csv", |w| {
        writeln!(w, "bin_left,bin_right,pde_mass,pdmp_mass")?;
        for (e, (a, b)) in cmp.edges.windows(2).zip(cmp.field_mass.iter().zip(&cmp.sample_mass)) {
            writeln!(w, "{:e},{:e},{a:e},{b:e}", e[0], e[1])?;
        }
        Ok(())
    })?;
    ctx.write_json(
        "compare.json",
        "compare",
        json!({ "l1": cmp.l1, "max_l1": c.max_l1, "pass": pass, "range": cmp.range, "bins": cmp.bins, "notes": notes }),
    )?;
    eprintln!("gfrag: L1 distance {:.5} (bound {})", cmp.l1, c.max_l1);
    Ok(if pass { EXIT_OK } else { EXIT_THRESHOLD })
}
