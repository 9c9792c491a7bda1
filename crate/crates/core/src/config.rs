//! Run configuration: a TOML file describing the model and the settings of
//! every subcommand.  See the README for the grammar and defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lyapunov::LyapunovSpec;
use crate::pde::{SteadyOptions, DEFAULT_COMPARE_BINS, DEFAULT_STEADY_TOL};
use crate::pdmp::StationaryConfig;
use crate::rates::{Asymptotics, FragmentationKernel, RateFn, RateModel, RateTable};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_output() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub tau: RateConfig,
    pub beta: RateConfig,
    pub kernel: KernelConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticsConfig {
    pub coef_zero: f64,
    pub exp_zero: f64,
    pub coef_inf: f64,
    pub exp_inf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    Constant {
        c: f64,
    },
    Power {
        coef: f64,
        exponent: f64,
    },
    TwoTerm {
        c1: f64,
        p1: f64,
        c2: f64,
        p2: f64,
    },
    Table {
        points: Vec<(f64, f64)>,
        declared: Option<AsymptoticsConfig>,
        #[serde(default = "default_table_tolerance")]
        tolerance: f64,
    },
}

fn default_table_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    PointMass { r: f64 },
    Uniform,
    Beta { mu0: f64, mu1: f64 },
    Tabulated { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub burn_in: Option<f64>,
    pub stride: Option<f64>,
    pub n_chains: Option<usize>,
    #[serde(default = "one")]
    pub x0: f64,
}

fn default_horizon() -> f64 {
    1e5
}

fn one() -> f64 {
    1.0
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            horizon: default_horizon(),
            burn_in: None,
            stride: None,
            n_chains: None,
            x0: 1.0,
        }
    }
}

/// A number or the keyword `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

impl Default for Param {
    fn default() -> Self {
        Param::Keyword(AutoKeyword::Auto)
    }
}

impl Param {
    pub fn value(&self) -> Option<f64> {
        match self {
            Param::Value(v) => Some(*v),
            Param::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    #[serde(default)]
    pub a: Param,
    #[serde(default)]
    pub b: Param,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// `eta` and `theta` default to the model's predicted right tail.
    #[serde(default)]
    pub eta: Param,
    #[serde(default)]
    pub theta: Param,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_grid")]
    pub grid: (f64, f64),
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_eps() -> f64 {
    0.1
}

fn default_c() -> f64 {
    0.5
}

fn default_grid() -> (f64, f64) {
    (1e-4, 1e4)
}

fn default_grid_points() -> usize {
    81
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            a: Param::default(),
            b: Param::default(),
            eps: default_eps(),
            eta: Param::default(),
            theta: Param::default(),
            c: default_c(),
            grid: default_grid(),
            grid_points: default_grid_points(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "one")]
    pub check_interval: f64,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
}

fn default_x_min() -> f64 {
    1e-3
}

fn default_x_max() -> f64 {
    30.0
}

fn default_cells() -> usize {
    2000
}

fn default_tol() -> f64 {
    DEFAULT_STEADY_TOL
}

fn default_max_time() -> f64 {
    2000.0
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig {
            x_min: default_x_min(),
            x_max: default_x_max(),
            cells: default_cells(),
            tol: default_tol(),
            check_interval: 1.0,
            max_time: default_max_time(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_max_l1")]
    pub max_l1: f64,
    pub range: Option<(f64, f64)>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_max_l1() -> f64 {
    0.05
}

fn default_bins() -> usize {
    DEFAULT_COMPARE_BINS
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            max_l1: default_max_l1(),
            range: None,
            bins: default_bins(),
        }
    }
}

impl RateConfig {
    pub fn build(&self) -> Result<RateFn> {
        match self {
            RateConfig::Constant { c } => RateFn::constant(*c),
            RateConfig::Power { coef, exponent } => RateFn::power(*coef, *exponent),
            RateConfig::TwoTerm { c1, p1, c2, p2 } => RateFn::two_term(*c1, *p1, *c2, *p2),
            RateConfig::Table {
                points,
                declared,
                tolerance,
            } => {
                let declared = declared.map(|d| Asymptotics {
                    coef_zero: d.coef_zero,
                    exp_zero: d.exp_zero,
                    coef_inf: d.coef_inf,
                    exp_inf: d.exp_inf,
                });
                Ok(RateFn::Table(RateTable::new(points, declared, *tolerance)?))
            }
        }
    }
}

impl KernelConfig {
    pub fn build(&self) -> Result<FragmentationKernel> {
        match self {
            KernelConfig::PointMass { r } => FragmentationKernel::point_mass(*r),
            KernelConfig::Uniform => Ok(FragmentationKernel::Uniform),
            KernelConfig::Beta { mu0, mu1 } => FragmentationKernel::beta_shape(*mu0, *mu1),
            KernelConfig::Tabulated { points } => FragmentationKernel::tabulated(points),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let s = &self.simulation;
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(Error::Config(format!("simulation.horizon must be positive, got {}", s.horizon)));
        }
        if !(s.x0 > 0.0) {
            return Err(Error::Config(format!("simulation.x0 must be positive, got {}", s.x0)));
        }
        if s.n_chains == Some(0) {
            return Err(Error::Config("simulation.n_chains must be at least 1".into()));
        }
        let l = &self.lyapunov;
        if !(l.grid.0 > 0.0 && l.grid.1 > l.grid.0) || l.grid_points < 2 {
            return Err(Error::Config("lyapunov.grid must be an increasing positive pair with at least 2 points".into()));
        }
        if self.pde.cells == 0 || !(self.pde.check_interval > 0.0) {
            return Err(Error::Config("pde.cells and pde.check_interval must be positive".into()));
        }
        if self.compare.bins == 0 {
            return Err(Error::Config("compare.bins must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<(RateModel, FragmentationKernel)> {
        let model = RateModel::new(self.model.tau.build()?, self.model.beta.build()?);
        Ok((model, self.model.kernel.build()?))
    }

    /// Explicit exponents, or the automatic choice for the model.
    pub fn lyapunov_spec(&self, model: &RateModel, kernel: &FragmentationKernel) -> Result<LyapunovSpec> {
        let auto = LyapunovSpec::auto_for(model, kernel);
        LyapunovSpec::new(
            self.lyapunov.a.value().unwrap_or(auto.a),
            self.lyapunov.b.value().unwrap_or(auto.b),
        )
    }

    pub fn stationary(&self, force: bool) -> StationaryConfig {
        let s = &self.simulation;
        StationaryConfig {
            horizon: s.horizon,
            burn_in: s.burn_in,
            stride: s.stride,
            n_chains: s.n_chains,
            x0: s.x0,
            force,
        }
    }

    pub fn steady_options(&self) -> SteadyOptions {
        SteadyOptions {
            tol: self.pde.tol,
            check_interval: self.pde.check_interval,
            max_time: self.pde.max_time,
        }
    }

    /// Canonical JSON form without the output directory, so that the same
    /// run written to two places hashes the same.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output");
        v.to_string()
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
