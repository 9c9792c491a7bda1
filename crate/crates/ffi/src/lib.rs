//! C ABI for gfrag.
//!
//! Objects cross the boundary as opaque handles ([`GfModel`],
//! [`GfDistribution`], [`GfDensity`]) returned through out-pointers and
//! released with the matching `gf_*_free`.  Each function returns a
//! [`GfStatus`] when it can fail; on failure `gf_last_error_message` describes the error on
//! the calling thread.  Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gfrag::config::RunConfig;
use gfrag::lyapunov::{apply_generator, classify_balance, TestFunction};
use gfrag::pde::{compare_distributions, steady_state, DensityField, SizeGrid, SteadyOptions};
use gfrag::pdmp::{EmpiricalDistribution, Simulator, StationaryConfig};
use gfrag::rates::{FragmentationKernel, RateModel};
use gfrag::tails::fit_tails;
use gfrag::Error;

/// Result codes.  Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidModel = 4,
    Refused = 5,
    Domain = 6,
    Numerical = 7,
    NonConvergence = 8,
    Cfl = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for GfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => GfStatus::Config,
            Error::InvalidModel(_) | Error::ModelInconsistency(_) | Error::DegenerateKernel(_) => GfStatus::InvalidModel,
            Error::Refused(_) => GfStatus::Refused,
            Error::Domain(_) | Error::Window(_) => GfStatus::Domain,
            Error::NonConvergence(_) => GfStatus::NonConvergence,
            Error::Cfl { .. } => GfStatus::Cfl,
            _ => GfStatus::Numerical,
        }
    }
}

/// A rate model with its fragmentation kernel.
pub struct GfModel {
    model: RateModel,
    kernel: FragmentationKernel,
}

/// A sampled stationary law.
pub struct GfDistribution {
    dist: EmpiricalDistribution,
}

/// A PDE steady-state profile.
pub struct GfDensity {
    field: DensityField,
}

/// Recurrence tiers; each flag is 0 or 1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GfClassification {
    pub harris_recurrent: u8,
    pub positive_recurrent: u8,
    pub exp_ergodic: u8,
    /// Lyapunov exponents used by the checks.
    pub a: f64,
    pub b: f64,
}

/// Fitted tail exponents.  `has_left`/`has_right` say whether the
/// corresponding fields hold a fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GfTailFit {
    pub has_left: u8,
    pub alpha0: f64,
    pub alpha0_std_error: f64,
    pub has_right: u8,
    pub theta: f64,
    pub theta_std_error: f64,
    pub eta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), (GfStatus, String)>) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GfStatus::Panic
        }
    }
}

fn lift(e: Error) -> (GfStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (GfStatus, String) {
    (GfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (GfStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (GfStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (GfStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null.  The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a model from the `[model]` tables of a TOML run configuration.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_model_from_toml(toml: *const c_char, out: *mut *mut GfModel) -> GfStatus {
    guard(|| {
        let text = as_str(toml, "toml")?;
        let cfg = RunConfig::parse(text).map_err(lift)?;
        let (model, kernel) = cfg.model().map_err(lift)?;
        model.validate().map_err(lift)?;
        put(out, GfModel { model, kernel })
    })
}

/// # Safety
/// `model` must come from `gf_model_from_toml` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_model_free(model: *mut GfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classifies recurrence with automatically chosen Lyapunov exponents.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_classify(model: *const GfModel, out: *mut GfClassification) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = classify_balance(&m.model, &m.kernel, None);
        *out = GfClassification {
            harris_recurrent: c.harris_recurrent as u8,
            positive_recurrent: c.positive_recurrent as u8,
            exp_ergodic: c.exp_ergodic as u8,
            a: c.spec.a,
            b: c.spec.b,
        };
        Ok(())
    })
}

/// `L f(x)` for `f(x) = x^p`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_generator_power(model: *const GfModel, p: f64, x: f64, out: *mut f64) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = apply_generator(&m.model, &m.kernel, &TestFunction::Power { p }, x).map_err(lift)?;
        Ok(())
    })
}

/// Samples the stationary law over `n_chains` chains (0 for the default)
/// with the default burn-in and stride.  `force` nonzero samples models
/// that are not positive recurrent.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_sample_stationary(
    model: *const GfModel,
    horizon: f64,
    seed: u64,
    n_chains: usize,
    force: u8,
    out: *mut *mut GfDistribution,
) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let sim = Simulator::new(m.model.clone(), m.kernel.clone()).map_err(lift)?;
        let mut cfg = StationaryConfig::new(horizon);
        cfg.n_chains = (n_chains > 0).then_some(n_chains);
        cfg.force = force != 0;
        let dist = sim.sample_stationary(&cfg, seed).map_err(lift)?;
        put(out, GfDistribution { dist })
    })
}

/// # Safety
/// `dist` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_distribution_free(dist: *mut GfDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `dist` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn gf_distribution_len(dist: *const GfDistribution) -> usize {
    dist.as_ref().map_or(0, |d| d.dist.len())
}

/// Copies up to `cap` samples into `buf`; `written` receives the count.
/// Returns `BufferTooSmall` (after copying `cap`) when more remain.
///
/// # Safety
/// `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_distribution_samples(
    dist: *const GfDistribution,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> GfStatus {
    guard(|| {
        let d = as_ref(dist, "dist")?;
        if buf.is_null() || written.is_null() {
            return Err(null("buffer"));
        }
        let n = d.dist.samples.len().min(cap);
        ptr::copy_nonoverlapping(d.dist.samples.as_ptr(), buf, n);
        *written = n;
        if n < d.dist.samples.len() {
            return Err((
                GfStatus::BufferTooSmall,
                format!("{} samples do not fit in {cap}", d.dist.samples.len()),
            ));
        }
        Ok(())
    })
}

/// Sample average of `x^p`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_distribution_moment(dist: *const GfDistribution, p: f64, out: *mut f64) -> GfStatus {
    guard(|| {
        let d = as_ref(dist, "dist")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = d.dist.expect(|x| x.powf(p));
        Ok(())
    })
}

/// Fits both tails.  A side without an adequate window has its flag 0.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_distribution_fit_tails(dist: *const GfDistribution, out: *mut GfTailFit) -> GfStatus {
    guard(|| {
        let d = as_ref(dist, "dist")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let fit = fit_tails(&d.dist);
        let mut r = GfTailFit::default();
        if let Some(l) = &fit.left {
            r.has_left = 1;
            r.alpha0 = l.alpha0;
            r.alpha0_std_error = l.std_error;
        }
        if let Some(t) = &fit.right {
            r.has_right = 1;
            r.theta = t.theta;
            r.theta_std_error = t.theta_std_error;
            r.eta = t.eta;
        }
        *out = r;
        Ok(())
    })
}

/// Solves for the PDE steady state on a log grid of `cells` cells over
/// `[x_min, x_max]`, aligned to the atom for point-mass kernels.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_model_steady_state(
    model: *const GfModel,
    x_min: f64,
    x_max: f64,
    cells: usize,
    tol: f64,
    max_time: f64,
    out: *mut *mut GfDensity,
) -> GfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let grid = SizeGrid::for_kernel(&m.kernel, x_min, x_max, cells).map_err(lift)?;
        let opts = SteadyOptions {
            tol,
            max_time,
            ..Default::default()
        };
        let st = steady_state(&m.model, &m.kernel, DensityField::log_normal(grid, 1.0, 0.5), &opts).map_err(lift)?;
        put(out, GfDensity { field: st.field })
    })
}

/// # Safety
/// `density` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_density_free(density: *mut GfDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

/// Number of cells; 0 for a null handle.
///
/// # Safety
/// `density` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn gf_density_len(density: *const GfDensity) -> usize {
    density.as_ref().map_or(0, |d| d.field.values.len())
}

/// Copies cell centres and density values; both buffers hold `cap` doubles.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_density_values(
    density: *const GfDensity,
    x: *mut f64,
    g: *mut f64,
    cap: usize,
) -> GfStatus {
    guard(|| {
        let d = as_ref(density, "density")?;
        if x.is_null() || g.is_null() {
            return Err(null("buffer"));
        }
        let n = d.field.values.len();
        if cap < n {
            return Err((GfStatus::BufferTooSmall, format!("{n} cells do not fit in {cap}")));
        }
        ptr::copy_nonoverlapping(d.field.grid.centers.as_ptr(), x, n);
        ptr::copy_nonoverlapping(d.field.values.as_ptr(), g, n);
        Ok(())
    })
}

/// `∫ x^p G(x) dx` over the grid.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_density_moment(density: *const GfDensity, p: f64, out: *mut f64) -> GfStatus {
    guard(|| {
        let d = as_ref(density, "density")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = d.field.integrate(|x| x.powf(p));
        Ok(())
    })
}

/// L1 distance between the profile and the sample on `[lo, hi]`
/// intersected with both supports, over `bins` log bins.  Pass `lo >= hi`
/// to use the full common range.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_compare(
    density: *const GfDensity,
    dist: *const GfDistribution,
    lo: f64,
    hi: f64,
    bins: usize,
    out: *mut f64,
) -> GfStatus {
    guard(|| {
        let d = as_ref(density, "density")?;
        let s = as_ref(dist, "dist")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if bins == 0 {
            return Err((GfStatus::Domain, "bins must be positive".into()));
        }
        let range = (lo < hi).then_some((lo, hi));
        *out = compare_distributions(&d.field, &s.dist, range, bins).map_err(lift)?.l1;
        Ok(())
    })
}
