//! C ABI over `ratelim`.
//!
//! Every fallible function returns an [`RlStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be read with [`rl_last_error`]. Plants and simulation reports are opaque
//! handles released with their `_free` function.
//!
//! Rates that do not exist are reported as `INFINITY` when no finite rate
//! suffices and `NaN` when the bound does not apply.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ratelim::channel::ChannelConfig;
use ratelim::codec::{ControlLaw, QuantizerSpec};
use ratelim::limits::BoundsReport;
use ratelim::montecarlo::{self, DecayReport, Experiment, Target, Verdict};
use ratelim::plant::StrategyKind;
use ratelim::{mjls, timeshare, Error, UncertainPlant};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RlStatus {
    Ok = 0,
    InvalidPlant = 1,
    ParamOutOfBox = 2,
    InvalidArgument = 3,
    Saturation = 4,
    SymbolOutOfRange = 5,
    DimensionCap = 6,
    IterationCap = 7,
    NullPointer = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RlVerdict {
    Stable = 0,
    Unstable = 1,
    Inconclusive = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RlControlLaw {
    Nominal = 0,
    Centering = 1,
}

/// Opaque uncertain plant.
pub struct RlPlant(UncertainPlant);

/// Opaque Monte Carlo result.
pub struct RlReport(DecayReport);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RlBounds {
    pub r_nec0: f64,
    pub r_nec1: f64,
    pub r_nec: f64,
    pub p_nec: f64,
    pub r_you: f64,
    pub p_you: f64,
    /// `NaN` for plants of order above one.
    pub r_phat: f64,
    /// `NaN` for plants of order above one.
    pub r_martins: f64,
    pub feasible: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RlSufficiency {
    pub rho: f64,
    pub sufficient: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RlTimeShareRow {
    pub m: u32,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// `NaN` when no total level up to the cap is feasible.
    pub kappa_bar: f64,
    /// `NaN` when not computed for this `(p, m)`.
    pub r_bar: f64,
    pub feasible: bool,
    /// 0 when no total level up to the cap is feasible.
    pub min_total_level: u64,
    pub avg_level: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RlExperiment {
    pub trials: usize,
    pub steps: usize,
    pub seed: u64,
    pub law: RlControlLaw,
    /// `NaN` draws the initial output uniformly per trial.
    pub y0: f64,
    /// Slope tolerance of the verdict; `NaN` selects the default.
    pub tol_slope: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RlStatus {
    match err {
        Error::InvalidPlant(_) => RlStatus::InvalidPlant,
        Error::ParamOutOfBox { .. } => RlStatus::ParamOutOfBox,
        Error::InvalidArgument { .. } => RlStatus::InvalidArgument,
        Error::Saturation { .. } => RlStatus::Saturation,
        Error::SymbolOutOfRange { .. } => RlStatus::SymbolOutOfRange,
        Error::DimensionCap { .. } => RlStatus::DimensionCap,
        Error::IterationCap { .. } => RlStatus::IterationCap,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RlStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("null pointer passed as `{name}`"));
            RlStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RlStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn plant_ref<'a>(p: *const RlPlant) -> Result<&'a UncertainPlant, Fail> {
    p.as_ref().map(|h| &h.0).ok_or(Fail::Null("plant"))
}

fn rate_or_inf(r: Option<f64>) -> f64 {
    r.unwrap_or(f64::INFINITY)
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a plant of order `n` from nominal coefficients and half-widths.
///
/// # Safety
/// `a_star` and `eps` must point to `n` readable doubles and `out` must be
/// writable. The handle written to `out` must be released with
/// [`rl_plant_free`].
#[no_mangle]
pub unsafe extern "C" fn rl_plant_new(
    a_star: *const f64,
    eps: *const f64,
    n: usize,
    y0_bound: f64,
    out_plant: *mut *mut RlPlant,
) -> RlStatus {
    guard(|| {
        let slot = out(out_plant, "out_plant")?;
        *slot = ptr::null_mut();
        if a_star.is_null() {
            return Err(Fail::Null("a_star"));
        }
        if eps.is_null() {
            return Err(Fail::Null("eps"));
        }
        let a = std::slice::from_raw_parts(a_star, n).to_vec();
        let e = std::slice::from_raw_parts(eps, n).to_vec();
        let plant = UncertainPlant::new(a, e, y0_bound)?;
        *slot = Box::into_raw(Box::new(RlPlant(plant)));
        Ok(())
    })
}

/// # Safety
/// `plant` must be null or a handle from [`rl_plant_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rl_plant_free(plant: *mut RlPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Order of the plant, 0 for a null handle.
///
/// # Safety
/// `plant` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rl_plant_order(plant: *const RlPlant) -> usize {
    plant.as_ref().map_or(0, |h| h.0.order())
}

/// Necessary rate and loss bounds at loss probability `p`.
///
/// # Safety
/// `plant` must be a live handle and `out_bounds` writable.
#[no_mangle]
pub unsafe extern "C" fn rl_bounds(
    plant: *const RlPlant,
    p: f64,
    out_bounds: *mut RlBounds,
) -> RlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        let slot = out(out_bounds, "out_bounds")?;
        let b = BoundsReport::for_plant(plant, p)?;
        *slot = RlBounds {
            r_nec0: rate_or_inf(b.r_nec0),
            r_nec1: rate_or_inf(b.r_nec1),
            r_nec: rate_or_inf(b.r_nec),
            p_nec: b.p_nec,
            r_you: rate_or_inf(b.r_you),
            p_you: b.p_you,
            r_phat: b.r_phat.unwrap_or(f64::NAN),
            r_martins: b.r_martins.unwrap_or(f64::NAN),
            feasible: b.feasible,
        };
        Ok(())
    })
}

/// Spectral radius of the second-moment operator for `levels >= 2`.
///
/// # Safety
/// `plant` must be a live handle and `out_suff` writable.
#[no_mangle]
pub unsafe extern "C" fn rl_sufficient(
    plant: *const RlPlant,
    levels: u64,
    p: f64,
    out_suff: *mut RlSufficiency,
) -> RlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        let slot = out(out_suff, "out_suff")?;
        let s = mjls::sufficient_mss(plant, levels, p)?;
        *slot = RlSufficiency {
            rho: s.rho,
            sufficient: s.sufficient,
        };
        Ok(())
    })
}

/// Smallest level count in `2..=n_max` with spectral radius below one.
/// Writes 0 to `out_levels` when there is none; `out_rho` may be null.
///
/// # Safety
/// `plant` must be a live handle, `out_levels` writable, `out_rho` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rl_min_sufficient_n(
    plant: *const RlPlant,
    p: f64,
    n_max: u64,
    out_levels: *mut u64,
    out_rho: *mut f64,
) -> RlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        let slot = out(out_levels, "out_levels")?;
        let m = mjls::min_sufficient_n(plant, p, n_max)?;
        *slot = m.levels.unwrap_or(0);
        if let Some(r) = out_rho.as_mut() {
            *r = m.rho;
        }
        Ok(())
    })
}

/// Smallest `log2 N` over real `N` with spectral radius below one, or
/// `INFINITY`.
///
/// # Safety
/// `plant` must be a live handle and `out_rate` writable.
#[no_mangle]
pub unsafe extern "C" fn rl_min_sufficient_rate(
    plant: *const RlPlant,
    p: f64,
    out_rate: *mut f64,
) -> RlStatus {
    guard(|| {
        let plant = plant_ref(plant)?;
        let slot = out(out_rate, "out_rate")?;
        *slot = rate_or_inf(mjls::min_sufficient_rate(plant, p)?);
        Ok(())
    })
}

/// Time-sharing summary for a scalar plant and cycle length `m`, scanning
/// total levels up to `cap`.
///
/// # Safety
/// `out_row` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_timeshare_row(
    a_star: f64,
    eps: f64,
    p: f64,
    m: u32,
    cap: u64,
    out_row: *mut RlTimeShareRow,
) -> RlStatus {
    guard(|| {
        let slot = out(out_row, "out_row")?;
        let r = timeshare::timeshare_row(a_star, eps, p, m, None, cap)?;
        *slot = RlTimeShareRow {
            m: r.m,
            delta_plus: r.delta_plus,
            delta_minus: r.delta_minus,
            kappa_bar: r.kappa_bar.unwrap_or(f64::NAN),
            r_bar: r.r_bar.unwrap_or(f64::NAN),
            feasible: r.feasible,
            min_total_level: r.min_total_level.unwrap_or(0),
            avg_level: r.avg_level.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Default experiment settings: 1000 trials of 500 steps, seed 0.
#[no_mangle]
pub extern "C" fn rl_experiment_default() -> RlExperiment {
    RlExperiment {
        trials: 1000,
        steps: 500,
        seed: 0,
        law: RlControlLaw::Nominal,
        y0: f64::NAN,
        tol_slope: f64::NAN,
    }
}

unsafe fn experiment(
    exp: *const RlExperiment,
    strategy: *const c_char,
) -> Result<Experiment, Fail> {
    let exp = exp.as_ref().ok_or(Fail::Null("experiment"))?;
    if strategy.is_null() {
        return Err(Fail::Null("strategy"));
    }
    let name = CStr::from_ptr(strategy)
        .to_str()
        .map_err(|_| Error::InvalidArgument {
            name: "strategy",
            reason: "not valid UTF-8".into(),
        })?;
    let kind: StrategyKind = name.parse()?;
    let mut e = Experiment::new(exp.trials, exp.steps, exp.seed, kind);
    e.law = match exp.law {
        RlControlLaw::Nominal => ControlLaw::Nominal,
        RlControlLaw::Centering => ControlLaw::Centering,
    };
    e.y0 = (!exp.y0.is_nan()).then_some(exp.y0);
    if !exp.tol_slope.is_nan() {
        e.tol_slope = exp.tol_slope;
    }
    Ok(e)
}

fn finish(target: Target, p: f64, exp: Experiment, slot: &mut *mut RlReport) -> Result<(), Fail> {
    let channel = ChannelConfig::new(p, exp.base_seed)?;
    let report = montecarlo::run_experiment(&target, &channel, &exp)?;
    *slot = Box::into_raw(Box::new(RlReport(report)));
    Ok(())
}

/// Monte Carlo run of the closed loop with an `levels`-level quantizer.
///
/// `strategy` is one of `nominal`, `iid`, `greedy` or `vertex:` followed by
/// one `+`/`-` per coefficient.
///
/// # Safety
/// `plant` must be a live handle, `exp` readable, `strategy` a NUL-terminated
/// string and `out_report` writable. The report must be released with
/// [`rl_report_free`].
#[no_mangle]
pub unsafe extern "C" fn rl_simulate(
    plant: *const RlPlant,
    levels: u64,
    p: f64,
    exp: *const RlExperiment,
    strategy: *const c_char,
    out_report: *mut *mut RlReport,
) -> RlStatus {
    guard(|| {
        let slot = out(out_report, "out_report")?;
        *slot = ptr::null_mut();
        let plant = plant_ref(plant)?.clone();
        let exp = experiment(exp, strategy)?;
        let quantizer = QuantizerSpec::new(levels)?;
        finish(Target::Plant { plant, quantizer }, p, exp, slot)
    })
}

/// Monte Carlo run of the time-shared scalar loop with `total_level` symbols
/// per cycle of length `m`.
///
/// # Safety
/// As for [`rl_simulate`].
#[no_mangle]
pub unsafe extern "C" fn rl_simulate_timeshare(
    a_star: f64,
    eps: f64,
    m: u32,
    total_level: u64,
    p: f64,
    y0_bound: f64,
    exp: *const RlExperiment,
    strategy: *const c_char,
    out_report: *mut *mut RlReport,
) -> RlStatus {
    guard(|| {
        let slot = out(out_report, "out_report")?;
        *slot = ptr::null_mut();
        let exp = experiment(exp, strategy)?;
        let cfg = timeshare::TimeShareConfig::with_total_level(a_star, eps, m, total_level, p)?;
        cfg.plant(y0_bound)?;
        finish(Target::TimeShare { cfg, y0_bound }, p, exp, slot)
    })
}

/// # Safety
/// `report` must be null or a handle from a simulate call not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rl_report_free(report: *mut RlReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of recorded steps, 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rl_report_len(report: *const RlReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.mean_sq_y.len())
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rl_report_verdict(report: *const RlReport) -> RlVerdict {
    match report.as_ref().map(|r| r.0.verdict) {
        Some(Verdict::Stable) => RlVerdict::Stable,
        Some(Verdict::Unstable) => RlVerdict::Unstable,
        _ => RlVerdict::Inconclusive,
    }
}

/// Fitted slope of `ln E[sigma^2]` per step; `NaN` for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rl_report_slope(report: *const RlReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.slope)
}

/// Copies up to `len` values of the mean square output and range width into
/// `mean_sq_y` and `mean_sq_sigma` (either may be null). Returns the count
/// copied.
///
/// # Safety
/// `report` must be a live handle; non-null buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rl_report_copy(
    report: *const RlReport,
    mean_sq_y: *mut f64,
    mean_sq_sigma: *mut f64,
    len: usize,
) -> usize {
    let Some(r) = report.as_ref() else { return 0 };
    let k = len.min(r.0.mean_sq_y.len());
    if !mean_sq_y.is_null() {
        ptr::copy_nonoverlapping(r.0.mean_sq_y.as_ptr(), mean_sq_y, k);
    }
    if !mean_sq_sigma.is_null() {
        ptr::copy_nonoverlapping(r.0.mean_sq_sigma.as_ptr(), mean_sq_sigma, k);
    }
    k
}
