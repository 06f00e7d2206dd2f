//! C ABI for `gkp-repeater`.
//!
//! Every fallible function returns a [`GkpStatus`] and writes its result
//! through an out-pointer. On failure, [`gkp_last_error`] describes the most
//! recent error on the calling thread. Chain parameters live in an opaque
//! [`GkpConfig`] created by [`gkp_config_new`] and released with
//! [`gkp_config_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gkp_repeater::amplify::{cc_threshold_l0, CcThreshold};
use gkp_repeater::montecarlo::{self, SimulationOptions};
use gkp_repeater::rates::{self, NoiseMapping};
use gkp_repeater::{
    gkpcode, AmplificationStrategy, Error, ExpectationMode, PauliModel, PhysicalConstants, QberThreshold, RateOptions,
    RateResult, RepeaterConfig,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericFailure = 3,
    /// The CC threshold search found no crossing in its bracket.
    NoCrossing = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkpStrategy {
    PerStepPreamp = 0,
    MeanAdjusted = 1,
    MeanAdjustedArtificialLoss = 2,
    Cc = 3,
    Auto = 4,
    /// Only reported for the correctionless baseline.
    None = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkpPauliModel {
    Simplified = 0,
    Striped = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkpExpectation {
    ClosedForm = 0,
    Numeric = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkpQberThreshold {
    Working = 0,
    ExactRoot = 1,
}

/// Opaque chain configuration plus evaluation options.
pub struct GkpConfig {
    config: RepeaterConfig,
    options: RateOptions,
}

/// Rates are per time step, except `s_hz`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkpRateResult {
    pub length_km: f64,
    pub n: u64,
    pub strategy: GkpStrategy,
    pub p: f64,
    pub alpha: f64,
    pub sigma_add_sq: f64,
    pub sigma_tot_sq: f64,
    pub p_pauli: f64,
    pub qber: f64,
    pub r: f64,
    pub raw_rate: f64,
    pub s: f64,
    pub s_hz: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkpNumericAverage {
    pub strategy: GkpStrategy,
    pub sigma_add_sq: f64,
    pub p_pauli: f64,
    pub qber: f64,
    pub tail_mass: f64,
    pub tail_warning: bool,
    /// Key per step from the averaged QBER.
    pub s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkpSimulationResult {
    pub qber_mean: f64,
    pub qber_stderr: f64,
    pub mean_completion_steps: f64,
    pub completion_stderr: f64,
    pub sigma_add_mean: f64,
    pub sigma_add_variance: f64,
    pub s: f64,
    pub s_stderr: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> GkpStatus {
    if err.is_validation() {
        GkpStatus::InvalidArgument
    } else {
        GkpStatus::NumericFailure
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard<F>(f: F) -> GkpStatus
where
    F: FnOnce() -> Result<(), (GkpStatus, String)>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GkpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GkpStatus::Panic
        }
    }
}

fn lib<T>(r: gkp_repeater::Result<T>) -> Result<T, (GkpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (GkpStatus, String) {
    (GkpStatus::NullPointer, format!("{name} is null"))
}

/// # Safety
/// `ptr` is null or valid for reads of `T`.
unsafe fn deref<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, (GkpStatus, String)> {
    ptr.as_ref().ok_or_else(|| null(name))
}

/// # Safety
/// `ptr` is null or valid for writes of `T`.
unsafe fn write_out<T>(ptr: *mut T, value: T, name: &str) -> Result<(), (GkpStatus, String)> {
    if ptr.is_null() {
        return Err(null(name));
    }
    ptr.write(value);
    Ok(())
}

fn to_c_strategy(s: Option<AmplificationStrategy>) -> GkpStrategy {
    match s {
        Some(AmplificationStrategy::PerStepPreamp) => GkpStrategy::PerStepPreamp,
        Some(AmplificationStrategy::MeanAdjusted) => GkpStrategy::MeanAdjusted,
        Some(AmplificationStrategy::MeanAdjustedWithArtificialLoss) => GkpStrategy::MeanAdjustedArtificialLoss,
        Some(AmplificationStrategy::CcAmplification) => GkpStrategy::Cc,
        Some(AmplificationStrategy::Auto) => GkpStrategy::Auto,
        None => GkpStrategy::None,
    }
}

fn from_c_strategy(s: GkpStrategy) -> Option<AmplificationStrategy> {
    Some(match s {
        GkpStrategy::PerStepPreamp => AmplificationStrategy::PerStepPreamp,
        GkpStrategy::MeanAdjusted => AmplificationStrategy::MeanAdjusted,
        GkpStrategy::MeanAdjustedArtificialLoss => AmplificationStrategy::MeanAdjustedWithArtificialLoss,
        GkpStrategy::Cc => AmplificationStrategy::CcAmplification,
        GkpStrategy::Auto => AmplificationStrategy::Auto,
        GkpStrategy::None => return None,
    })
}

fn to_c_model(m: GkpPauliModel) -> PauliModel {
    match m {
        GkpPauliModel::Simplified => PauliModel::Simplified,
        GkpPauliModel::Striped => PauliModel::Striped,
    }
}

impl From<&RateResult> for GkpRateResult {
    fn from(r: &RateResult) -> Self {
        Self {
            length_km: r.length_km,
            n: r.n,
            strategy: to_c_strategy(r.strategy),
            p: r.p,
            alpha: r.alpha,
            sigma_add_sq: r.sigma_add_sq,
            sigma_tot_sq: r.sigma_tot_sq,
            p_pauli: r.p_pauli,
            qber: r.qber,
            r: r.r,
            raw_rate: r.raw_rate,
            s: r.s,
            s_hz: r.s_hz,
        }
    }
}

/// Creates a configuration with `gamma_sq = 0`, the `Auto` strategy and
/// default evaluation options.
///
/// # Safety
/// `out` must be valid for writing one pointer. The handle written there must
/// be released with [`gkp_config_free`].
#[no_mangle]
pub unsafe extern "C" fn gkp_config_new(
    length_km: f64,
    segments: u64,
    p_link: f64,
    delta_sq: f64,
    t_coh: f64,
    out: *mut *mut GkpConfig,
) -> GkpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = RepeaterConfig::new(length_km, segments, p_link, delta_sq, t_coh);
        lib(config.validate())?;
        let handle = Box::new(GkpConfig {
            config,
            options: RateOptions::default(),
        });
        out.write(Box::into_raw(handle));
        Ok(())
    })
}

/// # Safety
/// `config` is null or a handle from [`gkp_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gkp_config_free(config: *mut GkpConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` is a live handle from [`gkp_config_new`].
#[no_mangle]
pub unsafe extern "C" fn gkp_config_set_gamma_sq(config: *mut GkpConfig, gamma_sq: f64) -> GkpStatus {
    guard(|| {
        let handle = config.as_mut().ok_or_else(|| null("config"))?;
        let updated = handle.config.clone().with_gamma_sq(gamma_sq);
        lib(updated.validate())?;
        handle.config = updated;
        Ok(())
    })
}

/// # Safety
/// `config` is a live handle from [`gkp_config_new`].
#[no_mangle]
pub unsafe extern "C" fn gkp_config_set_strategy(config: *mut GkpConfig, strategy: GkpStrategy) -> GkpStatus {
    guard(|| {
        let handle = config.as_mut().ok_or_else(|| null("config"))?;
        let s = from_c_strategy(strategy).ok_or_else(|| {
            (
                GkpStatus::InvalidArgument,
                "strategy None cannot be configured".to_string(),
            )
        })?;
        handle.config.strategy = s;
        Ok(())
    })
}

/// # Safety
/// `config` is a live handle from [`gkp_config_new`].
#[no_mangle]
pub unsafe extern "C" fn gkp_config_set_options(
    config: *mut GkpConfig,
    pauli_model: GkpPauliModel,
    expectation: GkpExpectation,
    qber_threshold: GkpQberThreshold,
) -> GkpStatus {
    guard(|| {
        let handle = config.as_mut().ok_or_else(|| null("config"))?;
        handle.options = RateOptions {
            pauli_model: to_c_model(pauli_model),
            expectation: match expectation {
                GkpExpectation::ClosedForm => ExpectationMode::ClosedForm,
                GkpExpectation::Numeric => ExpectationMode::Numeric,
            },
            qber_threshold: match qber_threshold {
                GkpQberThreshold::Working => QberThreshold::Working,
                GkpQberThreshold::ExactRoot => QberThreshold::ExactRoot,
            },
            constants: PhysicalConstants::FIBER,
        };
        Ok(())
    })
}

/// Closed-form key rate.
///
/// # Safety
/// `config` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_analytic_rate(config: *const GkpConfig, out: *mut GkpRateResult) -> GkpStatus {
    guard(|| {
        let h = deref(config, "config")?;
        let r = lib(rates::analytic_rate_with(&h.config, &h.options))?;
        write_out(out, GkpRateResult::from(&r), "out")
    })
}

/// Error probability averaged over the first `truncation` waiting times.
///
/// # Safety
/// `config` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_numeric_average(
    config: *const GkpConfig,
    truncation: u64,
    out: *mut GkpNumericAverage,
) -> GkpStatus {
    guard(|| {
        let h = deref(config, "config")?;
        let (s, avg) = lib(montecarlo::numeric_rate(&h.config, truncation, &h.options))?;
        let value = GkpNumericAverage {
            strategy: to_c_strategy(Some(avg.strategy)),
            sigma_add_sq: avg.sigma_add_sq,
            p_pauli: avg.p_pauli,
            qber: avg.qber,
            tail_mass: avg.tail_mass,
            tail_warning: avg.tail_warning,
            s,
        };
        write_out(out, value, "out")
    })
}

/// Monte Carlo chain simulation. `workers = 0` uses all cores; results do
/// not depend on it.
///
/// # Safety
/// `config` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_simulate(
    config: *const GkpConfig,
    trials: u64,
    inner_iterations: u64,
    seed: u64,
    workers: u32,
    out: *mut GkpSimulationResult,
) -> GkpStatus {
    guard(|| {
        let h = deref(config, "config")?;
        let sim = SimulationOptions {
            trials,
            inner_iterations,
            seed,
            workers: (workers > 0).then_some(workers as usize),
        };
        let stats = lib(montecarlo::simulate_chain_with(
            &h.config,
            &sim,
            &h.options.constants,
            h.options.pauli_model,
        ))?;
        let (s, s_stderr) = lib(stats.secret_rate(h.options.qber_threshold.value()))?;
        let value = GkpSimulationResult {
            qber_mean: stats.qber_mean,
            qber_stderr: stats.qber_stderr,
            mean_completion_steps: stats.mean_completion_steps,
            completion_stderr: stats.completion_stderr,
            sigma_add_mean: stats.per_swap_variance.mean,
            sigma_add_variance: stats.per_swap_variance.variance,
            s,
            s_stderr,
        };
        write_out(out, value, "out")
    })
}

/// Correctionless baseline with depolarization `mu` and the default noise
/// mapping. Fields that do not apply are NaN.
///
/// # Safety
/// `config` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_correctionless_rate(
    config: *const GkpConfig,
    mu: f64,
    out: *mut GkpRateResult,
) -> GkpStatus {
    guard(|| {
        let h = deref(config, "config")?;
        let r = lib(rates::correctionless_rate(
            &h.config,
            mu,
            &NoiseMapping::default(),
            &h.options,
        ))?;
        write_out(out, GkpRateResult::from(&r), "out")
    })
}

/// Segment count in `[n_min, n_max]` maximizing the rate in Hz. The
/// configured segment count is ignored.
///
/// # Safety
/// `config` is a live handle; `n_opt` and `out` are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_optimize_n(
    config: *const GkpConfig,
    n_min: u64,
    n_max: u64,
    n_opt: *mut u64,
    out: *mut GkpRateResult,
) -> GkpStatus {
    guard(|| {
        let h = deref(config, "config")?;
        if n_opt.is_null() {
            return Err(null("n_opt"));
        }
        let opt = lib(rates::optimize_n(&h.config, n_min..=n_max, &h.options))?;
        write_out(out, GkpRateResult::from(&opt.result), "out")?;
        n_opt.write(opt.n);
        Ok(())
    })
}

/// Segment length below which CC amplification beats per-step
/// preamplification. Returns [`GkpStatus::NoCrossing`] when there is none.
///
/// # Safety
/// `out_km` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_cc_threshold_km(p_link: f64, t_coh: f64, out_km: *mut f64) -> GkpStatus {
    guard(
        || match lib(cc_threshold_l0(p_link, t_coh, &PhysicalConstants::FIBER))? {
            CcThreshold::At(km) => write_out(out_km, km, "out_km"),
            CcThreshold::NoCrossing => Err((GkpStatus::NoCrossing, "no crossing inside the search bracket".into())),
        },
    )
}

/// Largest operation-noise variance keeping the QBER at the working threshold.
///
/// # Safety
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_gamma_threshold(n: u64, delta_sq: f64, out: *mut f64) -> GkpStatus {
    guard(|| write_out(out, lib(gkpcode::gamma_threshold(n, delta_sq))?, "out"))
}

/// # Safety
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_pauli_error_prob(sigma_tot_sq: f64, model: GkpPauliModel, out: *mut f64) -> GkpStatus {
    guard(|| {
        write_out(
            out,
            lib(gkpcode::pauli_error_prob(sigma_tot_sq, to_c_model(model)))?,
            "out",
        )
    })
}

/// # Safety
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_qber(n: u64, p_pauli: f64, out: *mut f64) -> GkpStatus {
    guard(|| write_out(out, lib(gkpcode::qber(n, p_pauli))?, "out"))
}

/// # Safety
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gkp_plob_bound(length_km: f64, out: *mut f64) -> GkpStatus {
    guard(|| write_out(out, lib(rates::plob_bound(length_km))?, "out"))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn gkp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gkp_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}
