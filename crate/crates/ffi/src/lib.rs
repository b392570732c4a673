//! C ABI.
//!
//! Every fallible entry point returns a [`BrbStatus`] and writes its result
//! through an out-pointer. On failure [`brb_last_error`] describes what went
//! wrong on the calling thread. Handles are opaque and released with their
//! `_free` function; strings returned by the library are released with
//! [`brb_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::PathBuf;
use std::ptr;

use brb::cli::io;
use brb::models::{self, CorrelationClass, FitReport, ModelFamily, SelectOptions};
use brb::noise::{Correlation, NoiseKind, NoiseSpec};
use brb::protocol::{DrivePhysics, ExperimentPlan};
use brb::readout::{self, Shots};
use brb::sim::{self, Acquisition, EstimatorKind, FidelityDataset, RunOptions, SimModel};
use brb::{BrbError, Complex64};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrbStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    BudgetExceeded = 3,
    FitFailure = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrbNoiseKind {
    Heating = 0,
    Dephasing = 1,
    Amplitude = 2,
    PhaseJitter = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrbCorrelation {
    Markovian = 0,
    /// Constant over `correlation_steps` steps.
    Steps = 1,
    Dc = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrbModel {
    Exact = 0,
    FirstOrder = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrbEstimator {
    Fidelity = 0,
    Readout = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrbFamily {
    None = 0,
    Heating = 1,
    Dephasing = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrbCorrelationClass {
    Unclassified = 0,
    Markovian = 1,
    Dc = 2,
    Indeterminate = 3,
}

/// One dataset row. `shots` is -1 for the exact fidelity estimator, 0 for
/// readout without shot noise, else the shot count.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrbRecord {
    pub length: f64,
    pub circuit_index: usize,
    pub fidelity_mean: f64,
    pub fidelity_stderr: f64,
    pub noise_averages: usize,
    pub shots: i64,
}

/// Model selection settings. `window <= 0` fits every length,
/// `spam_scale <= 0` disables the explicit scale and `rabi_rate <= 0`
/// skips the physical parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrbSelectOptions {
    pub window: f64,
    pub weighted: bool,
    pub spam_scale: f64,
    pub rabi_rate: f64,
    pub step_magnitude: f64,
}

pub struct BrbPlan(ExperimentPlan);
pub struct BrbNoise(NoiseSpec);
pub struct BrbDataset(FidelityDataset);
pub struct BrbFitReport(FitReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Fail {
    Brb(BrbError),
    Null(&'static str),
}

impl From<BrbError> for Fail {
    fn from(e: BrbError) -> Self {
        Fail::Brb(e)
    }
}

fn status_of(e: &BrbError) -> BrbStatus {
    match e {
        BrbError::InvalidArgument(_) => BrbStatus::InvalidArgument,
        BrbError::Config(_) | BrbError::Schema { .. } => BrbStatus::Config,
        BrbError::BudgetExceeded { .. } => BrbStatus::BudgetExceeded,
        BrbError::FitFailure(_) => BrbStatus::FitFailure,
        BrbError::Io(_) | BrbError::Json(_) => BrbStatus::Io,
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> BrbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BrbStatus::Ok,
        Ok(Err(Fail::Brb(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BrbStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            BrbStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| BrbError::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn noise_kind(k: BrbNoiseKind) -> NoiseKind {
    match k {
        BrbNoiseKind::Heating => NoiseKind::Heating,
        BrbNoiseKind::Dephasing => NoiseKind::Dephasing,
        BrbNoiseKind::Amplitude => NoiseKind::Amplitude,
        BrbNoiseKind::PhaseJitter => NoiseKind::PhaseJitter,
    }
}

fn family(f: ModelFamily) -> BrbFamily {
    match f {
        ModelFamily::Heating => BrbFamily::Heating,
        ModelFamily::Dephasing => BrbFamily::Dephasing,
    }
}

fn into_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn brb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn brb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Mean noise-averaged fidelity of the analytical model at length `l`.
///
/// # Safety
/// `out` must be valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_mean_model(kind: BrbNoiseKind, eta: f64, l: f64, out: *mut f64) -> BrbStatus {
    guard(|| {
        if !(eta >= 0.0 && l >= 0.0) {
            return Err(BrbError::InvalidArgument(format!("η and L must be non-negative, got {eta}, {l}")).into());
        }
        unsafe { put(out, models::mean_model(noise_kind(kind), eta, l), "out") }
    })
}

/// Dephasing variance `C·E(1-E)²/(2-E)`.
///
/// # Safety
/// `out` must be valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_variance_model_dephasing(e: f64, c: f64, out: *mut f64) -> BrbStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&e) || !(c > 0.0 && c <= 1.0) {
            return Err(BrbError::InvalidArgument(format!("need E in [0, 1] and C in (0, 1], got {e}, {c}")).into());
        }
        unsafe { put(out, models::variance_model_dephasing(e, c), "out") }
    })
}

/// Decay rate η of a noise process under a drive.
///
/// # Safety
/// `noise` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_eta(
    noise: *const BrbNoise,
    rabi_rate: f64,
    step_magnitude: f64,
    out: *mut f64,
) -> BrbStatus {
    guard(|| {
        let noise = unsafe { get(noise, "noise") }?;
        let drive = DrivePhysics::new(rabi_rate, step_magnitude)?;
        let eta = models::eta_for(&noise.0, &drive)?;
        unsafe { put(out, eta, "out") }
    })
}

/// Red-sideband fidelity estimate of the coherent state `re + i·im`.
///
/// # Safety
/// `out` must be valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_ideal_probability(re: f64, im: f64, fock_cutoff: usize, out: *mut f64) -> BrbStatus {
    guard(|| {
        let p = readout::ideal_probability(Complex64::new(re, im), fock_cutoff)?;
        unsafe { put(out, p, "out") }
    })
}

/// Creates an experiment plan over step counts `steps[0..n_steps]`.
///
/// # Safety
/// `steps` must point to `n_steps` readable values and `out` be valid for
/// writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_plan_new(
    rabi_rate: f64,
    step_magnitude: f64,
    steps: *const usize,
    n_steps: usize,
    randomizations: usize,
    noise_averages: usize,
    seed: u64,
    out: *mut *mut BrbPlan,
) -> BrbStatus {
    guard(|| {
        if steps.is_null() && n_steps > 0 {
            return Err(Fail::Null("steps"));
        }
        let steps = if n_steps == 0 { Vec::new() } else { unsafe { std::slice::from_raw_parts(steps, n_steps) }.to_vec() };
        let drive = DrivePhysics::new(rabi_rate, step_magnitude)?;
        let plan = ExperimentPlan::new(drive, steps, randomizations, noise_averages, seed)?;
        unsafe { put(out, Box::into_raw(Box::new(BrbPlan(plan))), "out") }
    })
}

/// Sets the readout shot count; 0 means no shot noise.
///
/// # Safety
/// `plan` must be a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_plan_set_shots(plan: *mut BrbPlan, shots: u32) -> BrbStatus {
    guard(|| {
        let plan = unsafe { plan.as_mut() }.ok_or(Fail::Null("plan"))?;
        plan.0.shots = if shots == 0 { Shots::Oracle } else { Shots::Count(shots) };
        Ok(())
    })
}

/// Number of single-step evaluations a run of `plan` performs.
///
/// # Safety
/// `plan` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_plan_cost(plan: *const BrbPlan, out: *mut u64) -> BrbStatus {
    guard(|| {
        let plan = unsafe { get(plan, "plan") }?;
        unsafe { put(out, plan.0.cost(), "out") }
    })
}

/// # Safety
/// `plan` must come from [`brb_plan_new`] and not have been freed. Null is
/// ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_plan_free(plan: *mut BrbPlan) {
    if !plan.is_null() {
        drop(unsafe { Box::from_raw(plan) });
    }
}

/// Creates a noise process. Heating takes the per-step kick size as
/// `sigma`; `correlation_steps` is read only for [`BrbCorrelation::Steps`].
///
/// # Safety
/// `out` must be valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_noise_new(
    kind: BrbNoiseKind,
    sigma: f64,
    correlation: BrbCorrelation,
    correlation_steps: usize,
    out: *mut *mut BrbNoise,
) -> BrbStatus {
    guard(|| {
        let corr = match correlation {
            BrbCorrelation::Markovian => Correlation::Markovian,
            BrbCorrelation::Steps => Correlation::Steps(correlation_steps),
            BrbCorrelation::Dc => Correlation::Dc,
        };
        let spec = NoiseSpec::new(noise_kind(kind), sigma, corr)?;
        unsafe { put(out, Box::into_raw(Box::new(BrbNoise(spec))), "out") }
    })
}

/// # Safety
/// `noise` must come from [`brb_noise_new`] and not have been freed. Null is
/// ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_noise_free(noise: *mut BrbNoise) {
    if !noise.is_null() {
        drop(unsafe { Box::from_raw(noise) });
    }
}

/// Runs the benchmark. A `budget` of 0 uses the default budget.
///
/// # Safety
/// `plan` and `noise` must be live handles and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_run(
    plan: *const BrbPlan,
    noise: *const BrbNoise,
    model: BrbModel,
    estimator: BrbEstimator,
    budget: u64,
    out: *mut *mut BrbDataset,
) -> BrbStatus {
    guard(|| {
        let plan = unsafe { get(plan, "plan") }?;
        let noise = unsafe { get(noise, "noise") }?;
        let mut opts = RunOptions::default()
            .with_model(match model {
                BrbModel::Exact => SimModel::Exact,
                BrbModel::FirstOrder => SimModel::FirstOrder,
            })
            .with_estimator(match estimator {
                BrbEstimator::Fidelity => EstimatorKind::Fidelity,
                BrbEstimator::Readout => EstimatorKind::Readout,
            });
        if budget > 0 {
            opts = opts.with_budget(budget);
        }
        let ds = sim::run_brb(&plan.0, &noise.0, &opts)?;
        unsafe { put(out, Box::into_raw(Box::new(BrbDataset(ds))), "out") }
    })
}

/// # Safety
/// `ds` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_dataset_len(ds: *const BrbDataset, out: *mut usize) -> BrbStatus {
    guard(|| {
        let ds = unsafe { get(ds, "dataset") }?;
        unsafe { put(out, ds.0.len(), "out") }
    })
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `ds` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_dataset_row(ds: *const BrbDataset, index: usize, out: *mut BrbRecord) -> BrbStatus {
    guard(|| {
        let ds = unsafe { get(ds, "dataset") }?;
        let r = ds.0.records.get(index).ok_or_else(|| {
            BrbError::InvalidArgument(format!("row {index} out of range for {} rows", ds.0.len()))
        })?;
        let shots = match r.acquisition {
            Acquisition::Exact => -1,
            Acquisition::Readout(Shots::Oracle) => 0,
            Acquisition::Readout(Shots::Count(n)) => i64::from(n),
        };
        let rec = BrbRecord {
            length: r.length,
            circuit_index: r.circuit_index,
            fidelity_mean: r.fidelity_mean,
            fidelity_stderr: r.fidelity_stderr,
            noise_averages: r.noise_averages,
            shots,
        };
        unsafe { put(out, rec, "out") }
    })
}

/// Reads a dataset CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_dataset_read_csv(path: *const c_char, out: *mut *mut BrbDataset) -> BrbStatus {
    guard(|| {
        let path = unsafe { path_arg(path) }?;
        let ds = io::read_dataset_file(&path)?;
        unsafe { put(out, Box::into_raw(Box::new(BrbDataset(ds))), "out") }
    })
}

/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_dataset_write_csv(ds: *const BrbDataset, path: *const c_char) -> BrbStatus {
    guard(|| {
        let ds = unsafe { get(ds, "dataset") }?;
        let path = unsafe { path_arg(path) }?;
        io::write_dataset_file(&ds.0, &path)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library and not have been freed. Null is
/// ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_dataset_free(ds: *mut BrbDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Fills `out` with the default selection settings.
///
/// # Safety
/// `out` must be valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_select_options_default(out: *mut BrbSelectOptions) -> BrbStatus {
    guard(|| {
        let d = SelectOptions::default();
        let o = BrbSelectOptions {
            window: d.window.unwrap_or(0.0),
            weighted: d.weighted,
            spam_scale: 0.0,
            rabi_rate: 0.0,
            step_magnitude: 0.0,
        };
        unsafe { put(out, o, "out") }
    })
}

/// Fits both decay families and selects one. `options` may be null for
/// the defaults.
///
/// # Safety
/// `ds` must be a live handle, `options` null or readable and `out` valid
/// for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_select_model(
    ds: *const BrbDataset,
    options: *const BrbSelectOptions,
    out: *mut *mut BrbFitReport,
) -> BrbStatus {
    guard(|| {
        let ds = unsafe { get(ds, "dataset") }?;
        let mut opts = SelectOptions::default();
        if let Some(o) = unsafe { options.as_ref() } {
            opts.window = (o.window > 0.0).then_some(o.window);
            opts.weighted = o.weighted;
            opts.spam_scale = (o.spam_scale > 0.0).then_some(o.spam_scale);
            opts.drive = if o.rabi_rate > 0.0 { Some(DrivePhysics::new(o.rabi_rate, o.step_magnitude)?) } else { None };
        }
        let report = models::select_model(&ds.0, &opts)?;
        unsafe { put(out, Box::into_raw(Box::new(BrbFitReport(report))), "out") }
    })
}

/// Selected family; [`BrbFamily::None`] for data without decay.
///
/// # Safety
/// `report` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_report_selected(report: *const BrbFitReport, out: *mut BrbFamily) -> BrbStatus {
    guard(|| {
        let r = unsafe { get(report, "report") }?;
        unsafe { put(out, r.0.selected.map_or(BrbFamily::None, family), "out") }
    })
}

/// η̂, its standard error and the AIC of one candidate fit. Any output
/// pointer may be null.
///
/// # Safety
/// `report` must be a live handle; non-null outputs must be valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_report_fit(
    report: *const BrbFitReport,
    which: BrbFamily,
    eta: *mut f64,
    eta_stderr: *mut f64,
    aic: *mut f64,
) -> BrbStatus {
    guard(|| {
        let r = unsafe { get(report, "report") }?;
        let fam = match which {
            BrbFamily::Heating => ModelFamily::Heating,
            BrbFamily::Dephasing => ModelFamily::Dephasing,
            BrbFamily::None => return Err(BrbError::InvalidArgument("choose a fitted family".into()).into()),
        };
        let c = r
            .0
            .candidate(fam)
            .ok_or_else(|| BrbError::FitFailure(format!("no {} fit in report", fam.as_str())))?;
        for (p, v) in [(eta, c.eta), (eta_stderr, c.eta_stderr), (aic, c.aic)] {
            if !p.is_null() {
                unsafe { p.write(v) };
            }
        }
        Ok(())
    })
}

/// Correlation class and Ĉ (NaN when not estimated).
///
/// # Safety
/// `report` must be a live handle and both outputs valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_report_correlation(
    report: *const BrbFitReport,
    class: *mut BrbCorrelationClass,
    c_hat: *mut f64,
) -> BrbStatus {
    guard(|| {
        let r = unsafe { get(report, "report") }?;
        let (k, c) = match &r.0.correlation {
            None => (BrbCorrelationClass::Unclassified, f64::NAN),
            Some(f) => (
                match f.class {
                    CorrelationClass::Markovian => BrbCorrelationClass::Markovian,
                    CorrelationClass::Dc => BrbCorrelationClass::Dc,
                    CorrelationClass::Indeterminate => BrbCorrelationClass::Indeterminate,
                },
                f.c_hat.unwrap_or(f64::NAN),
            ),
        };
        unsafe { put(class, k, "class") }?;
        unsafe { put(c_hat, c, "c_hat") }
    })
}

/// Full report as JSON; release with [`brb_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` valid for writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_report_to_json(report: *const BrbFitReport, out: *mut *mut c_char) -> BrbStatus {
    guard(|| {
        let r = unsafe { get(report, "report") }?;
        let text = serde_json::to_string_pretty(&r.0).map_err(BrbError::from)?;
        unsafe { put(out, into_string(text), "out") }
    })
}

/// # Safety
/// `report` must come from [`brb_select_model`] and not have been freed.
/// Null is ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn brb_report_free(report: *mut BrbFitReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}
