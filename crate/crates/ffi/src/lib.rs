//! C interface to `mte-core`.
//!
//! Samples and estimates are opaque handles created and destroyed through
//! this interface. Every fallible call returns an [`MteStatus`]; on failure
//! [`mte_last_error`] describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mte_core::data::{load_csv, ColumnConfig, Sample};
use mte_core::output::Summary;
use mte_core::pipeline::{run_pipeline, EstimationConfig, Estimates};
use mte_core::simulate::{generate, DgpSpec};
use mte_core::MteError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    EstimationError = 4,
    Panic = 5,
}

/// A validated sample.
pub struct MteSample(Sample);

/// The outcome of one pipeline run.
pub struct MteEstimate(Estimates);

/// Causal parameters of one procedure at the evaluation profile.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MteEffects {
    pub ate: f64,
    pub tt: f64,
    pub tut: f64,
    pub late: f64,
    pub pi_x: f64,
    pub late_lo: f64,
    pub late_hi: f64,
    /// Nonzero when a parameter needed values outside the score grid.
    pub extrapolated: u8,
}

/// Which estimate to read from an [`MteEstimate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MteProcedure {
    Separate = 0,
    Liv = 1,
}

/// Which coefficient vector to read.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MteCoefficients {
    Untreated = 0,
    Treated = 1,
    Difference = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &MteError) -> MteStatus {
    use MteError::*;
    match e {
        Config(_) | InvalidArgument(_) | Json(_) => MteStatus::InvalidArgument,
        Io(_) | Csv(_) | ColumnNotFound(_) | NonBinaryTreatment { .. } | EmptySample(_) | InvalidSample(_) => {
            MteStatus::DataError
        }
        _ => MteStatus::EstimationError,
    }
}

fn fail(status: MteStatus, msg: impl Into<String>) -> MteStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (MteStatus, String)>) -> MteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MteStatus::Ok
        }
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(MteStatus::Panic, "internal panic"),
    }
}

fn core<T>(r: mte_core::Result<T>) -> Result<T, (MteStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MteStatus, String) {
    (MteStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MteStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MteStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (MteStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mte_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a sample from row-major arrays. `d` holds 0 or 1; `x_cont` is
/// `n × n_cont` and `x_disc` is `n × n_disc`. Either may be null when its
/// width is zero.
///
/// # Safety
/// Every non-null pointer must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn mte_sample_new(
    y: *const f64,
    d: *const u8,
    n: usize,
    x_cont: *const f64,
    n_cont: usize,
    x_disc: *const i64,
    n_disc: usize,
    out: *mut *mut MteSample,
) -> MteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let y = slice_arg(y, n, "y")?.to_vec();
        let d_raw = slice_arg(d, n, "d")?;
        if let Some(i) = d_raw.iter().position(|&v| v > 1) {
            return Err((MteStatus::DataError, format!("treatment at row {i} is {}, expected 0 or 1", d_raw[i])));
        }
        let d = d_raw.iter().map(|&v| v == 1).collect();
        let xc = slice_arg(x_cont, n * n_cont, "x_cont")?.to_vec();
        let xd = slice_arg(x_disc, n * n_disc, "x_disc")?.to_vec();
        let sample = core(Sample::from_parts(y, d, xc, n_cont, xd, n_disc))?;
        put(out, MteSample(sample));
        Ok(())
    })
}

/// Loads a CSV file. `columns_json` is a column mapping such as
/// `{"outcome": "y", "treatment": "d", "continuous": ["x"]}`.
///
/// # Safety
/// `path` and `columns_json` must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mte_sample_from_csv(
    path: *const c_char,
    columns_json: *const c_char,
    out: *mut *mut MteSample,
) -> MteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let columns: ColumnConfig = core(serde_json::from_str(str_arg(columns_json, "columns_json")?).map_err(Into::into))?;
        let (sample, _) = core(load_csv(Path::new(path), &columns))?;
        put(out, MteSample(sample));
        Ok(())
    })
}

/// Draws a sample from a built-in simulation design.
///
/// # Safety
/// `preset` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mte_simulate(
    preset: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut MteSample,
) -> MteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = core(DgpSpec::preset(str_arg(preset, "preset")?, n, seed))?;
        let (sample, _) = core(generate(&spec))?;
        put(out, MteSample(sample));
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mte_sample_len(sample: *const MteSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `sample` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mte_sample_free(sample: *mut MteSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Runs the estimation pipeline. `config_json` is an estimation
/// configuration in JSON, or null for the defaults.
///
/// # Safety
/// `sample` must be a live handle; `config_json` null or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate(
    sample: *const MteSample,
    config_json: *const c_char,
    out: *mut *mut MteEstimate,
) -> MteStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sample = sample.as_ref().ok_or_else(|| null("sample"))?;
        let config: EstimationConfig = if config_json.is_null() {
            EstimationConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| (MteStatus::InvalidArgument, format!("invalid configuration: {e}")))?
        };
        let est = core(run_pipeline(&sample.0, &config))?;
        put(out, MteEstimate(est));
        Ok(())
    })
}

/// # Safety
/// `estimate` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate_free(estimate: *mut MteEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

fn not_run(procedure: MteProcedure) -> (MteStatus, String) {
    (MteStatus::InvalidArgument, format!("procedure {procedure:?} was not run"))
}

/// Causal parameters of one procedure.
///
/// # Safety
/// `estimate` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate_effects(
    estimate: *const MteEstimate,
    procedure: MteProcedure,
    out: *mut MteEffects,
) -> MteStatus {
    guard(|| {
        let est = &estimate.as_ref().ok_or_else(|| null("estimate"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = match procedure {
            MteProcedure::Separate => est.separate.as_ref().map(|s| &s.summary),
            MteProcedure::Liv => est.liv.as_ref().map(|l| &l.summary),
        }
        .ok_or_else(|| not_run(procedure))?;
        *out = MteEffects {
            ate: s.ate,
            tt: s.tt,
            tut: s.tut,
            late: s.late,
            pi_x: s.pi_x,
            late_lo: s.v1,
            late_hi: s.v2,
            extrapolated: s.extrapolated as u8,
        };
        Ok(())
    })
}

/// Number of points of the MTE grid.
///
/// # Safety
/// `estimate` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate_grid_len(estimate: *const MteEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.0.grid.len())
}

/// Number of coefficients per arm (the covariate count).
///
/// # Safety
/// `estimate` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate_dim(estimate: *const MteEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.0.names.len())
}

/// Copies the MTE curve into `v` and `values`, each of length `len`, which
/// must equal [`mte_estimate_grid_len`].
///
/// # Safety
/// `v` and `values` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate_mte_curve(
    estimate: *const MteEstimate,
    procedure: MteProcedure,
    v: *mut f64,
    values: *mut f64,
    len: usize,
) -> MteStatus {
    guard(|| {
        let est = &estimate.as_ref().ok_or_else(|| null("estimate"))?.0;
        let curve = match procedure {
            MteProcedure::Separate => est.separate.as_ref().map(|s| &s.mte),
            MteProcedure::Liv => est.liv.as_ref().map(|l| &l.mte),
        }
        .ok_or_else(|| not_run(procedure))?;
        if len != curve.v.len() {
            return Err((MteStatus::InvalidArgument, format!("buffer length {len}, grid has {}", curve.v.len())));
        }
        if v.is_null() || values.is_null() {
            return Err(null("output buffer"));
        }
        std::slice::from_raw_parts_mut(v, len).copy_from_slice(&curve.v);
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(&curve.values);
        Ok(())
    })
}

/// Copies one coefficient vector into `out` of length `len`, which must
/// equal [`mte_estimate_dim`].
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate_coefficients(
    estimate: *const MteEstimate,
    procedure: MteProcedure,
    which: MteCoefficients,
    out: *mut f64,
    len: usize,
) -> MteStatus {
    guard(|| {
        let est = &estimate.as_ref().ok_or_else(|| null("estimate"))?.0;
        let (beta0, delta) = match procedure {
            MteProcedure::Separate => est.separate.as_ref().map(|s| (s.untreated.beta.clone(), s.delta())),
            MteProcedure::Liv => est.liv.as_ref().map(|l| (l.fit.beta0.clone(), l.fit.delta.clone())),
        }
        .ok_or_else(|| not_run(procedure))?;
        let values: Vec<f64> = match which {
            MteCoefficients::Untreated => beta0,
            MteCoefficients::Difference => delta,
            MteCoefficients::Treated => beta0.iter().zip(&delta).map(|(b, d)| b + d).collect(),
        };
        if len != values.len() {
            return Err((MteStatus::InvalidArgument, format!("buffer length {len}, {} coefficients", values.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&values);
        Ok(())
    })
}

/// Coefficients and causal parameters as a JSON document, in the layout of
/// the command-line `summary.json`. Release with [`mte_string_free`].
///
/// # Safety
/// `estimate` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mte_estimate_summary_json(estimate: *const MteEstimate, out: *mut *mut c_char) -> MteStatus {
    guard(|| {
        let est = &estimate.as_ref().ok_or_else(|| null("estimate"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = core(serde_json::to_string(&Summary::new(est, None)).map_err(Into::into))?;
        *out = CString::new(text).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mte_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
