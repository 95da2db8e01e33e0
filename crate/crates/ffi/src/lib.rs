//! C interface to `driftkf`.
//!
//! Signals and identification traces are opaque handles owned by the
//! caller and released with their `_free` function. Every fallible call
//! returns a [`DkfStatus`]; the message of the most recent failure on the
//! calling thread is available from [`dkf_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use driftkf::enkf::{init_ensemble, DEFAULT_ENSEMBLE_SIZE, DEFAULT_SUBSET_FRACTION};
use driftkf::harness::{run_method, Benchmark, BenchmarkSpec, Method};
use driftkf::mill::{kienzle_force, CoefficientBounds, CoefficientSet};
use driftkf::rng::{derive_seed, Stream};
use driftkf::signal::{CaseKind, SignalSample};
use driftkf::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Diverged = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkfCase {
    Static = 0,
    Ascending = 1,
    Alternating = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkfMethod {
    Rls = 0,
    Enkf = 1,
    EnkfStar = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DkfCoefficients {
    pub kt: f64,
    pub mt: f64,
    pub kr: f64,
    pub mr: f64,
}

/// One corrected sample. Forces in N, chip thickness in mm.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DkfSample {
    pub index: usize,
    pub spindle_angle: f64,
    pub h_sum: f64,
    pub ft_clean: f64,
    pub fr_clean: f64,
    pub ft_noisy: f64,
    pub fr_noisy: f64,
    pub truth: DkfCoefficients,
}

/// Simulated, noisy and ploughing-filtered force signal.
pub struct DkfSignal {
    benchmark: Benchmark,
}

/// Coefficient estimates and force errors, one entry per corrected sample.
pub struct DkfTrace {
    coefficients: Vec<CoefficientSet>,
    error_t: Vec<f64>,
    error_r: Vec<f64>,
    divergence: Option<usize>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: DkfStatus, msg: impl Into<String>) -> DkfStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> DkfStatus {
    match e {
        Error::Divergence { .. } | Error::SingularInnovation => DkfStatus::Diverged,
        Error::Io(_) => DkfStatus::Internal,
        _ => DkfStatus::InvalidArgument,
    }
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> DkfStatus) -> DkfStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(DkfStatus::Internal, "internal panic"))
}

impl From<DkfCase> for CaseKind {
    fn from(c: DkfCase) -> Self {
        match c {
            DkfCase::Static => CaseKind::Static,
            DkfCase::Ascending => CaseKind::Ascending,
            DkfCase::Alternating => CaseKind::Alternating,
        }
    }
}

impl From<CoefficientSet> for DkfCoefficients {
    fn from(c: CoefficientSet) -> Self {
        Self {
            kt: c.kt,
            mt: c.mt,
            kr: c.kr,
            mr: c.mr,
        }
    }
}

impl From<&SignalSample> for DkfSample {
    fn from(s: &SignalSample) -> Self {
        Self {
            index: s.index,
            spindle_angle: s.spindle_angle,
            h_sum: s.h_sum,
            ft_clean: s.ft_clean,
            fr_clean: s.fr_clean,
            ft_noisy: s.ft_noisy,
            fr_noisy: s.fr_noisy,
            truth: s.true_coeffs.into(),
        }
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dkf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dkf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Kienzle force on one disk of width `b` at chip thickness `h`.
///
/// # Safety
/// `coeffs`, `ft` and `fr` must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn dkf_kienzle_force(
    coeffs: *const DkfCoefficients,
    b: f64,
    h: f64,
    ft: *mut f64,
    fr: *mut f64,
) -> DkfStatus {
    if coeffs.is_null() || ft.is_null() || fr.is_null() {
        return fail(DkfStatus::NullPointer, "null argument");
    }
    let c = &*coeffs;
    match kienzle_force(&CoefficientSet::new(c.kt, c.mt, c.kr, c.mr), b, h) {
        Ok(f) => {
            *ft = f.tangential;
            *fr = f.radial;
            DkfStatus::Ok
        }
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

/// Simulates the reference side-milling benchmark for `n_rev` revolutions,
/// adds noise at the linear ratio `snr` and drops ploughing samples.
///
/// # Safety
/// `out` must be a valid pointer or null. On success `*out` receives a
/// handle to release with [`dkf_signal_free`].
#[no_mangle]
pub unsafe extern "C" fn dkf_signal_simulate(
    case_kind: DkfCase,
    n_rev: u32,
    snr: f64,
    seed: u64,
    out: *mut *mut DkfSignal,
) -> DkfStatus {
    if out.is_null() {
        return fail(DkfStatus::NullPointer, "null output handle");
    }
    *out = ptr::null_mut();
    guard(|| {
        let mut spec = BenchmarkSpec::reference(case_kind.into());
        spec.n_rev = n_rev as usize;
        spec.snr = snr;
        match Benchmark::generate(&spec, derive_seed(seed, Stream::Noise, 0)) {
            Ok(benchmark) => {
                *out = Box::into_raw(Box::new(DkfSignal { benchmark }));
                DkfStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Number of corrected samples; 0 for a null handle.
///
/// # Safety
/// `signal` must be null or a live handle from [`dkf_signal_simulate`].
#[no_mangle]
pub unsafe extern "C" fn dkf_signal_len(signal: *const DkfSignal) -> usize {
    signal.as_ref().map_or(0, |s| s.benchmark.samples.len())
}

/// # Safety
/// `signal` must be null or a live handle; `out` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn dkf_signal_get(signal: *const DkfSignal, index: usize, out: *mut DkfSample) -> DkfStatus {
    let (Some(s), false) = (signal.as_ref(), out.is_null()) else {
        return fail(DkfStatus::NullPointer, "null argument");
    };
    match s.benchmark.samples.get(index) {
        Some(sample) => {
            *out = sample.into();
            DkfStatus::Ok
        }
        None => fail(
            DkfStatus::OutOfRange,
            format!("sample {index} out of range for {} samples", s.benchmark.samples.len()),
        ),
    }
}

/// Per-channel noise standard deviation of the signal.
///
/// # Safety
/// `signal` must be null or a live handle; `sigma_t` and `sigma_r` valid or null.
#[no_mangle]
pub unsafe extern "C" fn dkf_signal_noise(signal: *const DkfSignal, sigma_t: *mut f64, sigma_r: *mut f64) -> DkfStatus {
    let Some(s) = signal.as_ref() else {
        return fail(DkfStatus::NullPointer, "null signal");
    };
    if sigma_t.is_null() || sigma_r.is_null() {
        return fail(DkfStatus::NullPointer, "null output");
    }
    *sigma_t = s.benchmark.noise.tangential;
    *sigma_r = s.benchmark.noise.radial;
    DkfStatus::Ok
}

/// # Safety
/// `signal` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dkf_signal_free(signal: *mut DkfSignal) {
    if !signal.is_null() {
        drop(Box::from_raw(signal));
    }
}

/// Identifies the coefficients of `signal` from one initial ensemble of
/// `ensemble_size` members (0 selects the default). `step` and `lambda` are
/// only read for [`DkfMethod::EnkfStar`]. A diverged run still yields a
/// trace; check [`dkf_trace_divergence`].
///
/// # Safety
/// `signal` must be a live handle and `out` a valid pointer. On success
/// `*out` receives a handle to release with [`dkf_trace_free`].
#[no_mangle]
pub unsafe extern "C" fn dkf_identify(
    signal: *const DkfSignal,
    method: DkfMethod,
    step: u32,
    lambda: f64,
    ensemble_size: usize,
    seed: u64,
    out: *mut *mut DkfTrace,
) -> DkfStatus {
    if out.is_null() {
        return fail(DkfStatus::NullPointer, "null output handle");
    }
    *out = ptr::null_mut();
    let Some(s) = signal.as_ref() else {
        return fail(DkfStatus::NullPointer, "null signal");
    };
    let method = match method {
        DkfMethod::Rls => Method::Rls,
        DkfMethod::Enkf => Method::Enkf,
        DkfMethod::EnkfStar => Method::EnkfStar {
            step: step as usize,
            lambda,
        },
    };
    let size = if ensemble_size == 0 { DEFAULT_ENSEMBLE_SIZE } else { ensemble_size };
    guard(|| {
        let run = init_ensemble(&CoefficientBounds::X5CRNI18_10, size, derive_seed(seed, Stream::InitialEnsemble, 0))
            .and_then(|(initial, _)| {
                run_method(
                    &s.benchmark,
                    &initial,
                    method,
                    derive_seed(seed, Stream::Filter, 0),
                    DEFAULT_SUBSET_FRACTION,
                )
            });
        match run {
            Ok(r) => {
                *out = Box::into_raw(Box::new(DkfTrace {
                    coefficients: r.coefficients,
                    error_t: r.error_t,
                    error_r: r.error_r,
                    divergence: r.divergence,
                }));
                DkfStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `trace` must be null or a live handle from [`dkf_identify`].
#[no_mangle]
pub unsafe extern "C" fn dkf_trace_len(trace: *const DkfTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.coefficients.len())
}

/// Coefficient estimate and tangential/radial force error after sample `index`.
///
/// # Safety
/// `trace` must be null or a live handle. Output pointers must be valid;
/// `error_t` and `error_r` may be null when not needed.
#[no_mangle]
pub unsafe extern "C" fn dkf_trace_get(
    trace: *const DkfTrace,
    index: usize,
    coeffs: *mut DkfCoefficients,
    error_t: *mut f64,
    error_r: *mut f64,
) -> DkfStatus {
    let (Some(t), false) = (trace.as_ref(), coeffs.is_null()) else {
        return fail(DkfStatus::NullPointer, "null argument");
    };
    let Some(c) = t.coefficients.get(index) else {
        return fail(
            DkfStatus::OutOfRange,
            format!("sample {index} out of range for {} samples", t.coefficients.len()),
        );
    };
    *coeffs = (*c).into();
    if !error_t.is_null() {
        *error_t = t.error_t[index];
    }
    if !error_r.is_null() {
        *error_r = t.error_r[index];
    }
    DkfStatus::Ok
}

/// Writes the first divergent sample to `*sample` and returns `Diverged`,
/// or returns `Ok` when the run stayed finite.
///
/// # Safety
/// `trace` must be null or a live handle; `sample` valid or null.
#[no_mangle]
pub unsafe extern "C" fn dkf_trace_divergence(trace: *const DkfTrace, sample: *mut usize) -> DkfStatus {
    let Some(t) = trace.as_ref() else {
        return fail(DkfStatus::NullPointer, "null trace");
    };
    match t.divergence {
        None => DkfStatus::Ok,
        Some(k) => {
            if !sample.is_null() {
                *sample = k;
            }
            DkfStatus::Diverged
        }
    }
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dkf_trace_free(trace: *mut DkfTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
