use std::ffi::CStr;
use std::ptr;

use driftkf_ffi::*;

fn simulate(case_kind: DkfCase, n_rev: u32, seed: u64) -> *mut DkfSignal {
    let mut sig = ptr::null_mut();
    let st = unsafe { dkf_signal_simulate(case_kind, n_rev, 15.0, seed, &mut sig) };
    assert_eq!(st, DkfStatus::Ok);
    assert!(!sig.is_null());
    sig
}

fn coefficients(trace: *const DkfTrace) -> Vec<DkfCoefficients> {
    let n = unsafe { dkf_trace_len(trace) };
    (0..n)
        .map(|k| {
            let mut c = DkfCoefficients::default();
            assert_eq!(unsafe { dkf_trace_get(trace, k, &mut c, ptr::null_mut(), ptr::null_mut()) }, DkfStatus::Ok);
            c
        })
        .collect()
}

#[test]
fn signal_handle_round_trip() {
    let sig = simulate(DkfCase::Ascending, 3, 7);
    let n = unsafe { dkf_signal_len(sig) };
    assert!(n > 100);
    let mut s = DkfSample::default();
    for k in 0..n {
        assert_eq!(unsafe { dkf_signal_get(sig, k, &mut s) }, DkfStatus::Ok);
        assert_eq!(s.index, k);
        assert!(s.h_sum >= 0.01);
    }
    assert!(s.truth.kt > 1700.0);
    assert_eq!(unsafe { dkf_signal_get(sig, n, &mut s) }, DkfStatus::OutOfRange);
    let msg = unsafe { CStr::from_ptr(dkf_last_error_message()) }.to_string_lossy().into_owned();
    assert!(msg.contains("out of range"), "{msg}");

    let (mut st, mut sr) = (0.0, 0.0);
    assert_eq!(unsafe { dkf_signal_noise(sig, &mut st, &mut sr) }, DkfStatus::Ok);
    assert!(st > 0.0 && sr > 0.0);
    unsafe { dkf_signal_free(sig) };
}

#[test]
fn invalid_arguments_report_status() {
    let mut sig = ptr::null_mut();
    assert_eq!(
        unsafe { dkf_signal_simulate(DkfCase::Static, 0, 15.0, 1, &mut sig) },
        DkfStatus::InvalidArgument
    );
    assert!(sig.is_null());
    assert_eq!(
        unsafe { dkf_signal_simulate(DkfCase::Static, 1, -1.0, 1, &mut sig) },
        DkfStatus::InvalidArgument
    );

    let good = simulate(DkfCase::Static, 2, 1);
    let mut trace = ptr::null_mut();
    let st = unsafe { dkf_identify(good, DkfMethod::EnkfStar, 0, 10.0, 0, 1, &mut trace) };
    assert_eq!(st, DkfStatus::InvalidArgument);
    assert!(trace.is_null());
    assert_eq!(
        unsafe { dkf_identify(ptr::null(), DkfMethod::Rls, 0, 0.0, 0, 1, &mut trace) },
        DkfStatus::NullPointer
    );
    unsafe { dkf_signal_free(good) };
}

#[test]
fn identification_is_reproducible() {
    let sig = simulate(DkfCase::Static, 4, 3);
    let run = |method| {
        let mut trace = ptr::null_mut();
        assert_eq!(unsafe { dkf_identify(sig, method, 50, 10.0, 30, 9, &mut trace) }, DkfStatus::Ok);
        let c = coefficients(trace);
        unsafe { dkf_trace_free(trace) };
        c
    };
    let a = run(DkfMethod::EnkfStar);
    let b = run(DkfMethod::EnkfStar);
    assert_eq!(a.len(), unsafe { dkf_signal_len(sig) });
    assert_eq!(a, b);
    let last = a.last().unwrap();
    assert!((500.0..=3500.0).contains(&last.kt));
    assert!((0.1..=1.0).contains(&last.mt));

    let rls = run(DkfMethod::Rls);
    assert_eq!(rls.len(), a.len());
    unsafe { dkf_signal_free(sig) };
}

#[test]
fn trace_reports_errors_and_divergence() {
    let sig = simulate(DkfCase::Static, 3, 5);
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { dkf_identify(sig, DkfMethod::Enkf, 0, 0.0, 20, 2, &mut trace) }, DkfStatus::Ok);
    let mut c = DkfCoefficients::default();
    let (mut et, mut er) = (f64::NAN, f64::NAN);
    assert_eq!(unsafe { dkf_trace_get(trace, 0, &mut c, &mut et, &mut er) }, DkfStatus::Ok);
    assert!(et.is_finite() && er.is_finite());
    let mut at = usize::MAX;
    assert_eq!(unsafe { dkf_trace_divergence(trace, &mut at) }, DkfStatus::Ok);
    assert_eq!(at, usize::MAX);
    unsafe {
        dkf_trace_free(trace);
        dkf_signal_free(sig);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/driftkf.h")).unwrap();
    for name in [
        "DkfStatus",
        "DkfSignal",
        "DkfTrace",
        "dkf_signal_simulate",
        "dkf_signal_get",
        "dkf_signal_free",
        "dkf_identify",
        "dkf_trace_get",
        "dkf_trace_free",
        "dkf_kienzle_force",
        "dkf_last_error_message",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
