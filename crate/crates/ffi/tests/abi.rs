use std::ffi::{CStr, CString};
use std::ptr;

use lineprot_ffi::*;

const K1_TOML: &str = include_str!("../../core/configs/internal_k1.toml");

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        lp_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn k1_scenario() -> *mut LpScenario {
    let text = CString::new(K1_TOML).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { lp_scenario_from_toml(text.as_ptr(), &mut sc) }, LpStatus::Ok);
    sc
}

fn detect(rec: *const LpRecord, start: usize, line: &LpLine) -> LpVerdictInfo {
    unsafe {
        let mut cfg = std::mem::zeroed();
        assert_eq!(lp_detector_config_default(&mut cfg), LpStatus::Ok);
        let mut v = ptr::null_mut();
        assert_eq!(lp_detect_window(rec, start, line, &cfg, &mut v), LpStatus::Ok, "{}", last_error());
        let mut info = std::mem::zeroed();
        assert_eq!(lp_verdict_info(v, &mut info), LpStatus::Ok);
        let mut deltas = vec![0.0; info.delta_count];
        assert_eq!(lp_verdict_deltas(v, deltas.as_mut_ptr(), deltas.len()), LpStatus::Ok);
        assert!(deltas.iter().all(|d| d.is_finite() && *d >= 0.0));
        lp_verdict_free(v);
        info
    }
}

#[test]
fn simulate_and_detect_internal_fault() {
    unsafe {
        let sc = k1_scenario();
        let mut line = std::mem::zeroed();
        assert_eq!(lp_scenario_line(sc, &mut line), LpStatus::Ok);
        assert_eq!(line.length_km, 40.0);
        let mut rec = ptr::null_mut();
        assert_eq!(lp_simulate(sc, &mut rec), LpStatus::Ok);
        let mut n = 0;
        assert_eq!(lp_record_len(rec, &mut n), LpStatus::Ok);
        assert_eq!(n, 3200);

        let healthy = detect(rec, 0, &line);
        assert!(!healthy.trip);
        assert_eq!(healthy.selected_case, 1);
        assert_eq!(healthy.inception_kind, LpInceptionKind::None);
        assert!(!healthy.has_estimate);

        let faulted = detect(rec, 1600, &line);
        assert!(faulted.trip);
        assert!(faulted.has_estimate);
        assert!((faulted.alpha - 0.3).abs() < 1e-3, "alpha {}", faulted.alpha);
        assert!((faulted.r_f[0] - 10.0).abs() < 0.1, "r_a {}", faulted.r_f[0]);
        assert_eq!(faulted.fault_type, LpFaultType::K1);

        let onset = detect(rec, 1400, &line);
        assert!(onset.trip);
        assert_eq!(onset.inception_kind, LpInceptionKind::Interval);
        assert!(onset.inception_lo <= 1500 && 1500 <= onset.inception_hi);

        lp_record_free(rec);
        lp_scenario_free(sc);
    }
}

#[test]
fn record_round_trip_and_buffer_checks() {
    unsafe {
        let n = 4;
        let ch: Vec<Vec<f64>> = (0..4).map(|c| (0..3 * n).map(|k| (100 * c + k) as f64).collect()).collect();
        let mut rec = ptr::null_mut();
        let st = lp_record_new(1e5, n, ch[0].as_ptr(), ch[1].as_ptr(), ch[2].as_ptr(), ch[3].as_ptr(), &mut rec);
        assert_eq!(st, LpStatus::Ok);
        let mut buf = [0.0; 4];
        assert_eq!(lp_record_channel(rec, LpChannel::I1, 1, buf.as_mut_ptr(), 4), LpStatus::Ok);
        assert_eq!(buf, [204.0, 205.0, 206.0, 207.0]);
        assert_eq!(lp_record_channel(rec, LpChannel::U1, 0, buf.as_mut_ptr(), 3), LpStatus::BufferTooSmall);
        assert!(last_error().contains("buffer holds 3"));
        assert_eq!(lp_record_channel(rec, LpChannel::U1, 3, buf.as_mut_ptr(), 4), LpStatus::InvalidParameter);
        assert_eq!(lp_record_mark_missing(rec, 3), LpStatus::Ok);
        assert_eq!(lp_record_mark_missing(rec, 4), LpStatus::InvalidParameter);
        lp_record_free(rec);

        let st = lp_record_new(0.0, n, ch[0].as_ptr(), ch[1].as_ptr(), ch[2].as_ptr(), ch[3].as_ptr(), &mut rec);
        assert_eq!(st, LpStatus::InvalidParameter);
    }
}

#[test]
fn null_and_invalid_inputs_report_errors() {
    unsafe {
        let mut sc = ptr::null_mut();
        assert_eq!(lp_scenario_from_toml(ptr::null(), &mut sc), LpStatus::NullArgument);
        assert_eq!(last_error(), "toml is null");
        let bad = CString::new("u_g_kv = \"high\"").unwrap();
        let st = lp_scenario_from_toml(bad.as_ptr(), &mut sc);
        assert!(matches!(st, LpStatus::Config | LpStatus::InvalidParameter), "{st:?}");
        assert!(!last_error().is_empty());
        assert!(sc.is_null());

        let mut rec = ptr::null_mut();
        assert_eq!(lp_simulate(ptr::null(), &mut rec), LpStatus::NullArgument);
        assert_eq!(lp_scenario_reference(ptr::null_mut()), LpStatus::NullArgument);

        lp_scenario_free(ptr::null_mut());
        lp_record_free(ptr::null_mut());
        lp_verdict_free(ptr::null_mut());
    }
}

#[test]
fn window_past_the_end_is_rejected() {
    unsafe {
        let mut sc = ptr::null_mut();
        assert_eq!(lp_scenario_reference(&mut sc), LpStatus::Ok);
        let mut rec = ptr::null_mut();
        assert_eq!(lp_simulate(sc, &mut rec), LpStatus::Ok);
        let mut line = std::mem::zeroed();
        lp_scenario_line(sc, &mut line);
        let mut cfg = std::mem::zeroed();
        lp_detector_config_default(&mut cfg);
        let mut v = ptr::null_mut();
        let st = lp_detect_window(rec, 1900, &line, &cfg, &mut v);
        assert_ne!(st, LpStatus::Ok);
        assert!(v.is_null());
        lp_record_free(rec);
        lp_scenario_free(sc);
    }
}

#[test]
fn error_message_truncates_and_reports_length() {
    unsafe {
        let mut sc = ptr::null_mut();
        lp_scenario_from_toml(ptr::null(), &mut sc);
        let mut small = [0 as std::ffi::c_char; 5];
        let full = lp_last_error_message(small.as_mut_ptr(), small.len());
        assert_eq!(full, "toml is null".len());
        assert_eq!(CStr::from_ptr(small.as_ptr()).to_str().unwrap(), "toml");
        assert_eq!(lp_last_error_message(ptr::null_mut(), 0), full);
        assert_eq!(CStr::from_ptr(lp_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
