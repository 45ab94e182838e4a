//! C ABI for the lineprot relay.
//!
//! Objects cross the boundary as opaque handles created by `lp_*_new`-style
//! constructors and released with the matching `lp_*_free`. Every fallible
//! call returns an [`LpStatus`]; on failure the message is available through
//! [`lp_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lineprot::decision::{FaultTypeEstimate, Inception, RelayVerdict};
use lineprot::emt_sim::{simulate, WaveformRecord};
use lineprot::grid_model::{reference_scenario, GridScenario, SequenceLineParameters};
use lineprot::harness::{detect_window, DetectorConfig};
use lineprot::Error;
use nalgebra::Matrix3xX;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidParameter = 2,
    InvalidWindow = 3,
    DegradedData = 4,
    DataIntegrity = 5,
    Simulation = 6,
    Solver = 7,
    Config = 8,
    Io = 9,
    InvalidUtf8 = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Measurement channel of a record.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpChannel {
    U1 = 0,
    U2 = 1,
    I1 = 2,
    I2 = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpFaultType {
    None = 0,
    K3 = 1,
    K2 = 2,
    K2g = 3,
    K1 = 4,
    Unclassified = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpInceptionKind {
    /// No fault declared.
    None = 0,
    /// Inception within `[inception_lo, inception_hi]` (sample indices).
    Interval = 1,
    /// The fault started before the window.
    BeforeWindow = 2,
}

/// Sequence parameters of the protected line.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpLine {
    pub r1_ohm_per_km: f64,
    pub l1_h_per_km: f64,
    /// Zero/positive sequence ratio for resistance and inductance.
    pub k_seq: f64,
    pub length_km: f64,
}

/// Detector settings; start from [`lp_detector_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpDetectorConfig {
    pub window_ms: f64,
    pub m_blocks: usize,
    /// Samples per derivative stencil.
    pub l: usize,
    pub max_missing_fraction: f64,
    /// Upper bound on estimated fault resistances; may be infinite.
    pub r_max_ohm: f64,
    pub classify_threshold_ohm: f64,
}

/// Flat view of a verdict.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpVerdictInfo {
    pub trip: bool,
    pub selected_case: usize,
    /// `alpha` and `r_f` are valid only when set.
    pub has_estimate: bool,
    pub alpha: f64,
    /// `[R_a, R_b, R_c, R_g]` in ohms.
    pub r_f: [f64; 4],
    pub inception_kind: LpInceptionKind,
    pub inception_lo: usize,
    pub inception_hi: usize,
    pub fault_type: LpFaultType,
    pub delta_count: usize,
}

pub struct LpScenario(GridScenario);
pub struct LpRecord(WaveformRecord);
pub struct LpVerdict(RelayVerdict);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(err: &Error) -> LpStatus {
    match err {
        Error::InvalidParameter(_) => LpStatus::InvalidParameter,
        Error::InvalidWindow(_) => LpStatus::InvalidWindow,
        Error::DegradedData { .. } => LpStatus::DegradedData,
        Error::Simulation(_) => LpStatus::Simulation,
        Error::DataIntegrity(_) => LpStatus::DataIntegrity,
        Error::Solver(_) => LpStatus::Solver,
        Error::Config(_) => LpStatus::Config,
        Error::Io(_) | Error::Csv(_) => LpStatus::Io,
    }
}

struct Failure(LpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LpStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, records any failure for [`lp_last_error_message`], and turns
/// panics into [`LpStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            LpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The built-in reference scenario.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_scenario_reference(out: *mut *mut LpScenario) -> LpStatus {
    guard(|| put(out, LpScenario(reference_scenario())))
}

/// Parses and validates a scenario from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_scenario_from_toml(
    toml: *const c_char,
    out: *mut *mut LpScenario,
) -> LpStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| Failure(LpStatus::InvalidUtf8, e.to_string()))?;
        put(out, LpScenario(GridScenario::from_toml_str(text)?))
    })
}

/// Line parameters of a scenario.
///
/// # Safety
/// `sc` must be a live scenario handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_scenario_line(sc: *const LpScenario, out: *mut LpLine) -> LpStatus {
    guard(|| {
        let l = deref(sc, "scenario")?.0.line;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = LpLine {
            r1_ohm_per_km: l.r1_ohm_per_km,
            l1_h_per_km: l.l1_h_per_km,
            k_seq: l.k_seq,
            length_km: l.length_km,
        };
        Ok(())
    })
}

/// # Safety
/// `sc` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lp_scenario_free(sc: *mut LpScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Simulates a scenario into a new record.
///
/// # Safety
/// `sc` must be a live scenario handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_simulate(sc: *const LpScenario, out: *mut *mut LpRecord) -> LpStatus {
    guard(|| {
        let rec = simulate(&deref(sc, "scenario")?.0)?;
        put(out, LpRecord(rec))
    })
}

/// Builds a record from measured samples. Each channel holds `3 * n` values,
/// phase-major: `[a_0 .. a_{n-1}, b_0 .. b_{n-1}, c_0 .. c_{n-1}]`.
///
/// # Safety
/// Each channel pointer must be valid for `3 * n` reads; `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_record_new(
    sample_rate_hz: f64,
    n: usize,
    u1: *const f64,
    u2: *const f64,
    i1: *const f64,
    i2: *const f64,
    out: *mut *mut LpRecord,
) -> LpStatus {
    guard(|| {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Failure(
                LpStatus::InvalidParameter,
                format!("sample rate must be positive, got {sample_rate_hz}"),
            ));
        }
        let load = |p: *const f64, what: &str| -> Result<Matrix3xX<f64>, Failure> {
            if p.is_null() {
                return Err(null(what));
            }
            let s = std::slice::from_raw_parts(p, 3 * n);
            Ok(Matrix3xX::from_fn(n, |r, c| s[r * n + c]))
        };
        let rec = WaveformRecord {
            sample_rate_hz,
            timestamps: (0..n).map(|j| j as f64 / sample_rate_hz).collect(),
            u1: load(u1, "u1")?,
            u2: load(u2, "u2")?,
            i1: load(i1, "i1")?,
            i2: load(i2, "i2")?,
            missing: vec![false; n],
        };
        put(out, LpRecord(rec))
    })
}

/// Number of samples in a record.
///
/// # Safety
/// `rec` must be a live record handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_record_len(rec: *const LpRecord, out: *mut usize) -> LpStatus {
    guard(|| {
        let n = deref(rec, "record")?.0.len();
        *out.as_mut().ok_or_else(|| null("output pointer"))? = n;
        Ok(())
    })
}

/// Copies one phase of one channel into `buf`, which must hold the whole
/// record (`lp_record_len` values).
///
/// # Safety
/// `rec` must be a live record handle; `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn lp_record_channel(
    rec: *const LpRecord,
    channel: LpChannel,
    phase: usize,
    buf: *mut f64,
    len: usize,
) -> LpStatus {
    guard(|| {
        let w = &deref(rec, "record")?.0;
        if phase > 2 {
            return Err(Failure(LpStatus::InvalidParameter, format!("phase {phase} out of range 0..=2")));
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < w.len() {
            return Err(Failure(
                LpStatus::BufferTooSmall,
                format!("buffer holds {len} values, record has {}", w.len()),
            ));
        }
        let m = match channel {
            LpChannel::U1 => &w.u1,
            LpChannel::U2 => &w.u2,
            LpChannel::I1 => &w.i1,
            LpChannel::I2 => &w.i2,
        };
        let dst = std::slice::from_raw_parts_mut(buf, w.len());
        for (d, s) in dst.iter_mut().zip(m.row(phase).iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Marks remote sample `index` as lost in transit.
///
/// # Safety
/// `rec` must be a live record handle.
#[no_mangle]
pub unsafe extern "C" fn lp_record_mark_missing(rec: *mut LpRecord, index: usize) -> LpStatus {
    guard(|| {
        let w = &mut rec.as_mut().ok_or_else(|| null("record"))?.0;
        let n = w.len();
        let slot = w.missing.get_mut(index).ok_or_else(|| {
            Failure(LpStatus::InvalidParameter, format!("sample {index} out of range (record has {n})"))
        })?;
        *slot = true;
        Ok(())
    })
}

/// # Safety
/// `rec` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lp_record_free(rec: *mut LpRecord) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Default detector settings.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_detector_config_default(out: *mut LpDetectorConfig) -> LpStatus {
    guard(|| {
        let d = DetectorConfig::default();
        *out.as_mut().ok_or_else(|| null("output pointer"))? = LpDetectorConfig {
            window_ms: d.window_ms,
            m_blocks: d.m_blocks,
            l: d.l,
            max_missing_fraction: d.max_missing_fraction,
            r_max_ohm: d.r_max_ohm,
            classify_threshold_ohm: d.decision.classify_threshold_ohm,
        };
        Ok(())
    })
}

fn detector_config(c: &LpDetectorConfig) -> DetectorConfig {
    let mut d = DetectorConfig {
        window_ms: c.window_ms,
        m_blocks: c.m_blocks,
        l: c.l,
        max_missing_fraction: c.max_missing_fraction,
        r_max_ohm: c.r_max_ohm,
        ..DetectorConfig::default()
    };
    d.decision.classify_threshold_ohm = c.classify_threshold_ohm;
    d
}

/// Runs the detector on the window of `rec` starting at sample `start`; the
/// window length follows from `cfg.window_ms` and the record's sample rate.
///
/// # Safety
/// Pointers must be valid; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_detect_window(
    rec: *const LpRecord,
    start: usize,
    line: *const LpLine,
    cfg: *const LpDetectorConfig,
    out: *mut *mut LpVerdict,
) -> LpStatus {
    guard(|| {
        let w = &deref(rec, "record")?.0;
        let l = deref(line, "line")?;
        let cfg = detector_config(deref(cfg, "config")?);
        let line = SequenceLineParameters {
            r1_ohm_per_km: l.r1_ohm_per_km,
            l1_h_per_km: l.l1_h_per_km,
            k_seq: l.k_seq,
            length_km: l.length_km,
        };
        let len = cfg.window_samples(w.sample_rate_hz)?;
        let v = detect_window(w, start, len, &line, &cfg)?;
        put(out, LpVerdict(v))
    })
}

/// Flat summary of a verdict.
///
/// # Safety
/// `v` must be a live verdict handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lp_verdict_info(v: *const LpVerdict, out: *mut LpVerdictInfo) -> LpStatus {
    guard(|| {
        let v = &deref(v, "verdict")?.0;
        let (inception_kind, inception_lo, inception_hi) = match v.inception {
            None => (LpInceptionKind::None, 0, 0),
            Some(Inception::Interval(a, b)) => (LpInceptionKind::Interval, a, b),
            Some(Inception::BeforeWindow) => (LpInceptionKind::BeforeWindow, 0, 0),
        };
        let fault_type = match v.fault_type_est {
            None => LpFaultType::None,
            Some(FaultTypeEstimate::K3) => LpFaultType::K3,
            Some(FaultTypeEstimate::K2) => LpFaultType::K2,
            Some(FaultTypeEstimate::K2g) => LpFaultType::K2g,
            Some(FaultTypeEstimate::K1) => LpFaultType::K1,
            Some(FaultTypeEstimate::Unclassified) => LpFaultType::Unclassified,
        };
        *out.as_mut().ok_or_else(|| null("output pointer"))? = LpVerdictInfo {
            trip: v.is_trip(),
            selected_case: v.selected_case,
            has_estimate: v.alpha_est.is_some(),
            alpha: v.alpha_est.unwrap_or(f64::NAN),
            r_f: v.r_f_est.unwrap_or([f64::NAN; 4]),
            inception_kind,
            inception_lo,
            inception_hi,
            fault_type,
            delta_count: v.deltas.len(),
        };
        Ok(())
    })
}

/// Copies the per-case residuals `Δ_1 ..` into `buf`.
///
/// # Safety
/// `v` must be a live verdict handle; `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn lp_verdict_deltas(v: *const LpVerdict, buf: *mut f64, len: usize) -> LpStatus {
    guard(|| {
        let d = &deref(v, "verdict")?.0.deltas;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < d.len() {
            return Err(Failure(
                LpStatus::BufferTooSmall,
                format!("buffer holds {len} values, verdict has {}", d.len()),
            ));
        }
        ptr::copy_nonoverlapping(d.as_ptr(), buf, d.len());
        Ok(())
    })
}

/// # Safety
/// `v` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lp_verdict_free(v: *mut LpVerdict) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}
