//! C ABI for the maskreg library.
//!
//! Every fallible call returns a [`MaskregStatus`]. On failure the message is
//! kept per thread and read back with [`maskreg_last_error`]. Panics never
//! cross the boundary; they become `MASKREG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use maskreg::attacks::{cpa_rank_analysis, ldp_ratio, RankClass};
use maskreg::cli::{run_experiment, split_horizontal, ExperimentConfig, SplitPolicy};
use maskreg::matrix::Mat;
use maskreg::protocol::{Actor, Federation, FederationConfig, Perturbation, TamperAction, TamperPlan, TransportKind, Verdict};
use maskreg::{AgencyId, Dataset, Error, Mode};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Parse = 4,
    DimMismatch = 5,
    Numerical = 6,
    Protocol = 7,
    Transport = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskregMode {
    Linear = 0,
    Ridge = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskregTransport {
    Bus = 0,
    Tcp = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskregTamper {
    Honest = 0,
    SkipPseudoResponse = 1,
    NonCommutativeKey = 2,
    /// Cloud adds Gaussian noise of the given magnitude.
    PerturbResult = 3,
    WrongDecrypt = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskregRankClass {
    NoSolution = 0,
    Infinite = 1,
    Unique = 2,
}

/// Outcome of one protocol run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaskregRunResult {
    /// True when the verification column passed.
    pub accepted: bool,
    pub max_deviation: f64,
    pub total_ms: f64,
}

/// Opaque handle to a configured federation.
pub struct MaskregSession {
    fed: Federation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MaskregStatus {
    match e {
        Error::InvalidArgument(_) | Error::TooManyAgencies { .. } | Error::SingleClass => MaskregStatus::InvalidArgument,
        Error::InvalidConfig(_) => MaskregStatus::InvalidConfig,
        Error::ParseError { .. } | Error::NonNumericCell { .. } | Error::MissingResponse(_) => MaskregStatus::Parse,
        Error::DimMismatch(_) => MaskregStatus::DimMismatch,
        Error::ResampleExhausted { .. }
        | Error::SingularResult { .. }
        | Error::NotPositiveDefinite
        | Error::RankDeficient(_)
        | Error::Singular => MaskregStatus::Numerical,
        Error::DuplicatePass(_)
        | Error::DoubleDecrypt(_)
        | Error::ProtocolOrderViolation(_)
        | Error::FoldBlockMisaligned(_) => MaskregStatus::Protocol,
        Error::TransportFailure(_) | Error::Wire(_) => MaskregStatus::Transport,
        Error::Io(_) => MaskregStatus::Io,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (MaskregStatus, String)>) -> MaskregStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MaskregStatus::Ok,
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
            set_error(format!("panic: {msg}"));
            MaskregStatus::Panic
        }
    }
}

fn lib(e: Error) -> (MaskregStatus, String) {
    (status_of(&e), format!("{}: {e}", e.kind()))
}

fn null(what: &str) -> (MaskregStatus, String) {
    (MaskregStatus::NullPointer, format!("{what} is null"))
}

/// Last error on this thread, or null. Valid until the next call into the
/// library on the same thread.
#[no_mangle]
pub extern "C" fn maskreg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Static version string.
#[no_mangle]
pub extern "C" fn maskreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a session over row-major `x` (`n × p`) and `y` (`n`), split
/// equally across `k` agencies.
///
/// # Safety
/// `x` must point to `n * p` doubles, `y` to `n` doubles, and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn maskreg_session_new(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    k: usize,
    mode: MaskregMode,
    lambda: f64,
    seed: u64,
    out: *mut *mut MaskregSession,
) -> MaskregStatus {
    guard(|| {
        if x.is_null() {
            return Err(null("x"));
        }
        if y.is_null() {
            return Err(null("y"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(p).ok_or_else(|| lib(Error::InvalidArgument("n * p overflows".into())))?;
        // SAFETY: caller guarantees the lengths.
        let xs = unsafe { std::slice::from_raw_parts(x, len) }.to_vec();
        let ys = unsafe { std::slice::from_raw_parts(y, n) }.to_vec();
        let data = Dataset::new(Mat::new(n, p, xs).map_err(lib)?, ys).map_err(lib)?;
        let parts = split_horizontal(&data, k, &SplitPolicy::Equal).map_err(lib)?;
        let cfg = FederationConfig {
            mode: match mode {
                MaskregMode::Linear => Mode::Linear,
                MaskregMode::Ridge => Mode::Ridge,
            },
            lambda,
            seed,
            ..FederationConfig::default()
        };
        let fed = Federation::setup(parts, cfg).map_err(lib)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(MaskregSession { fed })) };
        Ok(())
    })
}

/// Number of features, or 0 for a null session.
///
/// # Safety
/// `session` must be null or a live handle from [`maskreg_session_new`].
#[no_mangle]
pub unsafe extern "C" fn maskreg_session_p(session: *const MaskregSession) -> usize {
    // SAFETY: caller contract.
    unsafe { session.as_ref() }.map_or(0, |s| s.fed.p())
}

/// Makes one party deviate on subsequent runs. `agency` is 1-based and
/// ignored for `PerturbResult`, which is always the cloud.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn maskreg_session_inject_tamper(
    session: *mut MaskregSession,
    action: MaskregTamper,
    agency: u8,
    magnitude: f64,
) -> MaskregStatus {
    guard(|| {
        // SAFETY: caller contract.
        let s = unsafe { session.as_mut() }.ok_or_else(|| null("session"))?;
        let plan = match action {
            MaskregTamper::Honest => TamperPlan::honest(),
            MaskregTamper::PerturbResult => TamperPlan {
                actor: Actor::Cloud,
                action: TamperAction::PerturbResult(Perturbation::Gaussian { magnitude }),
            },
            other => TamperPlan {
                actor: Actor::Agency(AgencyId(agency)),
                action: match other {
                    MaskregTamper::SkipPseudoResponse => TamperAction::SkipPseudoResponse,
                    MaskregTamper::NonCommutativeKey => TamperAction::NonCommutativeKey,
                    _ => TamperAction::WrongDecrypt,
                },
            },
        };
        s.fed.inject_tamper(plan).map_err(lib)
    })
}

/// Runs the protocol and writes the decrypted coefficients into `beta`
/// (`beta_len` must equal p).
///
/// # Safety
/// `session` must be a live handle, `beta` must point to `beta_len`
/// writable doubles, and `result` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn maskreg_session_run(
    session: *const MaskregSession,
    transport: MaskregTransport,
    beta: *mut f64,
    beta_len: usize,
    result: *mut MaskregRunResult,
) -> MaskregStatus {
    guard(|| {
        // SAFETY: caller contract.
        let s = unsafe { session.as_ref() }.ok_or_else(|| null("session"))?;
        if beta.is_null() {
            return Err(null("beta"));
        }
        if beta_len != s.fed.p() {
            return Err(lib(Error::DimMismatch(format!("beta_len {beta_len} but p = {}", s.fed.p()))));
        }
        let kind = match transport {
            MaskregTransport::Bus => TransportKind::Bus,
            MaskregTransport::Tcp => TransportKind::Tcp,
        };
        let out = s.fed.run(kind.build().as_ref()).map_err(lib)?;
        // SAFETY: length checked against p.
        unsafe { std::slice::from_raw_parts_mut(beta, beta_len) }.copy_from_slice(&out.beta());
        // SAFETY: caller contract.
        if let Some(r) = unsafe { result.as_mut() } {
            *r = MaskregRunResult {
                accepted: out.verification.verdict == Verdict::Accepted,
                max_deviation: out.verification.max_deviation,
                total_ms: out.timings.total_ms,
            };
        }
        Ok(())
    })
}

/// Frees a session. Null is a no-op.
///
/// # Safety
/// `session` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn maskreg_session_free(session: *mut MaskregSession) {
    if !session.is_null() {
        // SAFETY: produced by Box::into_raw in maskreg_session_new.
        drop(unsafe { Box::from_raw(session) });
    }
}

/// Runs a full experiment described by a TOML config and writes its files.
/// `exit_code` receives 0 (accepted) or 2 (tampered).
///
/// # Safety
/// `config_toml` must be a nul-terminated string; `exit_code` null or writable.
#[no_mangle]
pub unsafe extern "C" fn maskreg_run_config(config_toml: *const c_char, exit_code: *mut i32) -> MaskregStatus {
    guard(|| {
        if config_toml.is_null() {
            return Err(null("config_toml"));
        }
        // SAFETY: caller contract.
        let text = unsafe { CStr::from_ptr(config_toml) }
            .to_str()
            .map_err(|e| lib(Error::InvalidConfig(e.to_string())))?;
        let cfg = ExperimentConfig::from_toml(text).map_err(lib)?;
        let outcome = run_experiment(&cfg).map_err(lib)?;
        // SAFETY: caller contract.
        if let Some(c) = unsafe { exit_code.as_mut() } {
            *c = outcome.exit_code;
        }
        Ok(())
    })
}

/// Probability ratio of the Gaussian projection event; see the library docs.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maskreg_ldp_ratio(t: f64, norm1: f64, norm2: f64, sigma: f64, out: *mut f64) -> MaskregStatus {
    guard(|| {
        // SAFETY: caller contract.
        let o = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *o = ldp_ratio(t, norm1, norm2, sigma).map_err(lib)?;
        Ok(())
    })
}

/// Solvability class of the chosen-plaintext system.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maskreg_cpa_rank(n: usize, p: usize, rank: usize, out: *mut MaskregRankClass) -> MaskregStatus {
    guard(|| {
        // SAFETY: caller contract.
        let o = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *o = match cpa_rank_analysis(n, p, rank).map_err(lib)? {
            RankClass::NoSolution => MaskregRankClass::NoSolution,
            RankClass::Infinite => MaskregRankClass::Infinite,
            RankClass::Unique => MaskregRankClass::Unique,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_error_kind_maps_to_a_status() {
        assert_eq!(status_of(&Error::Singular), MaskregStatus::Numerical);
        assert_eq!(status_of(&Error::Wire("x".into())), MaskregStatus::Transport);
        assert_eq!(status_of(&Error::MissingResponse("y".into())), MaskregStatus::Parse);
    }

    #[test]
    fn panics_are_contained() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, MaskregStatus::Panic);
        let msg = unsafe { CStr::from_ptr(maskreg_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), MaskregStatus::Ok);
        assert!(maskreg_last_error().is_null());
    }
}
