//! C ABI over the localization library.
//!
//! Scenarios and measurement sets live behind opaque handles created and
//! freed by this library. Every fallible call returns a [`TtoaStatus`]; the
//! message of the last failure on the calling thread is available from
//! [`ttoa_last_error`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::DVector;
use twoway_toa::crlb::compute_crlb;
use twoway_toa::error::Error;
use twoway_toa::gn::{gauss_newton, GnSettings};
use twoway_toa::harness::scenario::{stream_rng, Stream};
use twoway_toa::harness::{sample_scenario, CampaignConfig};
use twoway_toa::measurement::{simulate_with, TwoWayMeasurements};
use twoway_toa::model::{Anchor, Scenario, Schedule, StateVector, UdState, SPEED_OF_LIGHT};
use twoway_toa::sdp::{solve_sdp, Motion, SdpOptions, SolveStatus};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtoaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CoincidentGeometry = 3,
    SingularNormalMatrix = 4,
    UnobservableGeometry = 5,
    NumericalFailure = 6,
    /// The solver stopped without meeting its tolerances. Outputs are
    /// written but should not be trusted.
    NotConverged = 7,
    Parse = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtoaMethod {
    SdpM = 0,
    GaussNewton = 1,
    SdpStationary = 2,
}

/// Solver diagnostics filled by [`ttoa_solve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TtoaSolveInfo {
    pub iterations: u32,
    pub converged: bool,
    /// Relative duality gap; NaN for Gauss-Newton.
    pub duality_gap: f64,
    /// `λ₂/λ₁` of the lifted block; NaN for Gauss-Newton.
    pub tightness: f64,
    /// Final weighted least-squares cost for Gauss-Newton, relaxed objective
    /// otherwise.
    pub objective: f64,
    pub wall_ms: f64,
}

/// Opaque scenario handle.
pub struct TtoaScenario(Scenario);

/// Opaque measurement set handle.
pub struct TtoaMeasurements(TwoWayMeasurements);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TtoaStatus {
    match e {
        Error::CoincidentGeometry { .. } => TtoaStatus::CoincidentGeometry,
        Error::SingularNormalMatrix { .. } => TtoaStatus::SingularNormalMatrix,
        Error::UnobservableGeometry { .. } => TtoaStatus::UnobservableGeometry,
        Error::NumericalFailure(_) => TtoaStatus::NumericalFailure,
        Error::Parse(_) | Error::Io { .. } => TtoaStatus::Parse,
        Error::NonPositiveSigma(_) | Error::DimensionMismatch(_) | Error::InvalidScenario(_) => {
            TtoaStatus::InvalidArgument
        }
    }
}

enum Fail {
    Status(TtoaStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(TtoaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Status(TtoaStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<TtoaStatus, Fail>) -> TtoaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TtoaStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn doubles<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn check_dim(dim: usize) -> Result<(), Fail> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(invalid(format!("dimension must be 2 or 3, got {dim}")))
    }
}

fn box_out<T>(out: *mut *mut T, value: T) -> Result<TtoaStatus, Fail> {
    // SAFETY: callers checked `out` for null.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(TtoaStatus::Ok)
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ttoa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ttoa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a scenario from raw arrays. `anchors` holds `m` points of `dim`
/// coordinates, row by row; `position` and `velocity` hold `dim` values.
/// Clock offset and drift are in meters and meters per second.
///
/// # Safety
/// Every pointer must be valid for the stated number of elements and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttoa_scenario_new(
    dim: usize,
    m: usize,
    anchors: *const f64,
    delays: *const f64,
    sigma_an: *const f64,
    sigma_ud: f64,
    position: *const f64,
    velocity: *const f64,
    clock_offset: f64,
    clock_drift: f64,
    out: *mut *mut TtoaScenario,
) -> TtoaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        check_dim(dim)?;
        let q = doubles(anchors, m * dim, "anchors")?;
        let scenario = Scenario {
            anchors: q.chunks(dim).enumerate().map(|(i, c)| Anchor::from_slice(i, c)).collect(),
            ud: UdState {
                position: DVector::from_column_slice(doubles(position, dim, "position")?),
                velocity: DVector::from_column_slice(doubles(velocity, dim, "velocity")?),
                clock_offset,
                clock_drift,
            },
            schedule: Schedule { t_tx: 0.0, delays: doubles(delays, m, "delays")?.to_vec() },
            sigma_an: doubles(sigma_an, m, "sigma_an")?.to_vec(),
            sigma_ud,
            c: SPEED_OF_LIGHT,
        };
        scenario.validate()?;
        box_out(out, TtoaScenario(scenario))
    })
}

/// Draws a scenario the way the campaign harness does. `config_toml` may be
/// null for the default configuration.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttoa_scenario_sample(
    config_toml: *const c_char,
    sigma: f64,
    seed: u64,
    out: *mut *mut TtoaScenario,
) -> TtoaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_toml.is_null() {
            CampaignConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml).to_str().map_err(|e| invalid(e.to_string()))?;
            CampaignConfig::from_toml(text)?
        };
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid(format!("sigma must be finite and nonnegative, got {sigma}")));
        }
        box_out(out, TtoaScenario(sample_scenario(&config, sigma, None, seed)))
    })
}

/// # Safety
/// `s` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ttoa_scenario_free(s: *mut TtoaScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Copies the true state into `state` (`2·dim + 2` doubles, order
/// `[p, B, Ω, v]`) and returns the dimension through `dim`.
///
/// # Safety
/// `s` must be a live handle; `state` must hold `2·dim + 2` doubles.
#[no_mangle]
pub unsafe extern "C" fn ttoa_scenario_state(s: *const TtoaScenario, dim: *mut usize, state: *mut f64) -> TtoaStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        if dim.is_null() {
            return Err(null("dim"));
        }
        *dim = s.0.dim();
        if !state.is_null() {
            let v = StateVector::from_state(&s.0.ud);
            slice::from_raw_parts_mut(state, v.len()).copy_from_slice(v.as_vector().as_slice());
        }
        Ok(TtoaStatus::Ok)
    })
}

/// Position RMSE bound of the scenario, meters.
///
/// # Safety
/// `s` must be a live handle; `bound` writable.
#[no_mangle]
pub unsafe extern "C" fn ttoa_crlb(s: *const TtoaScenario, bound: *mut f64) -> TtoaStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        if bound.is_null() {
            return Err(null("bound"));
        }
        *bound = compute_crlb(&s.0)?.pos_rmse_bound;
        Ok(TtoaStatus::Ok)
    })
}

/// Noisy measurements of the scenario. The same seed gives the same noise
/// as the campaign harness draw with that per-run seed.
///
/// # Safety
/// `s` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttoa_simulate(s: *const TtoaScenario, seed: u64, out: *mut *mut TtoaMeasurements) -> TtoaStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let meas = simulate_with(&s.0, &mut stream_rng(seed, Stream::Noise))?;
        box_out(out, TtoaMeasurements(meas))
    })
}

/// Wraps externally obtained measurements, all in meters except `delays`
/// (seconds).
///
/// # Safety
/// Every array must hold `m` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ttoa_measurements_new(
    m: usize,
    rho: *const f64,
    tau: *const f64,
    delays: *const f64,
    sigma_an: *const f64,
    sigma_ud: f64,
    out: *mut *mut TtoaMeasurements,
) -> TtoaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if m == 0 {
            return Err(invalid("at least one anchor is required"));
        }
        let meas = TwoWayMeasurements {
            rho: doubles(rho, m, "rho")?.to_vec(),
            tau: doubles(tau, m, "tau")?.to_vec(),
            delays: doubles(delays, m, "delays")?.to_vec(),
            sigma_an: doubles(sigma_an, m, "sigma_an")?.to_vec(),
            sigma_ud,
        };
        meas.validate()?;
        box_out(out, TtoaMeasurements(meas))
    })
}

/// Number of anchors, or 0 for a null handle.
///
/// # Safety
/// `meas` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ttoa_measurements_len(meas: *const TtoaMeasurements) -> usize {
    meas.as_ref().map_or(0, |m| m.0.len())
}

/// Copies `ρ` then `τ` into `out` (`2m` doubles).
///
/// # Safety
/// `meas` must be a live handle; `out` must hold `2m` doubles.
#[no_mangle]
pub unsafe extern "C" fn ttoa_measurements_get(meas: *const TtoaMeasurements, out: *mut f64) -> TtoaStatus {
    guard(|| {
        let meas = meas.as_ref().ok_or_else(|| null("measurements"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let g = meas.0.stacked();
        slice::from_raw_parts_mut(out, g.len()).copy_from_slice(g.as_slice());
        Ok(TtoaStatus::Ok)
    })
}

/// # Safety
/// `meas` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ttoa_measurements_free(meas: *mut TtoaMeasurements) {
    if !meas.is_null() {
        drop(Box::from_raw(meas));
    }
}

/// Estimates the state from measurements and `m` anchor positions of `dim`
/// coordinates each. `init` (`2·dim + 2` doubles) is the Gauss-Newton start
/// and is ignored by the relaxations; it is required for Gauss-Newton.
/// The estimate goes to `state` in `[p, B, Ω, v]` order. Returns
/// `NotConverged` with outputs written when the solver stops early.
///
/// # Safety
/// Pointers must be valid for the stated sizes; `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn ttoa_solve(
    meas: *const TtoaMeasurements,
    dim: usize,
    anchors: *const f64,
    method: TtoaMethod,
    init: *const f64,
    state: *mut f64,
    info: *mut TtoaSolveInfo,
) -> TtoaStatus {
    guard(|| {
        let meas = &meas.as_ref().ok_or_else(|| null("measurements"))?.0;
        check_dim(dim)?;
        if state.is_null() {
            return Err(null("state"));
        }
        let m = meas.len();
        let q: Vec<DVector<f64>> =
            doubles(anchors, m * dim, "anchors")?.chunks(dim).map(DVector::from_column_slice).collect();
        let weights = meas.weights()?;
        let n_state = 2 * dim + 2;
        let (estimate, report) = match method {
            TtoaMethod::GaussNewton => {
                let start = StateVector::new(dim, DVector::from_column_slice(doubles(init, n_state, "init")?))?;
                let t = std::time::Instant::now();
                let r = gauss_newton(meas, &weights, &q, &start, &GnSettings::default())?;
                let info = TtoaSolveInfo {
                    iterations: r.iterations as u32,
                    converged: r.converged,
                    duality_gap: f64::NAN,
                    tightness: f64::NAN,
                    objective: r.final_cost,
                    wall_ms: t.elapsed().as_secs_f64() * 1e3,
                };
                (r.estimate, info)
            }
            TtoaMethod::SdpM | TtoaMethod::SdpStationary => {
                let motion = if method == TtoaMethod::SdpM { Motion::Moving } else { Motion::Stationary };
                let r = solve_sdp(meas, &weights, &q, motion, &SdpOptions::default())?;
                let info = TtoaSolveInfo {
                    iterations: r.iterations as u32,
                    converged: r.status == SolveStatus::Optimal,
                    duality_gap: r.duality_gap,
                    tightness: r.tightness,
                    objective: r.objective,
                    wall_ms: r.wall_time * 1e3,
                };
                (r.estimate, info)
            }
        };
        slice::from_raw_parts_mut(state, n_state).copy_from_slice(estimate.as_vector().as_slice());
        if !info.is_null() {
            *info = report;
        }
        if report.converged {
            Ok(TtoaStatus::Ok)
        } else {
            Err(Fail::Status(TtoaStatus::NotConverged, "solver stopped before meeting its tolerances".into()))
        }
    })
}
