//! C interface to `nncert`.
//!
//! All objects are opaque handles created by a `*_from_*` or `nnc_verify_*`
//! call and released with the matching `*_free`. Every fallible function
//! returns an [`NncStatus`]; on failure the message is available from
//! [`nnc_last_error_message`] on the same thread until the next failing call.
//! Strings returned by the library are freed with [`nnc_string_free`].
//! Matrices cross the boundary as row-major `double` arrays unless noted.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use nncert::data::{check_excitation, OraclePlant, TrajectoryData};
use nncert::nn::NeuralNetwork;
use nncert::polytope::ProblemSets;
use nncert::reach::{
    verify_invariance, verify_safety, Dynamics, InvarianceResult, ReachOptions, ReachResult,
    SafetyVerdict,
};
use nncert::sectors::SectorData;
use nncert::stability::{
    verify_stability, verify_stability_model, Objective, StabilityCertificate, StabilityOptions,
};
use nncert::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Dimension = 5,
    /// The data is not rich enough for the requested check.
    Excitation = 6,
    Unsupported = 7,
    NotApplicable = 8,
    /// A buffer passed in was too small.
    BufferTooSmall = 9,
    /// A Rust panic was caught at the boundary.
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NncObjective {
    Feasibility = 0,
    TraceMin = 1,
    TraceMax = 2,
}

/// Feed-forward controller.
pub struct NncNetwork(NeuralNetwork);
/// Trajectory data `(U0, X0, X1)`.
pub struct NncData(TrajectoryData);
/// Known linear plant `x+ = A x + B u`.
pub struct NncPlant(OraclePlant);
/// Input, safe and invariant sets with an optional horizon.
pub struct NncSets(ProblemSets);
pub struct NncStability(StabilityCertificate);
pub struct NncReach(ReachResult);
pub struct NncInvariance(InvarianceResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> NncStatus {
    match e {
        Error::Dimension(_) => NncStatus::Dimension,
        Error::Excitation(_) => NncStatus::Excitation,
        Error::Unsupported(_) => NncStatus::Unsupported,
        Error::NotApplicable(_) => NncStatus::NotApplicable,
        Error::Io(_) => NncStatus::Io,
        Error::Parse(_) | Error::Json(_) | Error::Csv(_) => NncStatus::Parse,
        _ => NncStatus::InvalidArgument,
    }
}

struct Fail(NncStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NncStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NncStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NncStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {m}"));
            NncStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NncStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn dynamics<'a>(data: Option<&'a NncData>, plant: Option<&'a NncPlant>) -> Result<Dynamics<'a>, Fail> {
    match (data, plant) {
        (Some(d), None) => Ok(Dynamics::Data(&d.0)),
        (None, Some(p)) => Ok(Dynamics::Model(&p.0)),
        _ => Err(Fail(
            NncStatus::InvalidArgument,
            "pass exactly one of data and plant".into(),
        )),
    }
}

/// Message of the last failure on this thread, or NULL. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn nnc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn nnc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn nnc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_network_from_json(json: *const c_char, out: *mut *mut NncNetwork) -> NncStatus {
    guard(|| {
        let s = str_arg(json, "json")?;
        put(out, NncNetwork(NeuralNetwork::from_json_str(s)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_network_from_file(path: *const c_char, out: *mut *mut NncNetwork) -> NncStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        put(out, NncNetwork(NeuralNetwork::from_json_file(p)?))
    })
}

/// # Safety
/// `net` must come from this library (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_network_free(net: *mut NncNetwork) {
    free(net)
}

/// Writes the state, input and neuron counts; any output may be NULL.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn nnc_network_dims(
    net: *const NncNetwork,
    n_x: *mut usize,
    n_u: *mut usize,
    n_phi: *mut usize,
) -> NncStatus {
    guard(|| {
        let n = &obj(net, "net")?.0;
        for (p, v) in [(n_x, n.input_dim()), (n_u, n.output_dim()), (n_phi, n.n_phi())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Evaluates the controller at `x` (length `n_x`) into `u` (capacity `u_len`).
///
/// # Safety
/// `x` must hold `x_len` doubles and `u` must have room for `u_len`.
#[no_mangle]
pub unsafe extern "C" fn nnc_network_eval(
    net: *const NncNetwork,
    x: *const f64,
    x_len: usize,
    u: *mut f64,
    u_len: usize,
) -> NncStatus {
    guard(|| {
        let n = &obj(net, "net")?.0;
        let xv = DVector::from_column_slice(slice(x, x_len, "x")?);
        let uv = n.control(&xv)?;
        copy_out(uv.as_slice(), u, u_len)
    })
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, cap: usize) -> Result<(), Fail> {
    if cap < src.len() {
        return Err(Fail(
            NncStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_data_from_csv_file(path: *const c_char, out: *mut *mut NncData) -> NncStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        put(out, NncData(TrajectoryData::from_csv_file(p)?))
    })
}

/// Builds data from `k` samples. Each array stores one sample after the
/// other: `u0` is `k * n_u` values, `x0` and `x1` are `k * n_x` values.
///
/// # Safety
/// Arrays must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_data_from_arrays(
    n_x: usize,
    n_u: usize,
    k: usize,
    u0: *const f64,
    x0: *const f64,
    x1: *const f64,
    out: *mut *mut NncData,
) -> NncStatus {
    guard(|| {
        let u = DMatrix::from_column_slice(n_u, k, slice(u0, n_u * k, "u0")?);
        let a = DMatrix::from_column_slice(n_x, k, slice(x0, n_x * k, "x0")?);
        let b = DMatrix::from_column_slice(n_x, k, slice(x1, n_x * k, "x1")?);
        put(out, NncData(TrajectoryData::new(u, a, b)?))
    })
}

/// # Safety
/// `data` must come from this library (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_data_free(data: *mut NncData) {
    free(data)
}

/// Rank check of `[U0; X0]`: `ok` is true when its rank is `n_u + n_x`.
///
/// # Safety
/// Pointers must be valid or NULL (outputs may be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_data_check(
    data: *const NncData,
    rank: *mut usize,
    required: *mut usize,
    ok: *mut bool,
) -> NncStatus {
    guard(|| {
        let r = check_excitation(&obj(data, "data")?.0);
        if let Some(p) = rank.as_mut() {
            *p = r.rank_regressor;
        }
        if let Some(p) = required.as_mut() {
            *p = r.required_regressor;
        }
        if let Some(p) = ok.as_mut() {
            *p = r.representation_ok;
        }
        Ok(())
    })
}

/// Plant from JSON `{"a": [[..]], "b": [[..]]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_plant_from_json(json: *const c_char, out: *mut *mut NncPlant) -> NncStatus {
    guard(|| {
        let s = str_arg(json, "json")?;
        put(out, NncPlant(OraclePlant::from_json_str(s)?))
    })
}

/// # Safety
/// `plant` must come from this library (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_plant_free(plant: *mut NncPlant) {
    free(plant)
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_sets_from_json(json: *const c_char, out: *mut *mut NncSets) -> NncStatus {
    guard(|| {
        let s = str_arg(json, "json")?;
        put(out, NncSets(ProblemSets::from_json_str(s)?))
    })
}

/// # Safety
/// `sets` must come from this library (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_sets_free(sets: *mut NncSets) {
    free(sets)
}

/// Stability check with default sectors. Pass exactly one of `data` and
/// `plant`. An infeasible program is a result (not certified), not an error.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_verify_stability(
    net: *const NncNetwork,
    data: *const NncData,
    plant: *const NncPlant,
    objective: NncObjective,
    out: *mut *mut NncStability,
) -> NncStatus {
    guard(|| {
        let n = &obj(net, "net")?.0;
        let sectors = SectorData::default_for(n)?;
        let opts = StabilityOptions {
            objective: match objective {
                NncObjective::Feasibility => Objective::Feasibility,
                NncObjective::TraceMin => Objective::TraceMin,
                NncObjective::TraceMax => Objective::TraceMax,
            },
            ..StabilityOptions::default()
        };
        let cert = match dynamics(data.as_ref(), plant.as_ref())? {
            Dynamics::Data(d) => verify_stability(n, &sectors, d, &opts)?,
            Dynamics::Model(p) => verify_stability_model(n, &sectors, p, &opts)?,
        };
        put(out, NncStability(cert))
    })
}

/// # Safety
/// `res` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn nnc_stability_certified(res: *const NncStability, certified: *mut bool) -> NncStatus {
    guard(|| {
        let r = &obj(res, "result")?.0;
        *certified.as_mut().ok_or_else(|| null("certified"))? = r.verdict.is_certified();
        Ok(())
    })
}

/// Copies `Q1` (row-major, `n_x * n_x` values) into `buf`.
///
/// # Safety
/// `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nnc_stability_q1(res: *const NncStability, buf: *mut f64, len: usize) -> NncStatus {
    guard(|| {
        let q = &obj(res, "result")?.0.q1;
        copy_out(q.transpose().as_slice(), buf, len)
    })
}

/// Certificate as JSON; free with [`nnc_string_free`]. NULL on failure.
///
/// # Safety
/// `res` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn nnc_stability_json(res: *const NncStability) -> *mut c_char {
    let mut s = None;
    let st = guard(|| {
        s = Some(obj(res, "result")?.0.to_json_string()?);
        Ok(())
    });
    match (st, s) {
        (NncStatus::Ok, Some(s)) => owned_string(s),
        _ => ptr::null_mut(),
    }
}

/// # Safety
/// `res` must come from this library (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_stability_free(res: *mut NncStability) {
    free(res)
}

/// `mult_degree < 0` defers to the sets file, then to the library default.
fn reach_opts(mult_degree: c_int, sets: &ProblemSets) -> ReachOptions {
    let mut o = ReachOptions::default();
    if mult_degree >= 0 {
        o.multiplier_degree = mult_degree as u32;
    } else if let Some(d) = sets.multiplier_degree {
        o.multiplier_degree = d;
    }
    o
}

/// Finite-horizon safety from the sets' input set inside their safe set.
/// `horizon == 0` takes the horizon from the sets; `mult_degree < 0` uses
/// the default multiplier degree.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_verify_safety(
    net: *const NncNetwork,
    data: *const NncData,
    plant: *const NncPlant,
    sets: *const NncSets,
    horizon: usize,
    mult_degree: c_int,
    out: *mut *mut NncReach,
) -> NncStatus {
    guard(|| {
        let n = &obj(net, "net")?.0;
        let s = &obj(sets, "sets")?.0;
        let missing = |w: &str| Fail(NncStatus::InvalidArgument, format!("the sets have no {w}"));
        let input = s.input_set.as_ref().ok_or_else(|| missing("input_set"))?;
        let safe = s.safe_set.as_ref().ok_or_else(|| missing("safe_set"))?;
        let t = if horizon > 0 { horizon } else { s.horizon.ok_or_else(|| missing("horizon"))? };
        let opts = reach_opts(mult_degree, s);
        let sectors = SectorData::default_for(n)?;
        let dyn_ = dynamics(data.as_ref(), plant.as_ref())?;
        put(out, NncReach(verify_safety(n, &sectors, dyn_, input, safe, t, &opts)?))
    })
}

/// # Safety
/// `res` must be a valid handle; `safe` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_reach_safe(res: *const NncReach, safe: *mut bool) -> NncStatus {
    guard(|| {
        let r = &obj(res, "result")?.0;
        *safe.as_mut().ok_or_else(|| null("safe"))? = r.verdict == SafetyVerdict::Safe;
        Ok(())
    })
}

/// Number of computed steps and facets per step.
///
/// # Safety
/// Pointers must be valid or NULL (outputs may be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_reach_dims(res: *const NncReach, steps: *mut usize, facets: *mut usize) -> NncStatus {
    guard(|| {
        let r = &obj(res, "result")?.0;
        if let Some(p) = steps.as_mut() {
            *p = r.steps.len();
        }
        if let Some(p) = facets.as_mut() {
            *p = r.steps.first().map_or(0, |s| s.facets.len());
        }
        Ok(())
    })
}

/// Offset of facet `facet` at step `step` (1-based step). `bounded` is false
/// when that facet had no acceptable solution.
///
/// # Safety
/// `res` must be a valid handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_reach_gamma(
    res: *const NncReach,
    step: usize,
    facet: usize,
    value: *mut f64,
    bounded: *mut bool,
) -> NncStatus {
    guard(|| {
        let r = &obj(res, "result")?.0;
        let f = step
            .checked_sub(1)
            .and_then(|k| r.steps.get(k))
            .and_then(|s| s.facets.get(facet))
            .ok_or_else(|| Fail(NncStatus::InvalidArgument, format!("no facet {facet} at step {step}")))?;
        *bounded.as_mut().ok_or_else(|| null("bounded"))? = f.gamma.is_some();
        *value.as_mut().ok_or_else(|| null("value"))? = f.gamma.unwrap_or(f64::INFINITY);
        Ok(())
    })
}

/// Full result as JSON; free with [`nnc_string_free`]. NULL on failure.
///
/// # Safety
/// `res` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn nnc_reach_json(res: *const NncReach) -> *mut c_char {
    let mut s = None;
    let st = guard(|| {
        s = Some(obj(res, "result")?.0.to_json_string()?);
        Ok(())
    });
    match (st, s) {
        (NncStatus::Ok, Some(s)) => owned_string(s),
        _ => ptr::null_mut(),
    }
}

/// # Safety
/// `res` must come from this library (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_reach_free(res: *mut NncReach) {
    free(res)
}

/// One-step invariance of the sets' invariant set.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_verify_invariance(
    net: *const NncNetwork,
    data: *const NncData,
    plant: *const NncPlant,
    sets: *const NncSets,
    mult_degree: c_int,
    out: *mut *mut NncInvariance,
) -> NncStatus {
    guard(|| {
        let n = &obj(net, "net")?.0;
        let s = &obj(sets, "sets")?.0;
        let set = s
            .invariant_set
            .as_ref()
            .ok_or_else(|| Fail(NncStatus::InvalidArgument, "the sets have no invariant_set".into()))?;
        let opts = reach_opts(mult_degree, s);
        let sectors = SectorData::default_for(n)?;
        let dyn_ = dynamics(data.as_ref(), plant.as_ref())?;
        put(out, NncInvariance(verify_invariance(n, &sectors, dyn_, set, &opts)?))
    })
}

/// # Safety
/// `res` must be a valid handle; `invariant` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nnc_invariance_holds(res: *const NncInvariance, invariant: *mut bool) -> NncStatus {
    guard(|| {
        let r = &obj(res, "result")?.0;
        *invariant.as_mut().ok_or_else(|| null("invariant"))? = r.invariant;
        Ok(())
    })
}

/// # Safety
/// `res` must come from this library (or be NULL).
#[no_mangle]
pub unsafe extern "C" fn nnc_invariance_free(res: *mut NncInvariance) {
    free(res)
}

/// Runs the command-line pipeline with `argv` (including the program name)
/// and returns its exit code: 0 certified, 2 not certified, 1 error.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn nnc_run(argc: c_int, argv: *const *const c_char) -> c_int {
    let mut code = nncert::cli::EXIT_ERROR;
    let st = guard(|| {
        if argv.is_null() || argc < 1 {
            return Err(null("argv"));
        }
        let mut args = Vec::with_capacity(argc as usize);
        for i in 0..argc as usize {
            args.push(str_arg(*argv.add(i), "argument")?.to_string());
        }
        code = nncert::cli::main_with_args(args);
        Ok(())
    });
    if st == NncStatus::Ok {
        code
    } else {
        nncert::cli::EXIT_ERROR
    }
}
