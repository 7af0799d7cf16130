//! C ABI over the kinwass toolkit.
//!
//! Every fallible call returns a [`KwStatus`]; the message of the last failure on
//! the calling thread is available through [`kw_last_error_message`]. Objects are
//! opaque handles released by their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use kinwass::cli::{cmd_simulate, exit_code, EXIT_SOLVER};
use kinwass::config::ExperimentConfig;
use kinwass::kinetic::{kinetic_distance_with, solve_dp_implicit, Form, KineticConfig, KineticReport};
use kinwass::stability::{horizon_compare, kinetic_bound, loeper_bound, BoundConstants};
use kinwass::transport::{wp_distance_with, OtConfig};
use kinwass::{Domain, EmpiricalMeasure, Error, Params, Sign};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Solver = 3,
    BlowUp = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwDomain {
    Torus = 0,
    WholeSpace = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwForm {
    Metric = 0,
    Flow = 1,
}

/// Root of the implicit kinetic equation and its inputs.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KwKineticResult {
    /// `dp^{1/p}`; equal to `dp` for a bare root solve.
    pub value: f64,
    pub dp: f64,
    pub cx: f64,
    pub cv: f64,
    pub lambda: f64,
    pub residual: f64,
    pub regime_flag: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KwBoundConstants {
    pub c_l: f64,
    pub c_kw: f64,
    pub c_hw: f64,
    pub c_loglip: f64,
    pub c_d: f64,
    pub c0: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KwRunSummary {
    pub snapshots: usize,
    pub blew_up: bool,
    pub blowup_time: f64,
    pub final_qp: f64,
    pub final_dp: f64,
    pub final_wp_sub: f64,
}

/// Opaque weighted phase-space measure.
pub struct KwMeasure(EmpiricalMeasure);

/// Opaque experiment configuration.
pub struct KwConfig(ExperimentConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> KwStatus {
    match err {
        Error::Io(_) => KwStatus::Io,
        e if exit_code(e) == EXIT_SOLVER => KwStatus::Solver,
        _ => KwStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> Result<(), KwStatus>>(f: F) -> KwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            KwStatus::Panic
        }
    }
}

fn fail(err: Error) -> KwStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null(name: &str) -> KwStatus {
    set_error(format!("{name} is null"));
    KwStatus::NullPointer
}

fn domain(d: KwDomain) -> Domain {
    match d {
        KwDomain::Torus => Domain::Torus,
        KwDomain::WholeSpace => Domain::WholeSpace,
    }
}

impl From<KwBoundConstants> for BoundConstants {
    fn from(c: KwBoundConstants) -> Self {
        Self { c_l: c.c_l, c_kw: c.c_kw, c_hw: c.c_hw, c_loglip: c.c_loglip, c_d: c.c_d, c0: c.c0 }
    }
}

fn kinetic_result(value: f64, r: &KineticReport) -> KwKineticResult {
    KwKineticResult {
        value,
        dp: r.dp,
        cx: r.cx,
        cv: r.cv,
        lambda: r.lambda,
        residual: r.residual,
        regime_flag: r.regime_flag,
    }
}

unsafe fn c_str<'a>(s: *const c_char, name: &str) -> Result<&'a str, KwStatus> {
    if s.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        KwStatus::InvalidArgument
    })
}

unsafe fn measure<'a>(m: *const KwMeasure, name: &str) -> Result<&'a EmpiricalMeasure, KwStatus> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null(name))
}

/// Copies the last error message of this thread into `buf` (nul-terminated,
/// truncated to `len`). Returns the full message length, 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn kw_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Builds a measure from `n` atoms in dimension `dim`; coordinate arrays hold
/// `n * dim` values atom-major. A null `weights` means uniform.
///
/// # Safety
/// Array pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kw_measure_new(
    dim: usize,
    n: usize,
    positions: *const f64,
    velocities: *const f64,
    weights: *const f64,
    out: *mut *mut KwMeasure,
) -> KwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if positions.is_null() || velocities.is_null() {
            return Err(null("positions/velocities"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| fail(Error::InvalidParameter("size overflow".into())))?;
        let x = slice::from_raw_parts(positions, len).to_vec();
        let v = slice::from_raw_parts(velocities, len).to_vec();
        let m = if weights.is_null() {
            EmpiricalMeasure::uniform(dim, x, v)
        } else {
            EmpiricalMeasure::new(dim, x, v, slice::from_raw_parts(weights, n).to_vec())
        }
        .map_err(fail)?;
        *out = Box::into_raw(Box::new(KwMeasure(m)));
        Ok(())
    })
}

/// Reads a measure CSV (`x1..xd,v1..vd,w`).
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kw_measure_read_csv(path: *const c_char, out: *mut *mut KwMeasure) -> KwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let m = EmpiricalMeasure::read_path(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(KwMeasure(m)));
        Ok(())
    })
}

/// Number of atoms, 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kw_measure_len(m: *const KwMeasure) -> usize {
    m.as_ref().map_or(0, |m| m.0.len())
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kw_measure_free(m: *mut KwMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// `W_p` under the cost `|x-y|^p + |v-w|^p`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kw_wp_distance(
    a: *const KwMeasure,
    b: *const KwMeasure,
    p: f64,
    dom: KwDomain,
    out: *mut f64,
) -> KwStatus {
    guard(|| {
        let (a, b) = (measure(a, "a")?, measure(b, "b")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let params = Params::new(p, a.dim(), Sign::Repulsive, domain(dom)).map_err(fail)?;
        *out = wp_distance_with(a, b, &params, &OtConfig::default()).map_err(fail)?;
        Ok(())
    })
}

/// Kinetic Wasserstein distance `W_{lambda,p}`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kw_kinetic_distance(
    a: *const KwMeasure,
    b: *const KwMeasure,
    p: f64,
    dom: KwDomain,
    out: *mut KwKineticResult,
) -> KwStatus {
    guard(|| {
        let (a, b) = (measure(a, "a")?, measure(b, "b")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let params = Params::new(p, a.dim(), Sign::Repulsive, domain(dom)).map_err(fail)?;
        let kd = kinetic_distance_with(a, b, &params, &KineticConfig::default()).map_err(fail)?;
        *out = kinetic_result(kd.value, &kd.report);
        Ok(())
    })
}

/// Root of `s = lambda(s) cx + cv` (metric) or of the same divided by `p` (flow).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kw_solve_dp_implicit(cx: f64, cv: f64, p: f64, form: KwForm, out: *mut KwKineticResult) -> KwStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let form = match form {
            KwForm::Metric => Form::Metric,
            KwForm::Flow => Form::Flow,
        };
        let r = solve_dp_implicit(cx, cv, p, form).map_err(fail)?;
        *out = kinetic_result(r.dp, &r);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn kw_bound_constants_default() -> KwBoundConstants {
    let c = BoundConstants::default();
    KwBoundConstants { c_l: c.c_l, c_kw: c.c_kw, c_hw: c.c_hw, c_loglip: c.c_loglip, c_d: c.c_d, c0: c.c0 }
}

/// Double-exponential envelope at `int A = int_a`.
///
/// # Safety
/// `consts` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kw_loeper_bound(
    w0p: f64,
    int_a: f64,
    consts: *const KwBoundConstants,
    p: f64,
    d: usize,
    out: *mut f64,
) -> KwStatus {
    guard(|| {
        let c: BoundConstants = (*consts.as_ref().ok_or_else(|| null("consts"))?).into();
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        c.validate().map_err(fail)?;
        *out = loeper_bound(w0p, int_a, &c, p, d);
        Ok(())
    })
}

/// Kinetic envelope at `int A = int_a`.
///
/// # Safety
/// `consts` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kw_kinetic_bound(
    w0p: f64,
    int_a: f64,
    consts: *const KwBoundConstants,
    p: f64,
    out: *mut f64,
) -> KwStatus {
    guard(|| {
        let c: BoundConstants = (*consts.as_ref().ok_or_else(|| null("consts"))?).into();
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        c.validate().map_err(fail)?;
        *out = kinetic_bound(w0p, int_a, &c, p);
        Ok(())
    })
}

/// Validity horizons `log|log delta|` and `sqrt|log delta|`.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn kw_horizons(delta: f64, loeper: *mut f64, kinetic: *mut f64) -> KwStatus {
    guard(|| {
        let lo = loeper.as_mut().ok_or_else(|| null("loeper"))?;
        let ki = kinetic.as_mut().ok_or_else(|| null("kinetic"))?;
        (*lo, *ki) = horizon_compare(delta).map_err(fail)?;
        Ok(())
    })
}

/// Parses a TOML configuration; a null `text` gives the defaults.
///
/// # Safety
/// `text` must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kw_config_from_toml(text: *const c_char, out: *mut *mut KwConfig) -> KwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if text.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_toml_str(c_str(text, "text")?).map_err(fail)?
        };
        *out = Box::into_raw(Box::new(KwConfig(config)));
        Ok(())
    })
}

/// Overrides one key, e.g. `("sim.p", "3")`.
///
/// # Safety
/// `config` must be live; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn kw_config_set(config: *mut KwConfig, key: *const c_char, value: *const c_char) -> KwStatus {
    guard(|| {
        let config = config.as_mut().ok_or_else(|| null("config"))?;
        let (key, value) = (c_str(key, "key")?, c_str(value, "value")?);
        config.0 = config.0.with_override(key, value).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kw_config_free(config: *mut KwConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs a paired simulation, writing its files into `out_dir`. Returns
/// `BlowUp` with `summary` filled when the density cap was reached.
///
/// # Safety
/// `config` must be live, `out_dir` nul-terminated, `summary` null or writable.
#[no_mangle]
pub unsafe extern "C" fn kw_simulate(config: *const KwConfig, out_dir: *const c_char, summary: *mut KwRunSummary) -> KwStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let dir = c_str(out_dir, "out_dir")?;
        let result = cmd_simulate(&config.0, Path::new(dir)).map_err(fail)?;
        let last = result.diagnostics.last();
        let s = KwRunSummary {
            snapshots: result.diagnostics.len(),
            blew_up: result.blowup.is_some(),
            blowup_time: result.blowup.map_or(f64::NAN, |b| b.0),
            final_qp: last.map_or(f64::NAN, |d| d.qp),
            final_dp: last.map_or(f64::NAN, |d| d.dp),
            final_wp_sub: last.map_or(f64::NAN, |d| d.wp_sub),
        };
        if let Some(out) = summary.as_mut() {
            *out = s;
        }
        if let Some((t, sup)) = result.blowup {
            set_error(format!("density reached {sup} at t = {t}"));
            return Err(KwStatus::BlowUp);
        }
        Ok(())
    })
}
