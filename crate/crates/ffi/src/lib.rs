//! C ABI over the `scarf` library.
//!
//! Every fallible function returns a [`ScarfStatus`]. On failure the message
//! is available from [`scarf_last_error`] on the same thread until the next
//! call into the library from that thread. Objects handed out through `out`
//! pointers are owned by the caller and released with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use scarf::data::{load_dataset, ProcessedDataset, Schema};
use scarf::eval::synthetic::{gaussian_mixture, MixtureSpec};
use scarf::eval::{run_trial, welch_t_test, ExperimentConfig, Method, Setting};
use scarf::losses::infonce;
use scarf::nn::Matrix;
use scarf::ScarfError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScarfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Degenerate = 4,
    Config = 5,
    Schema = 6,
    Ingest = 7,
    Io = 8,
    Parse = 9,
    State = 10,
    Panic = 11,
}

impl From<&ScarfError> for ScarfStatus {
    fn from(e: &ScarfError) -> Self {
        match e {
            ScarfError::Shape { .. } => ScarfStatus::Shape,
            ScarfError::Validation(_) => ScarfStatus::InvalidArgument,
            ScarfError::State(_) => ScarfStatus::State,
            ScarfError::Config(_) => ScarfStatus::Config,
            ScarfError::Degenerate(_) => ScarfStatus::Degenerate,
            ScarfError::Ingest { .. } => ScarfStatus::Ingest,
            ScarfError::Schema(_) => ScarfStatus::Schema,
            ScarfError::Io { .. } => ScarfStatus::Io,
            ScarfError::Parse(_) => ScarfStatus::Parse,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

enum FfiError {
    Null(&'static str),
    Arg(String),
    Lib(ScarfError),
}

impl From<ScarfError> for FfiError {
    fn from(e: ScarfError) -> Self {
        FfiError::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> ScarfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScarfStatus::Ok,
        Ok(Err(FfiError::Null(what))) => {
            set_error(format!("{what} is null"));
            ScarfStatus::NullPointer
        }
        Ok(Err(FfiError::Arg(msg))) => {
            set_error(msg);
            ScarfStatus::InvalidArgument
        }
        Ok(Err(FfiError::Lib(e))) => {
            let status = ScarfStatus::from(&e);
            set_error(e.to_string());
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ScarfStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(FfiError::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn string(ptr: *const c_char, what: &'static str) -> Result<String, FfiError> {
    if ptr.is_null() {
        return Err(FfiError::Null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_owned)
        .map_err(|e| FfiError::Arg(format!("{what} is not UTF-8: {e}")))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &'static str) -> Result<&'a mut T, FfiError> {
    ptr.as_mut().ok_or(FfiError::Null(what))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn scarf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scarf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScarfWelch {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided Welch t-test of samples `a` and `b`.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn scarf_welch_t_test(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut ScarfWelch,
) -> ScarfStatus {
    guard(|| {
        let a = slice(a, na, "a")?;
        let b = slice(b, nb, "b")?;
        let out = out_ref(out, "out")?;
        let r = welch_t_test(a, b)?;
        *out = ScarfWelch { t: r.t, df: r.df, p: r.p };
        Ok(())
    })
}

/// InfoNCE loss of an `n × n` row-major similarity matrix at temperature
/// `tau`. `grad`, when non-null, receives the `n × n` gradient.
///
/// # Safety
/// `s` must point to `n*n` doubles, `loss` must be writable and `grad` must
/// be null or point to `n*n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn scarf_infonce(
    s: *const f64,
    n: usize,
    tau: f64,
    loss: *mut f64,
    grad: *mut f64,
) -> ScarfStatus {
    guard(|| {
        let len = n.checked_mul(n).ok_or_else(|| FfiError::Arg("n*n overflows".into()))?;
        let data = slice(s, len, "s")?;
        let loss = out_ref(loss, "loss")?;
        let m = Matrix::from_vec(n, n, data.to_vec())?;
        let (l, g) = infonce(&m, tau)?;
        *loss = l;
        if !grad.is_null() {
            std::slice::from_raw_parts_mut(grad, len).copy_from_slice(g.data());
        }
        Ok(())
    })
}

/// Encoded dataset, ready for trials.
pub struct ScarfDataset {
    inner: ProcessedDataset,
}

/// Loads a CSV with its TOML schema.
///
/// # Safety
/// `csv_path` and `schema_path` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn scarf_dataset_load(
    csv_path: *const c_char,
    schema_path: *const c_char,
    out: *mut *mut ScarfDataset,
) -> ScarfStatus {
    guard(|| {
        let csv = PathBuf::from(string(csv_path, "csv_path")?);
        let schema = PathBuf::from(string(schema_path, "schema_path")?);
        let out = out_ref(out, "out")?;
        let loaded = load_dataset(csv, &Schema::load(schema)?)?;
        *out = Box::into_raw(Box::new(ScarfDataset { inner: loaded.dataset }));
        Ok(())
    })
}

/// Two-class Gaussian mixture with `rows` rows and `features` numerical
/// columns drawn from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scarf_dataset_synthetic(
    rows: usize,
    features: usize,
    seed: u64,
    out: *mut *mut ScarfDataset,
) -> ScarfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = MixtureSpec {
            rows,
            features,
            seed,
            ..MixtureSpec::default()
        };
        *out = Box::into_raw(Box::new(ScarfDataset { inner: gaussian_mixture(&spec)? }));
        Ok(())
    })
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scarf_dataset_rows(ds: *const ScarfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_rows())
}

/// Encoded feature width, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scarf_dataset_width(ds: *const ScarfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.encoded_width())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scarf_dataset_free(ds: *mut ScarfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Experiment configuration.
pub struct ScarfConfig {
    inner: ExperimentConfig,
}

/// Defaults, optionally overridden by `toml` (may be null).
///
/// # Safety
/// `toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scarf_config_new(toml: *const c_char, out: *mut *mut ScarfConfig) -> ScarfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let inner = if toml.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_toml_str(&string(toml, "toml")?)?
        };
        inner.validate()?;
        *out = Box::into_raw(Box::new(ScarfConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scarf_config_free(cfg: *mut ScarfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScarfTrialResult {
    pub test_accuracy: f64,
    pub seed: u64,
    pub epochs_used: usize,
    /// -1 when the method has no pre-training stage.
    pub pretrain_epochs: i64,
}

/// Runs one trial of `method` in `setting` ("full", "noise30" or "semi25").
///
/// # Safety
/// `cfg` and `ds` must be live handles, the strings NUL-terminated and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn scarf_run_trial(
    cfg: *const ScarfConfig,
    ds: *const ScarfDataset,
    dataset_id: *const c_char,
    method: *const c_char,
    setting: *const c_char,
    trial: usize,
    out: *mut ScarfTrialResult,
) -> ScarfStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or(FfiError::Null("cfg"))?;
        let ds = ds.as_ref().ok_or(FfiError::Null("ds"))?;
        let id = string(dataset_id, "dataset_id")?;
        let method: Method = string(method, "method")?.parse()?;
        let setting: Setting = string(setting, "setting")?.parse()?;
        let out = out_ref(out, "out")?;
        let t = run_trial(&id, &ds.inner, &method, setting, trial, &cfg.inner)?;
        *out = ScarfTrialResult {
            test_accuracy: t.record.test_accuracy,
            seed: t.record.seed,
            epochs_used: t.record.epochs_used,
            pretrain_epochs: t.record.pretrain_epochs.map_or(-1, |e| e as i64),
        };
        Ok(())
    })
}
