//! C ABI over the completion toolkit.
//!
//! Tensors and models cross the boundary as opaque handles that the caller
//! releases with the matching `*_free`. Every fallible call returns a
//! [`TcStatus`]; on failure [`tc_last_error`] describes the most recent error
//! on the calling thread. Panics are caught at the boundary and reported as
//! [`TcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tencomp::ensemble::{load_ensemble, save_ensemble, EnsembleModel, MANIFEST_FILE};
use tencomp::harness::{complete, MethodSpec};
use tencomp::io::{read_tensor, write_tensor, SptnFile, TensorData};
use tencomp::metrics::{all_indices, mae};
use tencomp::models::{decode_checkpoint, encode_checkpoint, Checkpoint, CompletionModel, EntryModel, ModelInit};
use tencomp::smoothness::SmoothnessConfig;
use tencomp::tensor::{sample_observed, DenseTensor, Shape, SparseTensor};
use tencomp::training::{fit, TrainConfig};
use tencomp::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Training = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A dense tensor.
pub struct TcDense {
    inner: DenseTensor,
}

/// A set of observed entries.
pub struct TcSparse {
    inner: SparseTensor,
}

enum ModelInner {
    Single { model: CompletionModel, seed: u64 },
    Ensemble(EnsembleModel),
}

/// A fitted single model or ensemble.
pub struct TcModel {
    inner: ModelInner,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TcStatus {
    match e {
        Error::Io(_) => TcStatus::Io,
        Error::Format(_) | Error::Json(_) => TcStatus::Format,
        Error::InvalidShape(_) | Error::ShapeMismatch { .. } | Error::IndexOutOfBounds { .. } => TcStatus::Shape,
        Error::Ensemble(_) => TcStatus::Training,
        _ => TcStatus::InvalidArgument,
    }
}

struct Fail(TcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dense tensor from row-major `values`.
///
/// # Safety
/// `dims` must point to `order` sizes and `values` to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_new(
    dims: *const usize,
    order: usize,
    values: *const f64,
    len: usize,
    out: *mut *mut TcDense,
) -> TcStatus {
    guard(|| {
        let shape = Shape::new(slice_arg(dims, order, "dims")?.to_vec())?;
        let values = slice_arg(values, len, "values")?.to_vec();
        emit(out, TcDense {
            inner: DenseTensor::new(shape, values)?,
        })
    })
}

/// Reads a dense tensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_read(path: *const c_char, out: *mut *mut TcDense) -> TcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        match read_tensor(path)?.tensor {
            TensorData::Dense(d) => emit(out, TcDense { inner: d }),
            TensorData::Sparse(_) => Err(Fail(TcStatus::Format, format!("{path} holds a sparse tensor"))),
        }
    })
}

/// Writes a dense tensor file.
///
/// # Safety
/// `tensor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_write(tensor: *const TcDense, path: *const c_char) -> TcStatus {
    guard(|| {
        let t = handle(tensor, "tensor")?;
        let path = str_arg(path, "path")?;
        let name = Path::new(path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_tensor(path, &SptnFile::new(name, TensorData::Dense(t.inner.clone())))?;
        Ok(())
    })
}

/// Number of modes; 0 for a null handle.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_order(tensor: *const TcDense) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.shape().order())
}

/// Number of entries; 0 for a null handle.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_len(tensor: *const TcDense) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.shape().numel())
}

/// Copies the mode sizes into `dims` (capacity `cap`).
///
/// # Safety
/// `tensor` must be a live handle and `dims` writable for `cap` sizes.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_dims(tensor: *const TcDense, dims: *mut usize, cap: usize) -> TcStatus {
    guard(|| copy_out(handle(tensor, "tensor")?.inner.shape().dims(), dims, cap))
}

/// Copies the row-major values into `values` (capacity `cap`).
///
/// # Safety
/// `tensor` must be a live handle and `values` writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_values(tensor: *const TcDense, values: *mut f64, cap: usize) -> TcStatus {
    guard(|| copy_out(handle(tensor, "tensor")?.inner.values(), values, cap))
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, cap: usize) -> Result<(), Fail> {
    if cap < src.len() {
        return Err(Fail(
            TcStatus::BufferTooSmall,
            format!("buffer holds {cap}, need {}", src.len()),
        ));
    }
    if dst.is_null() && !src.is_empty() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Releases a dense tensor; null is ignored.
///
/// # Safety
/// `tensor` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tc_dense_free(tensor: *mut TcDense) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Reads observed entries; a dense file yields all of its entries.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_sparse_read(path: *const c_char, out: *mut *mut TcSparse) -> TcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        emit(out, TcSparse {
            inner: read_tensor(path)?.tensor.to_sparse(),
        })
    })
}

/// Writes observed entries.
///
/// # Safety
/// `tensor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tc_sparse_write(tensor: *const TcSparse, path: *const c_char) -> TcStatus {
    guard(|| {
        let t = handle(tensor, "tensor")?;
        let path = str_arg(path, "path")?;
        let name = Path::new(path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_tensor(path, &SptnFile::new(name, TensorData::Sparse(t.inner.clone())))?;
        Ok(())
    })
}

/// Draws `round(fraction · len)` entries of `dense` uniformly without
/// replacement.
///
/// # Safety
/// `dense` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_sample(
    dense: *const TcDense,
    fraction: f64,
    seed: u64,
    out: *mut *mut TcSparse,
) -> TcStatus {
    guard(|| {
        let d = handle(dense, "dense")?;
        emit(out, TcSparse {
            inner: sample_observed(&d.inner, fraction, seed)?,
        })
    })
}

/// Number of observed entries; 0 for a null handle.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_sparse_len(tensor: *const TcSparse) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.len())
}

/// Releases observed entries; null is ignored.
///
/// # Safety
/// `tensor` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tc_sparse_free(tensor: *mut TcSparse) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

unsafe fn train_config(train_json: *const c_char) -> Result<TrainConfig, Fail> {
    if train_json.is_null() {
        return Ok(TrainConfig::default());
    }
    let text = str_arg(train_json, "train config")?;
    serde_json::from_str(text).map_err(|e| Fail(TcStatus::InvalidArgument, format!("train config: {e}")))
}

/// Fits a CP model of `rank`; `lambda > 0` adds the smoothness penalty with
/// its default window and bandwidth. `train_json` (nullable) overrides the
/// training settings.
///
/// # Safety
/// `observed` must be a live handle, `train_json` null or a NUL-terminated
/// string, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_fit_cp(
    observed: *const TcSparse,
    rank: usize,
    lambda: f64,
    seed: u64,
    train_json: *const c_char,
    out: *mut *mut TcModel,
) -> TcStatus {
    guard(|| {
        let obs = handle(observed, "observed")?;
        let method = if lambda > 0.0 {
            MethodSpec::CpdS {
                rank,
                smoothness: SmoothnessConfig {
                    lambda,
                    ..SmoothnessConfig::default()
                },
            }
        } else {
            MethodSpec::Cpd { rank }
        };
        let model = fit_method(&method, &obs.inner, seed, &train_config(train_json)?)?;
        emit(out, model)
    })
}

/// Fits any model described by `method_json`, e.g.
/// `{"method":"tucker","ranks":[2,2,2]}` or an ensemble spec. The naive
/// baseline has no model; use [`tc_complete`] for it.
///
/// # Safety
/// `observed` must be a live handle, `method_json` a NUL-terminated string,
/// `train_json` null or a NUL-terminated string, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_fit(
    observed: *const TcSparse,
    method_json: *const c_char,
    seed: u64,
    train_json: *const c_char,
    out: *mut *mut TcModel,
) -> TcStatus {
    guard(|| {
        let obs = handle(observed, "observed")?;
        let method: MethodSpec = serde_json::from_str(str_arg(method_json, "method")?)
            .map_err(|e| Fail(TcStatus::InvalidArgument, format!("method: {e}")))?;
        let model = fit_method(&method, &obs.inner, seed, &train_config(train_json)?)?;
        emit(out, model)
    })
}

fn fit_method(method: &MethodSpec, observed: &SparseTensor, seed: u64, train: &TrainConfig) -> Result<TcModel, Fail> {
    use tencomp::models::ModelKind;
    let kind = match method {
        MethodSpec::Naive => {
            return Err(Fail(
                TcStatus::InvalidArgument,
                "the naive baseline has no model; use tc_complete".into(),
            ))
        }
        MethodSpec::Ensemble { ensemble } => {
            let spec = ensemble.clone().with_seed(seed);
            let model = tencomp::ensemble::train_ensemble(observed, &spec, train)?;
            return Ok(TcModel {
                inner: ModelInner::Ensemble(model),
            });
        }
        MethodSpec::Cpd { rank } | MethodSpec::CpdS { rank, .. } => ModelKind::cp(*rank),
        MethodSpec::Tucker { ranks } => ModelKind::Tucker { ranks: ranks.clone() },
        MethodSpec::TensorTrain { ranks } => ModelKind::TensorTrain { ranks: ranks.clone() },
        MethodSpec::Neural { rank, channels, hidden } => ModelKind::Neural {
            rank: *rank,
            channels: *channels,
            hidden: *hidden,
        },
    };
    let mut cfg = train.clone().with_seed(seed);
    if let MethodSpec::CpdS { smoothness, .. } = method {
        cfg.regularizer = Some(smoothness.clone());
    }
    let trace = fit(&kind, observed, &ModelInit::new(seed), &cfg)?;
    Ok(TcModel {
        inner: ModelInner::Single {
            model: trace.model,
            seed,
        },
    })
}

/// Completes `observed` with any method (naive included) and returns the
/// dense prediction.
///
/// # Safety
/// As [`tc_fit`], with `out` a writable dense handle slot.
#[no_mangle]
pub unsafe extern "C" fn tc_complete(
    observed: *const TcSparse,
    method_json: *const c_char,
    seed: u64,
    train_json: *const c_char,
    out: *mut *mut TcDense,
) -> TcStatus {
    guard(|| {
        let obs = handle(observed, "observed")?;
        let method: MethodSpec = serde_json::from_str(str_arg(method_json, "method")?)
            .map_err(|e| Fail(TcStatus::InvalidArgument, format!("method: {e}")))?;
        let c = complete(&method, &obs.inner, seed, &train_config(train_json)?)?;
        emit(out, TcDense { inner: c.prediction })
    })
}

/// Prediction at one index.
///
/// # Safety
/// `model` must be a live handle, `index` must point to `order` indices and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_model_predict(
    model: *const TcModel,
    index: *const usize,
    order: usize,
    out: *mut f64,
) -> TcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let idx = slice_arg(index, order, "index")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = match &m.inner {
            ModelInner::Single { model, .. } => model.predict_entry(idx)?,
            ModelInner::Ensemble(e) => tencomp::ensemble::predict_ensemble(e, idx)?,
        };
        Ok(())
    })
}

/// Every entry of the modelled tensor.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_model_reconstruct(model: *const TcModel, out: *mut *mut TcDense) -> TcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let dense = match &m.inner {
            ModelInner::Single { model, .. } => model.reconstruct(model.shape())?,
            ModelInner::Ensemble(e) => e.reconstruct()?,
        };
        emit(out, TcDense { inner: dense })
    })
}

/// Saves a single model as a checkpoint file, or an ensemble into the
/// directory `path`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tc_model_save(model: *const TcModel, path: *const c_char) -> TcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = str_arg(path, "path")?;
        match &m.inner {
            ModelInner::Single { model, seed } => {
                let text = encode_checkpoint(&Checkpoint {
                    seed: *seed,
                    model: model.clone(),
                });
                tencomp::io::write_atomic(path, text.as_bytes())?;
            }
            ModelInner::Ensemble(e) => save_ensemble(e, path)?,
        }
        Ok(())
    })
}

/// Loads a checkpoint file or a saved ensemble directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_model_load(path: *const c_char, out: *mut *mut TcModel) -> TcStatus {
    guard(|| {
        let path = Path::new(str_arg(path, "path")?);
        let inner = if path.join(MANIFEST_FILE).is_file() {
            ModelInner::Ensemble(load_ensemble(path)?)
        } else {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            let ckpt = decode_checkpoint(&text)?;
            ModelInner::Single {
                model: ckpt.model,
                seed: ckpt.seed,
            }
        };
        emit(out, TcModel { inner })
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tc_model_free(model: *mut TcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean absolute error of `prediction` against `truth` over the entries not
/// in `observed`, or over every entry when `observed` is null.
///
/// # Safety
/// `prediction` and `truth` must be live handles, `observed` null or a live
/// handle, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_mae(
    prediction: *const TcDense,
    truth: *const TcDense,
    observed: *const TcSparse,
    out: *mut f64,
) -> TcStatus {
    guard(|| {
        let p = handle(prediction, "prediction")?;
        let t = handle(truth, "truth")?;
        let over = match observed.as_ref() {
            Some(o) => o.inner.unobserved_flat(),
            None => all_indices(t.inner.shape().numel()),
        };
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = mae(&p.inner, &t.inner, &over)?;
        Ok(())
    })
}
