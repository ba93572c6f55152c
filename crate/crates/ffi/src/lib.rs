//! C ABI over `oodlab`.
//!
//! Models and datasets are opaque handles created by `*_load` and released by
//! `*_free`. Every fallible call returns an [`OodStatus`]; on failure the
//! message is available from [`ood_last_error`] on the same thread. Output
//! buffers are caller-allocated and their capacity is passed in elements.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use oodlab::checkpoint::{load_model, save_model};
use oodlab::data::{load_data, DataFile};
use oodlab::metrics::{detection_accuracy, max_prob_scores};
use oodlab::regularizers::{compute_betas, kl_uniform, squash_with, SquashForm, TrafficView};
use oodlab::{Error, Matrix, Model, RegularizerConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodStatus {
    OodOk = 0,
    OodErrNullPointer = 1,
    OodErrInvalidInput = 2,
    OodErrIo = 3,
    OodErrParse = 4,
    OodErrDivergence = 5,
    OodErrUtf8 = 6,
    OodErrBufferTooSmall = 7,
    OodErrPanic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodSquash {
    OodSquashCentered = 0,
    OodSquashShifted = 1,
}

/// Trained classifier.
pub struct OodModel(Model);

/// Feature matrix with optional labels.
pub struct OodDataset(DataFile);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(OodStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => OodStatus::OodErrIo,
            Error::Parse { .. } => OodStatus::OodErrParse,
            Error::Divergence { .. } => OodStatus::OodErrDivergence,
            _ => OodStatus::OodErrInvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: OodStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OodStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (OodStatus::OodOk, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(_) => (OodStatus::OodErrPanic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(
            OodStatus::OodErrNullPointer,
            format!("{what} is null"),
        ))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(OodStatus::OodErrUtf8, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(
    p: *mut T,
    len: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return Err(fail(
            OodStatus::OodErrBufferTooSmall,
            format!("{what} holds {len} elements, {needed} required"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn features_arg(features: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(OodStatus::OodErrInvalidInput, "rows * cols overflows"))?;
    Ok(Matrix::from_vec(
        rows,
        cols,
        slice_arg(features, n, "features")?.to_vec(),
    )?)
}

unsafe fn set_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    non_null(out, "output pointer")?;
    *out = value;
    Ok(())
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ood_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ood_model_load(path: *const c_char, out: *mut *mut OodModel) -> OodStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let model = load_model(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(OodModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ood_model_save(model: *const OodModel, path: *const c_char) -> OodStatus {
    guard(|| {
        non_null(model, "model")?;
        Ok(save_model(&(*model).0, &path_arg(path)?)?)
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ood_model_free(model: *mut OodModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ood_model_input_dim(model: *const OodModel, out: *mut usize) -> OodStatus {
    guard(|| {
        non_null(model, "model")?;
        set_out(out, (*model).0.spec().input_dim())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ood_model_num_classes(
    model: *const OodModel,
    out: *mut usize,
) -> OodStatus {
    guard(|| {
        non_null(model, "model")?;
        set_out(out, (*model).0.num_classes())
    })
}

/// Softmax probabilities for a row-major `rows x cols` feature block,
/// written row-major into `probs` (`rows * num_classes` elements).
///
/// # Safety
/// `features` must hold `rows * cols` values and `probs` `probs_len` values.
#[no_mangle]
pub unsafe extern "C" fn ood_model_predict(
    model: *const OodModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    probs: *mut f64,
    probs_len: usize,
) -> OodStatus {
    guard(|| {
        non_null(model, "model")?;
        let p = (*model).0.predict(&features_arg(features, rows, cols)?)?;
        out_arg(probs, probs_len, p.as_slice().len(), "probs")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Maximum softmax probability per row, the in-distribution score.
///
/// # Safety
/// `features` must hold `rows * cols` values and `scores` `scores_len` values.
#[no_mangle]
pub unsafe extern "C" fn ood_model_max_prob(
    model: *const OodModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    scores: *mut f64,
    scores_len: usize,
) -> OodStatus {
    guard(|| {
        non_null(model, "model")?;
        let s = max_prob_scores(&(*model).0, &features_arg(features, rows, cols)?)?;
        out_arg(scores, scores_len, s.len(), "scores")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Adaptive regularization weights `φ_γ(max_k p(k|x))` per row.
///
/// # Safety
/// `features` must hold `rows * cols` values and `betas` `betas_len` values.
#[no_mangle]
pub unsafe extern "C" fn ood_model_betas(
    model: *const OodModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    gamma: f64,
    form: OodSquash,
    betas: *mut f64,
    betas_len: usize,
) -> OodStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = features_arg(features, rows, cols)?;
        let reg = RegularizerConfig::adaptive(gamma).with_squash(squash_form(form));
        reg.validate()?;
        let b = compute_betas(&(*model).0, &TrafficView::new(&m), &reg)?;
        out_arg(betas, betas_len, b.len(), "betas")?.copy_from_slice(&b);
        Ok(())
    })
}

/// Loads a dataset file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_load(
    path: *const c_char,
    out: *mut *mut OodDataset,
) -> OodStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let data = load_data(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(OodDataset(data)));
        Ok(())
    })
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_free(data: *mut OodDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

fn dataset_features(d: &DataFile) -> &Matrix {
    match d {
        DataFile::Labeled(ds) => &ds.features,
        DataFile::Unlabeled(m) => m,
    }
}

/// Shape of a dataset; `labeled` is 1 when per-row labels are present.
///
/// # Safety
/// `data` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_shape(
    data: *const OodDataset,
    rows: *mut usize,
    cols: *mut usize,
    labeled: *mut i32,
) -> OodStatus {
    guard(|| {
        non_null(data, "data")?;
        let m = dataset_features(&(*data).0);
        set_out(rows, m.rows())?;
        set_out(cols, m.cols())?;
        set_out(labeled, matches!((*data).0, DataFile::Labeled(_)) as i32)
    })
}

/// Copies the row-major features into `out`.
///
/// # Safety
/// `data` must be a live handle and `out` hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_features(
    data: *const OodDataset,
    out: *mut f64,
    out_len: usize,
) -> OodStatus {
    guard(|| {
        non_null(data, "data")?;
        let m = dataset_features(&(*data).0).as_slice();
        out_arg(out, out_len, m.len(), "out")?.copy_from_slice(m);
        Ok(())
    })
}

/// Copies the labels into `out`; fails on unlabeled data.
///
/// # Safety
/// `data` must be a live handle and `out` hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ood_dataset_labels(
    data: *const OodDataset,
    out: *mut usize,
    out_len: usize,
) -> OodStatus {
    guard(|| {
        non_null(data, "data")?;
        let DataFile::Labeled(ds) = &(*data).0 else {
            return Err(fail(OodStatus::OodErrInvalidInput, "dataset has no labels"));
        };
        out_arg(out, out_len, ds.labels.len(), "out")?.copy_from_slice(&ds.labels);
        Ok(())
    })
}

/// Maximum softmax probability for every row of a dataset.
///
/// # Safety
/// Handles must be live and `scores` hold `scores_len` values.
#[no_mangle]
pub unsafe extern "C" fn ood_model_score_dataset(
    model: *const OodModel,
    data: *const OodDataset,
    scores: *mut f64,
    scores_len: usize,
) -> OodStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(data, "data")?;
        let s = max_prob_scores(&(*model).0, dataset_features(&(*data).0))?;
        out_arg(scores, scores_len, s.len(), "scores")?.copy_from_slice(&s);
        Ok(())
    })
}

fn squash_form(form: OodSquash) -> SquashForm {
    match form {
        OodSquash::OodSquashCentered => SquashForm::Centered,
        OodSquash::OodSquashShifted => SquashForm::Shifted,
    }
}

/// Squashing function `φ_γ(z)` for `z` in [0, 1]; `clamp` nonzero clips to [0, 1].
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ood_squash(
    z: f64,
    gamma: f64,
    form: OodSquash,
    clamp: i32,
    out: *mut f64,
) -> OodStatus {
    guard(|| set_out(out, squash_with(squash_form(form), z, gamma, clamp != 0)?))
}

/// `KL(U || p)` for one probability row of length `k`.
///
/// # Safety
/// `probs` must hold `k` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ood_kl_uniform(probs: *const f64, k: usize, out: *mut f64) -> OodStatus {
    guard(|| {
        let p = slice_arg(probs, k, "probs")?;
        if k == 0 || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(fail(
                OodStatus::OodErrInvalidInput,
                "probs must be a non-empty, non-negative row",
            ));
        }
        set_out(out, kl_uniform(p))
    })
}

/// Best balanced accuracy of the detector `score >= threshold => in`.
///
/// # Safety
/// `in_scores` and `out_scores` must hold `n_in` and `n_out` values.
#[no_mangle]
pub unsafe extern "C" fn ood_detection_accuracy(
    in_scores: *const f64,
    n_in: usize,
    out_scores: *const f64,
    n_out: usize,
    out: *mut f64,
) -> OodStatus {
    guard(|| {
        let a = slice_arg(in_scores, n_in, "in_scores")?;
        let b = slice_arg(out_scores, n_out, "out_scores")?;
        set_out(out, detection_accuracy(a, b)?)
    })
}
