//! C interface to `irs-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`IrsStatus`]; on failure [`irs_last_error`] describes the problem. Matrices
//! are column-major `f64` with one sample per column.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::DMatrix;

use irs_core::coding::{self, CodingScheme};
use irs_core::dataset::{self, FeatureMatrix, SyntheticSpec};
use irs_core::evaluation::{cmc, mean_ap, rank_all};
use irs_core::incremental::IncrementalState;
use irs_core::regression::{self, EmbeddingModel, Kernel};
use irs_core::IrsError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrsCoding {
    OneHot = 0,
    Fda = 1,
    Random = 2,
}

impl From<IrsCoding> for CodingScheme {
    fn from(c: IrsCoding) -> Self {
        match c {
            IrsCoding::OneHot => CodingScheme::OneHot,
            IrsCoding::Fda => CodingScheme::Fda,
            IrsCoding::Random => CodingScheme::Random,
        }
    }
}

/// Feature matrix with identity and camera labels.
pub struct IrsFeatures(FeatureMatrix);

/// Fitted embedding model (linear or kernel).
pub struct IrsModel(EmbeddingModel);

/// Running incremental state.
pub struct IrsIncremental(IncrementalState);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(IrsStatus, String);

impl From<IrsError> for Failure {
    fn from(e: IrsError) -> Self {
        let status = match &e {
            IrsError::Io { .. } => IrsStatus::Io,
            IrsError::Json { .. } | IrsError::Format { .. } | IrsError::PayloadTruncated { .. } => IrsStatus::Format,
            IrsError::DimensionMismatch(_) | IrsError::LabelCount { .. } => IrsStatus::DimensionMismatch,
            IrsError::Singular { .. } | IrsError::Numerical(_) => IrsStatus::Numerical,
            _ => IrsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: IrsStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IrsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IrsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            IrsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(IrsStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(IrsStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn matrix_arg(data: *const f64, d: usize, n: usize) -> Result<DMatrix<f64>, Failure> {
    non_null(data, "data")?;
    let len = d
        .checked_mul(n)
        .ok_or_else(|| fail(IrsStatus::InvalidArgument, "d * n overflows"))?;
    Ok(DMatrix::from_column_slice(d, n, std::slice::from_raw_parts(data, len)))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn copy_out(src: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    non_null(out, "out")?;
    if out_len < src.len() {
        return Err(fail(
            IrsStatus::BufferTooSmall,
            format!("buffer holds {out_len} values, {} needed", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn irs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies a `d × n` column-major matrix and its `n` labels.
///
/// # Safety
/// `data` must hold `d * n` values and `ids`, `cams` `n` values each.
#[no_mangle]
pub unsafe extern "C" fn irs_features_from_raw(
    data: *const f64,
    d: usize,
    n: usize,
    ids: *const u32,
    cams: *const u32,
    out: *mut *mut IrsFeatures,
) -> IrsStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(ids, "ids")?;
        non_null(cams, "cams")?;
        let m = matrix_arg(data, d, n)?;
        let ids = std::slice::from_raw_parts(ids, n).to_vec();
        let cams = std::slice::from_raw_parts(cams, n).to_vec();
        put(out, IrsFeatures(FeatureMatrix::new(m, ids, cams)?));
        Ok(())
    })
}

/// Loads a dataset manifest.
///
/// # Safety
/// `manifest` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irs_features_load(manifest: *const c_char, out: *mut *mut IrsFeatures) -> IrsStatus {
    guard(|| {
        non_null(out, "out")?;
        put(out, IrsFeatures(dataset::load_features(&path_arg(manifest)?)?));
        Ok(())
    })
}

/// Generates a synthetic two-camera dataset.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn irs_features_synthetic(
    num_ids: usize,
    imgs_per_id_per_cam: usize,
    d: usize,
    view_shift_scale: f64,
    noise_scale: f64,
    seed: u64,
    out: *mut *mut IrsFeatures,
) -> IrsStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = SyntheticSpec {
            num_ids,
            imgs_per_id_per_cam,
            d,
            view_shift_scale,
            noise_scale,
            seed,
        };
        put(out, IrsFeatures(dataset::gen_synthetic(&spec)?));
        Ok(())
    })
}

/// # Safety
/// `f` must be a live handle; `d` and `n` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_features_dims(f: *const IrsFeatures, d: *mut usize, n: *mut usize) -> IrsStatus {
    guard(|| {
        non_null(f, "features")?;
        non_null(d, "d")?;
        non_null(n, "n")?;
        *d = (*f).0.dim();
        *n = (*f).0.len();
        Ok(())
    })
}

/// Copies the feature data (`d * n` values, column-major).
///
/// # Safety
/// `f` must be a live handle; `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn irs_features_data(f: *const IrsFeatures, out: *mut f64, out_len: usize) -> IrsStatus {
    guard(|| {
        non_null(f, "features")?;
        copy_out((*f).0.data().as_slice(), out, out_len)
    })
}

/// # Safety
/// `f` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn irs_features_free(f: *mut IrsFeatures) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Batch ridge fit onto the chosen target coding.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_fit_linear(
    f: *const IrsFeatures,
    coding: IrsCoding,
    lambda: f64,
    seed: u64,
    out: *mut *mut IrsModel,
) -> IrsStatus {
    guard(|| {
        non_null(f, "features")?;
        non_null(out, "out")?;
        let fm = &(*f).0;
        let y = coding::encode(coding.into(), fm.ids(), None, seed)?;
        put(out, IrsModel(regression::fit_linear(fm, &y, lambda)?));
        Ok(())
    })
}

/// Kernel ridge fit with an RBF kernel; `bandwidth <= 0` selects the median
/// pairwise distance.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_fit_kernel_rbf(
    f: *const IrsFeatures,
    coding: IrsCoding,
    lambda: f64,
    bandwidth: f64,
    seed: u64,
    out: *mut *mut IrsModel,
) -> IrsStatus {
    guard(|| {
        non_null(f, "features")?;
        non_null(out, "out")?;
        let fm = &(*f).0;
        let y = coding::encode(coding.into(), fm.ids(), None, seed)?;
        let bw = if bandwidth > 0.0 { bandwidth } else { regression::median_bandwidth(fm.data())? };
        put(out, IrsModel(regression::fit_kernel_with(fm, &y, lambda, Kernel::rbf(bw)?)?));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn irs_model_dims(m: *const IrsModel, input_dim: *mut usize, output_dim: *mut usize) -> IrsStatus {
    guard(|| {
        non_null(m, "model")?;
        non_null(input_dim, "input_dim")?;
        non_null(output_dim, "output_dim")?;
        *input_dim = (*m).0.input_dim();
        *output_dim = (*m).0.output_dim();
        Ok(())
    })
}

/// Embeds `n` samples (`d × n`, column-major) into `out`, an `n × m`
/// column-major matrix.
///
/// # Safety
/// `x` must hold `d * n` values and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn irs_model_embed(
    m: *const IrsModel,
    x: *const f64,
    d: usize,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> IrsStatus {
    guard(|| {
        non_null(m, "model")?;
        let e = (*m).0.embed_matrix(&matrix_arg(x, d, n)?)?;
        copy_out(e.as_slice(), out, out_len)
    })
}

/// # Safety
/// `m` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn irs_model_save(m: *const IrsModel, path: *const c_char) -> IrsStatus {
    guard(|| {
        non_null(m, "model")?;
        (*m).0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_model_load(path: *const c_char, out: *mut *mut IrsModel) -> IrsStatus {
    guard(|| {
        non_null(out, "out")?;
        put(out, IrsModel(EmbeddingModel::load(&path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn irs_model_free(m: *mut IrsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Ranks `gallery` for every probe and writes the CMC curve (one value per
/// gallery sample) and mAP.
///
/// # Safety
/// Handles must be live; `cmc_out` must hold `cmc_len` values; `map_out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn irs_evaluate(
    m: *const IrsModel,
    probes: *const IrsFeatures,
    gallery: *const IrsFeatures,
    cmc_out: *mut f64,
    cmc_len: usize,
    map_out: *mut f64,
) -> IrsStatus {
    guard(|| {
        non_null(m, "model")?;
        non_null(probes, "probes")?;
        non_null(gallery, "gallery")?;
        non_null(map_out, "map_out")?;
        let (p, g) = (&(*probes).0, &(*gallery).0);
        let rl = rank_all(&(*m).0, p, g)?;
        let curve = cmc(&rl, p.ids(), g.ids())?;
        let map = mean_ap(&rl, p.ids(), g.ids())?;
        copy_out(&curve.values, cmc_out, cmc_len)?;
        *map_out = map;
        Ok(())
    })
}

/// Starts an incremental OneHot model from labeled features. Needs
/// `lambda > 0`.
///
/// # Safety
/// `f` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_init(
    f: *const IrsFeatures,
    lambda: f64,
    out: *mut *mut IrsIncremental,
) -> IrsStatus {
    guard(|| {
        non_null(f, "features")?;
        non_null(out, "out")?;
        put(out, IrsIncremental(IncrementalState::init_onehot(&(*f).0, lambda)?));
        Ok(())
    })
}

/// Folds in `n` labeled samples; unseen labels become new classes.
///
/// # Safety
/// `s` must be a live handle, `x` hold `d * n` values and `labels` `n`.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_update(
    s: *mut IrsIncremental,
    x: *const f64,
    d: usize,
    n: usize,
    labels: *const u32,
) -> IrsStatus {
    guard(|| {
        non_null(s, "state")?;
        non_null(labels, "labels")?;
        let xm = matrix_arg(x, d, n)?;
        (*s).0.update_labeled(&xm, std::slice::from_raw_parts(labels, n))?;
        Ok(())
    })
}

/// Feature dimension and current number of classes.
///
/// # Safety
/// `s` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_dims(s: *const IrsIncremental, d: *mut usize, m: *mut usize) -> IrsStatus {
    guard(|| {
        non_null(s, "state")?;
        non_null(d, "d")?;
        non_null(m, "m")?;
        *d = (*s).0.dim();
        *m = (*s).0.projection().ncols();
        Ok(())
    })
}

/// Copies the `d × m` projection, column-major.
///
/// # Safety
/// `s` must be a live handle; `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_projection(s: *const IrsIncremental, out: *mut f64, out_len: usize) -> IrsStatus {
    guard(|| {
        non_null(s, "state")?;
        copy_out((*s).0.projection().as_slice(), out, out_len)
    })
}

/// Snapshot of the current projection as a standalone model.
///
/// # Safety
/// `s` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_model(s: *const IrsIncremental, out: *mut *mut IrsModel) -> IrsStatus {
    guard(|| {
        non_null(s, "state")?;
        non_null(out, "out")?;
        put(out, IrsModel((*s).0.snapshot()));
        Ok(())
    })
}

/// # Safety
/// `s` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_save(s: *const IrsIncremental, path: *const c_char) -> IrsStatus {
    guard(|| {
        non_null(s, "state")?;
        (*s).0.save_checkpoint(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_load(path: *const c_char, out: *mut *mut IrsIncremental) -> IrsStatus {
    guard(|| {
        non_null(out, "out")?;
        put(out, IrsIncremental(IncrementalState::load_checkpoint(&path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn irs_incremental_free(s: *mut IrsIncremental) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
