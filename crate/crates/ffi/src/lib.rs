//! C ABI for fleet-census.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! and released by the matching `*_free`. Every fallible call returns an
//! [`FcStatus`]; on failure [`fc_last_error_message`] describes the problem
//! for the calling thread. Class codes are 0 light-duty, 1 medium-duty,
//! 2 heavy-duty, 3 non-logistic.
//!
//! The header is generated into `include/fleet_census.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fleet_census::evaluation::ConfusionMatrix;
use fleet_census::learner::{load_checkpoint, ClassifierHead, FeatureStore};
use fleet_census::taxonomy::{bundled_registry, classify_physical, PhysicalSpec, Registry};
use fleet_census::{Error, VehicleClass};

/// Number of vehicle classes.
pub const FC_CLASS_COUNT: usize = 4;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    NotFound = 5,
    Shape = 6,
    Format = 7,
    NoData = 8,
    Panic = 99,
}

/// Opaque make/model registry.
pub struct FcRegistry(Registry);

/// Opaque trained classifier head.
pub struct FcHead {
    head: ClassifierHead,
    backbone: CString,
}

/// Opaque 4x4 confusion matrix.
pub struct FcConfusion(ConfusionMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> FcStatus {
    match err {
        Error::Io { .. } => FcStatus::Io,
        Error::Parse { .. } => FcStatus::Parse,
        Error::NotFound(_) => FcStatus::NotFound,
        Error::Shape { .. } => FcStatus::Shape,
        Error::Format(_) => FcStatus::Format,
        _ => FcStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FcStatus, String)>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FcStatus::Panic
        }
    }
}

fn lift(err: Error) -> (FcStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (FcStatus, String) {
    (FcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Classify by gross vehicle mass (tonnes) and height (metres).
///
/// # Safety
/// `out_class` and `out_warning` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_classify_physical(
    gvm_tons: f64,
    height_m: f64,
    out_class: *mut u32,
    out_warning: *mut bool,
) -> FcStatus {
    guard(|| {
        if out_class.is_null() || out_warning.is_null() {
            return Err(null("output pointer"));
        }
        let spec = PhysicalSpec::new(gvm_tons, height_m).map_err(lift)?;
        let c = classify_physical(&spec).map_err(lift)?;
        *out_class = c.class.index() as u32;
        *out_warning = c.warning;
        Ok(())
    })
}

/// Load a registry TSV, or the bundled registry when `path` is NULL.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_registry_load(path: *const c_char, out: *mut *mut FcRegistry) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let registry = if path.is_null() {
            bundled_registry()
        } else {
            Registry::load(Path::new(c_str(path, "path")?)).map_err(lift)?
        };
        *out = Box::into_raw(Box::new(FcRegistry(registry)));
        Ok(())
    })
}

/// Number of models in the registry (0 for NULL).
///
/// # Safety
/// `registry` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_registry_len(registry: *const FcRegistry) -> usize {
    registry.as_ref().map_or(0, |r| r.0.len())
}

/// Class code of a registered make and model. Names are matched
/// case-insensitively with whitespace collapsed.
///
/// # Safety
/// `registry` must be a live handle, `make`/`model` NUL-terminated strings and
/// `out_class` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_registry_lookup(
    registry: *const FcRegistry,
    make: *const c_char,
    model: *const c_char,
    out_class: *mut u32,
) -> FcStatus {
    guard(|| {
        let r = registry.as_ref().ok_or_else(|| null("registry"))?;
        if out_class.is_null() {
            return Err(null("out_class"));
        }
        let class = r
            .0
            .lookup_model(c_str(make, "make")?, c_str(model, "model")?)
            .map_err(lift)?;
        *out_class = class.index() as u32;
        Ok(())
    })
}

/// # Safety
/// `registry` must be NULL or a handle from [`fc_registry_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_registry_free(registry: *mut FcRegistry) {
    if !registry.is_null() {
        drop(Box::from_raw(registry));
    }
}

/// Load a head checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_head_load(path: *const c_char, out: *mut *mut FcHead) -> FcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = load_checkpoint(Path::new(c_str(path, "path")?)).map_err(lift)?;
        let backbone = CString::new(ck.backbone.replace('\0', " ")).unwrap_or_default();
        *out = Box::into_raw(Box::new(FcHead { head: ck.head, backbone }));
        Ok(())
    })
}

/// Feature width the head expects (0 for NULL).
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_head_input_dim(head: *const FcHead) -> usize {
    head.as_ref().map_or(0, |h| h.head.input_dim())
}

/// Backbone id recorded in the checkpoint; owned by the handle.
///
/// # Safety
/// `head` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_head_backbone(head: *const FcHead) -> *const c_char {
    head.as_ref().map_or(ptr::null(), |h| h.backbone.as_ptr())
}

/// Predict one feature vector. `out_probabilities` may be NULL; otherwise it
/// receives [`FC_CLASS_COUNT`] values.
///
/// # Safety
/// `features` must point to `len` floats; output pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_head_predict(
    head: *const FcHead,
    features: *const f32,
    len: usize,
    out_class: *mut u32,
    out_probabilities: *mut f64,
) -> FcStatus {
    guard(|| {
        let h = head.as_ref().ok_or_else(|| null("head"))?;
        if features.is_null() {
            return Err(null("features"));
        }
        if out_class.is_null() {
            return Err(null("out_class"));
        }
        let x: Vec<f64> = std::slice::from_raw_parts(features, len)
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        let p = h.head.predict(&x).map_err(lift)?;
        *out_class = p.class.index() as u32;
        if !out_probabilities.is_null() {
            std::slice::from_raw_parts_mut(out_probabilities, FC_CLASS_COUNT).copy_from_slice(&p.probabilities);
        }
        Ok(())
    })
}

/// # Safety
/// `head` must be NULL or a handle from [`fc_head_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_head_free(head: *mut FcHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Validate a feature store file, reporting its row count and width.
///
/// # Safety
/// `path` must be a NUL-terminated string; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_feature_store_check(
    path: *const c_char,
    out_rows: *mut u64,
    out_dim: *mut usize,
) -> FcStatus {
    guard(|| {
        if out_rows.is_null() || out_dim.is_null() {
            return Err(null("output pointer"));
        }
        let s = FeatureStore::check_file(Path::new(c_str(path, "path")?)).map_err(lift)?;
        *out_rows = s.rows;
        *out_dim = s.dim;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fc_confusion_new() -> *mut FcConfusion {
    Box::into_raw(Box::new(FcConfusion(ConfusionMatrix::new())))
}

/// Count one (true, predicted) pair.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_confusion_add(m: *mut FcConfusion, truth: u32, predicted: u32) -> FcStatus {
    guard(|| {
        let m = m.as_mut().ok_or_else(|| null("matrix"))?;
        m.0.add(truth as usize, predicted as usize).map_err(lift)
    })
}

/// Copy the raw counts, row-major (true class by predicted class), into `out`.
///
/// # Safety
/// `m` must be a live handle; `out` must hold 16 values.
#[no_mangle]
pub unsafe extern "C" fn fc_confusion_counts(m: *const FcConfusion, out: *mut u64) -> FcStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, FC_CLASS_COUNT * FC_CLASS_COUNT);
        for (d, s) in dst.iter_mut().zip(m.0.counts.iter().flatten()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Row-normalized matrix, row-major. Rows without samples are all zero.
///
/// # Safety
/// `m` must be a live handle; `out` must hold 16 values.
#[no_mangle]
pub unsafe extern "C" fn fc_confusion_normalized(m: *const FcConfusion, out: *mut f64) -> FcStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, FC_CLASS_COUNT * FC_CLASS_COUNT);
        for (d, s) in dst.iter_mut().zip(m.0.normalized().iter().flatten()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Overall accuracy; [`FcStatus::NoData`] when nothing has been counted.
///
/// # Safety
/// `m` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_confusion_accuracy(m: *const FcConfusion, out: *mut f64) -> FcStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let acc = m.0.accuracy().ok_or((FcStatus::NoData, "confusion matrix is empty".to_string()))?;
        *out = acc;
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from [`fc_confusion_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_confusion_free(m: *mut FcConfusion) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Display name of a class code ("Light-duty", ...), or NULL when out of range.
#[no_mangle]
pub extern "C" fn fc_class_name(class: u32) -> *const c_char {
    const NAMES: [&str; FC_CLASS_COUNT] = ["Light-duty\0", "Medium-duty\0", "Heavy-duty\0", "Non logistic\0"];
    match VehicleClass::from_index(class as usize) {
        Some(c) => NAMES[c.index()].as_ptr().cast(),
        None => ptr::null(),
    }
}
