//! C interface to `refpose`.
//!
//! Every fallible function returns an [`RpStatus`] and writes its result
//! through an out pointer. On failure the message is kept per thread and
//! can be read with [`rp_last_error`]. Handles are opaque and must be
//! released with their `_free` function; passing NULL to a `_free`
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use refpose::io::read_ply;
use refpose::pipeline::{PipelineConfig, PoseEstimate, PosePipeline};
use refpose::{Error, Point3, PointCloud};

/// Result codes. `RP_STATUS_OK` is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    DegenerateGeometry = 5,
    NoPose = 6,
    DimensionMismatch = 7,
    Panic = 8,
}

/// A point cloud.
pub struct RpCloud(PointCloud);

/// A configured pose estimator.
pub struct RpPipeline(PosePipeline);

/// The result of one estimation.
pub struct RpEstimate(PoseEstimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn classify(e: &Error) -> RpStatus {
    match e {
        Error::Io(_) => RpStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Config { .. } => RpStatus::Parse,
        Error::DegenerateGeometry(_) | Error::ZeroScale | Error::ZeroVector => RpStatus::DegenerateGeometry,
        Error::NoValidHypothesis { .. } | Error::InsufficientCorrespondences { .. } => RpStatus::NoPose,
        Error::DimensionMismatch { .. } => RpStatus::DimensionMismatch,
        _ => RpStatus::InvalidArgument,
    }
}

struct Fail(RpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(classify(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RpStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RpStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(RpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out<T>(slot: *mut *mut T, value: T) -> Result<(), Fail> {
    if slot.is_null() {
        return Err(null("output pointer"));
    }
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn rp_status_string(status: RpStatus) -> *const c_char {
    let s: &'static CStr = match status {
        RpStatus::Ok => c"ok",
        RpStatus::NullPointer => c"null pointer",
        RpStatus::InvalidArgument => c"invalid argument",
        RpStatus::Io => c"i/o error",
        RpStatus::Parse => c"parse error",
        RpStatus::DegenerateGeometry => c"degenerate geometry",
        RpStatus::NoPose => c"no pose found",
        RpStatus::DimensionMismatch => c"dimension mismatch",
        RpStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Builds a cloud from `n` packed `x, y, z` triples.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn rp_cloud_new(xyz: *const f64, n: usize, out_cloud: *mut *mut RpCloud) -> RpStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let flat = std::slice::from_raw_parts(xyz, 3 * n);
        let points = flat.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        out(out_cloud, RpCloud(PointCloud::new(points)?))
    })
}

/// Reads an ASCII or binary PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rp_cloud_load_ply(path: *const c_char, out_cloud: *mut *mut RpCloud) -> RpStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        out(out_cloud, RpCloud(read_ply(Path::new(path))?))
    })
}

/// Number of points, or 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_cloud_len(cloud: *const RpCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_cloud_free(cloud: *mut RpCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Creates a pipeline from a JSON configuration; NULL selects the
/// defaults. Missing keys take their default values.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rp_pipeline_new(config_json: *const c_char, out_pipeline: *mut *mut RpPipeline) -> RpStatus {
    guard(|| {
        let cfg: PipelineConfig = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?).map_err(Error::from)?
        };
        out(out_pipeline, RpPipeline(PosePipeline::new(cfg)?))
    })
}

/// # Safety
/// `pipeline` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_pipeline_free(pipeline: *mut RpPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Estimates the pose mapping `query` onto `reference`. The result depends
/// only on the inputs and the configured seed.
///
/// # Safety
/// All handles must be live; `out_estimate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_pipeline_estimate(
    pipeline: *const RpPipeline,
    query: *const RpCloud,
    reference: *const RpCloud,
    out_estimate: *mut *mut RpEstimate,
) -> RpStatus {
    guard(|| {
        let pipeline = get(pipeline, "pipeline")?;
        let q = get(query, "query")?;
        let p = get(reference, "reference")?;
        out(out_estimate, RpEstimate(pipeline.0.estimate(&q.0, &p.0)?))
    })
}

/// Copies the rotation (row-major 3×3) and translation of the estimate.
///
/// # Safety
/// `rotation` must hold 9 doubles and `translation` 3.
#[no_mangle]
pub unsafe extern "C" fn rp_estimate_pose(
    estimate: *const RpEstimate,
    rotation: *mut f64,
    translation: *mut f64,
) -> RpStatus {
    guard(|| {
        let e = get(estimate, "estimate")?;
        if rotation.is_null() || translation.is_null() {
            return Err(null("output array"));
        }
        let rows = e.0.pose.rotation_rows();
        let r = std::slice::from_raw_parts_mut(rotation, 9);
        for (i, row) in rows.iter().enumerate() {
            r[3 * i..3 * i + 3].copy_from_slice(row);
        }
        let t = e.0.pose.translation();
        std::slice::from_raw_parts_mut(translation, 3).copy_from_slice(&[t.x, t.y, t.z]);
        Ok(())
    })
}

/// Number of correspondences behind the final refinement, or 0 for NULL.
///
/// # Safety
/// `estimate` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_estimate_correspondences(estimate: *const RpEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.0.n_corr)
}

/// Weighted RMS residual of the final pose, or NaN for NULL.
///
/// # Safety
/// `estimate` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_estimate_residual(estimate: *const RpEstimate) -> f64 {
    estimate.as_ref().map_or(f64::NAN, |e| e.0.residual)
}

/// The full estimate as JSON. Release the string with [`rp_string_free`].
///
/// # Safety
/// `estimate` must be live; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_estimate_to_json(estimate: *const RpEstimate, out_json: *mut *mut c_char) -> RpStatus {
    guard(|| {
        let e = get(estimate, "estimate")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let text = serde_json::to_string(&e.0).map_err(Error::from)?;
        *out_json = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `estimate` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_estimate_free(estimate: *mut RpEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn rp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
