//! C interface to the `dedge-agm` stereo matcher.
//!
//! Every function returns a [`DagmStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`dagm_last_error`]. Models are
//! opaque handles created by [`dagm_model_load`] and released with
//! [`dagm_model_free`]. Images cross the boundary as row-major `float`
//! planes of `height * width` values.

use dedge_agm::data::{depth_edge_gt, read_pfm, write_pfm, Grid};
use dedge_agm::loss::MetricsAccumulator;
use dedge_agm::network::predict;
use dedge_agm::train::Checkpoint;
use dedge_agm::{Error, Tensor};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DagmStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// Tensor or image extents did not match.
    Shape = 3,
    /// A file could not be read or written.
    Io = 4,
    /// A file had malformed contents.
    Format = 5,
    /// A checkpoint was malformed or did not match its configuration.
    Checkpoint = 6,
    /// The caller's buffer is too small; the required size was reported.
    BufferTooSmall = 7,
    /// An internal error (a bug).
    Internal = 8,
}

/// Opaque trained model.
pub struct DagmModel {
    ckpt: Checkpoint,
}

/// Evaluation metrics; percentages are in `[0, 100]`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DagmMetrics {
    pub epe: f64,
    pub d1_all: f64,
    pub d1_and: f64,
    pub d1_or: f64,
    pub out_noc: f64,
    pub bad2: f64,
    pub bad4: f64,
    pub bad5: f64,
    pub n_valid: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DagmStatus {
    match e {
        Error::AxisMismatch { .. } | Error::Shape { .. } => DagmStatus::Shape,
        Error::InvalidArgument(_) | Error::Cycle | Error::NonFiniteLoss { .. } => {
            DagmStatus::InvalidArgument
        }
        Error::Format { .. } => DagmStatus::Format,
        Error::Checkpoint(_) => DagmStatus::Checkpoint,
        Error::Io { .. } => DagmStatus::Io,
    }
}

struct Fail(DagmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DagmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DagmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DagmStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DagmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DagmStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn extent(height: u32, width: u32) -> Result<usize, Fail> {
    if height == 0 || width == 0 {
        return Err(Fail(
            DagmStatus::InvalidArgument,
            "height and width must be positive".into(),
        ));
    }
    (height as usize)
        .checked_mul(width as usize)
        .ok_or_else(|| Fail(DagmStatus::InvalidArgument, "image too large".into()))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dagm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dagm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint into a new model handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagm_model_load(
    path: *const c_char,
    out: *mut *mut DagmModel,
) -> DagmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let ckpt = Checkpoint::load(&path)?;
        *out = Box::into_raw(Box::new(DagmModel { ckpt }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`dagm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dagm_model_free(model: *mut DagmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Largest disparity the model can predict (exclusive upper bound).
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagm_model_max_disparity(
    model: *const DagmModel,
    out: *mut u32,
) -> DagmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.ckpt.config.max_disparity as u32;
        Ok(())
    })
}

/// Predicts the disparity of a rectified grey-level pair.
///
/// `left` and `right` hold `height * width` intensities in `[0, 1]`;
/// `out_disp` receives `height * width` disparities of the left view. Both
/// extents must be multiples of 4.
///
/// # Safety
/// All buffers must hold `height * width` elements.
#[no_mangle]
pub unsafe extern "C" fn dagm_model_infer(
    model: *const DagmModel,
    left: *const f32,
    right: *const f32,
    height: u32,
    width: u32,
    out_disp: *mut f32,
) -> DagmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = extent(height, width)?;
        let (h, w) = (height as usize, width as usize);
        let image = |p: &[f32]| {
            let plane: Vec<f64> = p.iter().map(|&v| f64::from(v)).collect();
            let data = plane.iter().chain(&plane).chain(&plane).copied().collect();
            Tensor::new(&[1, 3, h, w], data)
        };
        let l = image(slice_arg(left, n, "left")?)?;
        let r = image(slice_arg(right, n, "right")?)?;
        let out = slice_mut_arg(out_disp, n, "out_disp")?;
        let d = predict(&m.ckpt.config, &m.ckpt.params, &l, &r)?;
        for (o, &v) in out.iter_mut().zip(d.data()) {
            *o = v as f32;
        }
        Ok(())
    })
}

/// Depth-edge ground truth (1 = edge) from instance and semantic label
/// grids, dilated by `dilate` pixels.
///
/// # Safety
/// All buffers must hold `height * width` elements.
#[no_mangle]
pub unsafe extern "C" fn dagm_depth_edge_gt(
    inst: *const u32,
    sem: *const u32,
    height: u32,
    width: u32,
    dilate: u32,
    out: *mut u8,
) -> DagmStatus {
    guard(|| {
        let n = extent(height, width)?;
        let (h, w) = (height as usize, width as usize);
        let inst = Grid::new(w, h, slice_arg(inst, n, "inst")?.to_vec())?;
        let sem = Grid::new(w, h, slice_arg(sem, n, "sem")?.to_vec())?;
        let out = slice_mut_arg(out, n, "out")?;
        let edges = depth_edge_gt(&inst, &sem, dilate as usize)?;
        out.copy_from_slice(edges.data());
        Ok(())
    })
}

/// Reads a PFM map into `data` (top row first). Call with `data` null or
/// `capacity` too small to learn the extents: `*height` and `*width` are
/// always written on a parsed file, and `BufferTooSmall` is returned.
///
/// # Safety
/// `path` must be NUL-terminated; `height`, `width` valid pointers; `data`
/// null or valid for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn dagm_read_pfm(
    path: *const c_char,
    data: *mut f32,
    capacity: usize,
    height: *mut u32,
    width: *mut u32,
) -> DagmStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let (hp, wp) = (
            height.as_mut().ok_or_else(|| null("height"))?,
            width.as_mut().ok_or_else(|| null("width"))?,
        );
        let t = read_pfm(&path)?;
        *hp = t.shape()[0] as u32;
        *wp = t.shape()[1] as u32;
        if data.is_null() || capacity < t.numel() {
            return Err(Fail(
                DagmStatus::BufferTooSmall,
                format!("{} values needed, capacity {capacity}", t.numel()),
            ));
        }
        let out = slice_mut_arg(data, t.numel(), "data")?;
        for (o, &v) in out.iter_mut().zip(t.data()) {
            *o = v as f32;
        }
        Ok(())
    })
}

/// Writes a little-endian PFM map from `height * width` values.
///
/// # Safety
/// `path` must be NUL-terminated and `data` hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn dagm_write_pfm(
    path: *const c_char,
    data: *const f32,
    height: u32,
    width: u32,
) -> DagmStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let n = extent(height, width)?;
        let src = slice_arg(data, n, "data")?;
        let t = Tensor::new(
            &[height as usize, width as usize],
            src.iter().map(|&v| f64::from(v)).collect(),
        )?;
        write_pfm(&path, &t)?;
        Ok(())
    })
}

/// Disparity metrics over the `n` pixels where `valid` is nonzero.
///
/// # Safety
/// `pred`, `gt` and `valid` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dagm_metrics(
    pred: *const f32,
    gt: *const f32,
    valid: *const u8,
    n: usize,
    out: *mut DagmMetrics,
) -> DagmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if n == 0 {
            return Err(Fail(DagmStatus::InvalidArgument, "no pixels".into()));
        }
        let as_tensor = |s: Vec<f64>| Tensor::new(&[n], s);
        let p = as_tensor(
            slice_arg(pred, n, "pred")?
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
        )?;
        let g = as_tensor(
            slice_arg(gt, n, "gt")?
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
        )?;
        let m = as_tensor(
            slice_arg(valid, n, "valid")?
                .iter()
                .map(|&v| f64::from(u8::from(v != 0)))
                .collect(),
        )?;
        let mut acc = MetricsAccumulator::default();
        acc.add(&p, &g, &m)?;
        let r = acc.finish()?;
        *out = DagmMetrics {
            epe: r.epe,
            d1_all: r.d1_all,
            d1_and: r.d1_and,
            d1_or: r.d1_or,
            out_noc: r.out_noc,
            bad2: r.bad2,
            bad4: r.bad4,
            bad5: r.bad5,
            n_valid: r.n_valid as u64,
        };
        Ok(())
    })
}
