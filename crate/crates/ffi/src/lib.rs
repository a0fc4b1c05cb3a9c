//! C ABI over the neuropipe library.
//!
//! Objects cross the boundary as opaque handles created by `np_*` functions
//! and released with the matching `np_*_free`. Every fallible call returns an
//! [`NpStatus`]; on failure a message is available from
//! [`np_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use neuropipe::geometry::{euler_to_transform, GridSpec, RigidTransform};
use neuropipe::masking::extract_mask;
use neuropipe::metrics::{dice, hausdorff95, pearson_masked, psnr_masked};
use neuropipe::nifti::{read_volume, write_volume, DType, Geometry, Volume};
use neuropipe::registration::{register_rigid, Metric, RegistrationConfig};
use neuropipe::resample::{resample, InterpolationKind};
use neuropipe::{BinaryMask, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Geometry = 5,
    Label = 6,
    EmptyInput = 7,
    RegistrationFailed = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpInterpolation {
    Trilinear = 0,
    Nearest = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpMetric {
    Ncc = 0,
    Msd = 1,
}

/// Opaque image volume.
pub struct NpVolume(Volume);

/// Opaque rigid world transform.
pub struct NpTransform(RigidTransform);

/// Opaque binary mask.
pub struct NpMask(BinaryMask);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) | Error::IoPath { .. } => NpStatus::Io,
            Error::Format(_) | Error::UnsupportedDtype(_) | Error::Truncated { .. } | Error::TransformFile(_) => {
                NpStatus::Format
            }
            Error::InvalidVolume(_) | Error::Geometry(_) | Error::NotRigid(_) | Error::Degenerate(_) => {
                NpStatus::Geometry
            }
            Error::Label { .. } => NpStatus::Label,
            Error::Usage(_) | Error::Config(_) => NpStatus::InvalidArgument,
            Error::EmptyInput(_) => NpStatus::EmptyInput,
            Error::RegistrationFailed { .. } => NpStatus::RegistrationFailed,
            _ => NpStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> NpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            NpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            NpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(NpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn to_path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(NpStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn array<const N: usize>(p: *const f64, what: &str) -> Result<[f64; N], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let mut a = [0.0; N];
    a.copy_from_slice(std::slice::from_raw_parts(p, N));
    Ok(a)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next `np_*` call on the same thread.
#[no_mangle]
pub extern "C" fn np_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Reads a `.nii` or `.nii.gz` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn np_volume_read(path: *const c_char, out: *mut *mut NpVolume) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        let vol = read_volume(to_path(path)?)?;
        *out = boxed(NpVolume(vol));
        Ok(())
    })
}

/// Builds a float64 volume on an axis-aligned grid. `data` holds
/// `dims[0]*dims[1]*dims[2]` values with the first index fastest.
///
/// # Safety
/// `dims`, `spacing` and `origin` point to 3 elements, `data` to `len`.
#[no_mangle]
pub unsafe extern "C" fn np_volume_from_data(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const f64,
    len: usize,
    out: *mut *mut NpVolume,
) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        if dims.is_null() || data.is_null() {
            return Err(null("dims or data"));
        }
        let mut d = [0usize; 3];
        d.copy_from_slice(std::slice::from_raw_parts(dims, 3));
        let g = Geometry::axis_aligned(d, array(spacing, "spacing")?, array(origin, "origin")?)?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        *out = boxed(NpVolume(Volume::new(g, values, DType::Float64)?));
        Ok(())
    })
}

/// # Safety
/// `vol` must be a live volume handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn np_volume_write(vol: *const NpVolume, path: *const c_char, compress: bool) -> NpStatus {
    run(|| {
        let vol = get(vol, "volume")?;
        write_volume(&vol.0, to_path(path)?, compress)?;
        Ok(())
    })
}

/// # Safety
/// `vol` must be a live volume handle and `dims` point to 3 writable elements.
#[no_mangle]
pub unsafe extern "C" fn np_volume_dims(vol: *const NpVolume, dims: *mut usize) -> NpStatus {
    run(|| {
        let vol = get(vol, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&vol.0.dims());
        Ok(())
    })
}

/// Borrowed pointer to the voxel values; valid while `vol` lives.
///
/// # Safety
/// `vol` must be a live volume handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn np_volume_data(vol: *const NpVolume, len: *mut usize) -> *const f64 {
    let mut ptr = std::ptr::null();
    run(|| {
        let vol = get(vol, "volume")?;
        *slot(len, "len")? = vol.0.data().len();
        ptr = vol.0.data().as_ptr();
        Ok(())
    });
    ptr
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn np_volume_free(vol: *mut NpVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Transform from a row-major 4x4 matrix. Fails unless the matrix is rigid.
///
/// # Safety
/// `matrix` points to 16 values and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn np_transform_from_matrix(matrix: *const f64, out: *mut *mut NpTransform) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        let m: [f64; 16] = array(matrix, "matrix")?;
        let rows = [0, 1, 2, 3].map(|r| [m[4 * r], m[4 * r + 1], m[4 * r + 2], m[4 * r + 3]]);
        *out = boxed(NpTransform(RigidTransform::from_rows(rows)?));
        Ok(())
    })
}

/// Z-Y-X Euler rotation (radians) about `center`, then translation (mm).
///
/// # Safety
/// The three arrays point to 3 values each and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn np_transform_euler(
    angles: *const f64,
    translation: *const f64,
    center: *const f64,
    out: *mut *mut NpTransform,
) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        let t = euler_to_transform(array(angles, "angles")?, array(translation, "translation")?, array(center, "center")?);
        *out = boxed(NpTransform(t));
        Ok(())
    })
}

/// # Safety
/// `t` must be live and `matrix` point to 16 writable values.
#[no_mangle]
pub unsafe extern "C" fn np_transform_matrix(t: *const NpTransform, matrix: *mut f64) -> NpStatus {
    run(|| {
        let t = get(t, "transform")?;
        if matrix.is_null() {
            return Err(null("matrix"));
        }
        let m = std::slice::from_raw_parts_mut(matrix, 16);
        for (r, row) in t.0.rows().iter().enumerate() {
            m[4 * r..4 * r + 4].copy_from_slice(row);
        }
        Ok(())
    })
}

/// Transform applying `first` and then `second`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_transform_compose(
    first: *const NpTransform,
    second: *const NpTransform,
    out: *mut *mut NpTransform,
) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        let c = neuropipe::compose(&get(first, "first")?.0, &get(second, "second")?.0);
        *out = boxed(NpTransform(c));
        Ok(())
    })
}

/// # Safety
/// `t` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_transform_invert(t: *const NpTransform, out: *mut *mut NpTransform) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        *out = boxed(NpTransform(neuropipe::invert(&get(t, "transform")?.0)));
        Ok(())
    })
}

/// # Safety
/// `t` must be live; `point` and `result` point to 3 values each.
#[no_mangle]
pub unsafe extern "C" fn np_transform_apply_point(t: *const NpTransform, point: *const f64, result: *mut f64) -> NpStatus {
    run(|| {
        let t = get(t, "transform")?;
        let p = t.0.apply_point(array(point, "point")?);
        if result.is_null() {
            return Err(null("result"));
        }
        std::slice::from_raw_parts_mut(result, 3).copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `path` is NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_transform_read(path: *const c_char, out: *mut *mut NpTransform) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        *out = boxed(NpTransform(RigidTransform::read(to_path(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `t` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn np_transform_write(t: *const NpTransform, path: *const c_char) -> NpStatus {
    run(|| {
        get(t, "transform")?.0.write(to_path(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn np_transform_free(t: *mut NpTransform) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Mask of voxels whose absolute value exceeds `threshold`.
///
/// # Safety
/// `vol` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_mask_extract(vol: *const NpVolume, threshold: f64, out: *mut *mut NpMask) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        *out = boxed(NpMask(extract_mask(&get(vol, "volume")?.0, threshold)));
        Ok(())
    })
}

/// # Safety
/// `path` is NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_mask_read(path: *const c_char, out: *mut *mut NpMask) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        *out = boxed(NpMask(BinaryMask::read(to_path(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `mask` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn np_mask_write(mask: *const NpMask, path: *const c_char) -> NpStatus {
    run(|| {
        get(mask, "mask")?.0.write(to_path(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `mask` must be live and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn np_mask_count(mask: *const NpMask, count: *mut usize) -> NpStatus {
    run(|| {
        *slot(count, "count")? = get(mask, "mask")?.0.count();
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn np_mask_free(mask: *mut NpMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// # Safety
/// Both masks must be live and `result` writable.
#[no_mangle]
pub unsafe extern "C" fn np_dice(pred: *const NpMask, truth: *const NpMask, result: *mut f64) -> NpStatus {
    run(|| {
        *slot(result, "result")? = dice(&get(pred, "pred")?.0, &get(truth, "truth")?.0)?;
        Ok(())
    })
}

/// 95th-percentile symmetric surface distance in mm.
///
/// # Safety
/// Both masks must be live and `result` writable.
#[no_mangle]
pub unsafe extern "C" fn np_hausdorff95(pred: *const NpMask, truth: *const NpMask, result: *mut f64) -> NpStatus {
    run(|| {
        *slot(result, "result")? = hausdorff95(&get(pred, "pred")?.0, &get(truth, "truth")?.0)?;
        Ok(())
    })
}

/// # Safety
/// All handles must be live and `result` writable.
#[no_mangle]
pub unsafe extern "C" fn np_pearson(
    a: *const NpVolume,
    b: *const NpVolume,
    mask: *const NpMask,
    result: *mut f64,
) -> NpStatus {
    run(|| {
        *slot(result, "result")? = pearson_masked(&get(a, "a")?.0, &get(b, "b")?.0, &get(mask, "mask")?.0)?;
        Ok(())
    })
}

/// # Safety
/// All handles must be live and `result` writable.
#[no_mangle]
pub unsafe extern "C" fn np_psnr(
    reference: *const NpVolume,
    test: *const NpVolume,
    mask: *const NpMask,
    result: *mut f64,
) -> NpStatus {
    run(|| {
        let r = psnr_masked(&get(reference, "reference")?.0, &get(test, "test")?.0, &get(mask, "mask")?.0)?;
        *slot(result, "result")? = r;
        Ok(())
    })
}

/// Resamples `vol` onto the grid of `like`. A null `transform` means
/// identity.
///
/// # Safety
/// `vol` and `like` must be live, `transform` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_resample(
    vol: *const NpVolume,
    transform: *const NpTransform,
    like: *const NpVolume,
    interpolation: NpInterpolation,
    background: f64,
    out: *mut *mut NpVolume,
) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        let t = transform.as_ref().map_or_else(RigidTransform::identity, |t| t.0);
        let grid = GridSpec::from_geometry(get(like, "like")?.0.geometry())?;
        let kind = match interpolation {
            NpInterpolation::Trilinear => InterpolationKind::Trilinear,
            NpInterpolation::Nearest => InterpolationKind::Nearest,
        };
        *out = boxed(NpVolume(resample(&get(vol, "volume")?.0, &t, &grid, kind, background)?));
        Ok(())
    })
}

/// Rigidly registers `moving` to `fixed` with default settings, the given
/// metric and seed. `final_metric` may be null.
///
/// # Safety
/// Both volumes must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_register_rigid(
    fixed: *const NpVolume,
    moving: *const NpVolume,
    metric: NpMetric,
    seed: u64,
    out: *mut *mut NpTransform,
    final_metric: *mut f64,
) -> NpStatus {
    run(|| {
        let out = slot(out, "out")?;
        let cfg = RegistrationConfig {
            metric: match metric {
                NpMetric::Ncc => Metric::Ncc,
                NpMetric::Msd => Metric::Msd,
            },
            seed,
            ..RegistrationConfig::default()
        };
        let r = register_rigid(&get(fixed, "fixed")?.0, &get(moving, "moving")?.0, &cfg)?;
        if let Some(m) = final_metric.as_mut() {
            *m = r.final_metric;
        }
        *out = boxed(NpTransform(r.transform));
        Ok(())
    })
}
