//! C ABI over the `invface` library.
//!
//! Objects are exposed as opaque handles created by `*_generate` / `*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`InvfaceStatus`]; on failure a description is available from
//! [`invface_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use invface::face_model::{generate_model, FaceModel, ModelSpec};
use invface::image::RgbImage;
use invface::params::ParameterVector;
use invface::regressor::RegressorState;
use invface::renderer::{render, CameraSpec};
use invface::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvfaceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Render = 6,
    Panic = 7,
}

/// Pinhole camera looking down -z with the face centroid at `face_distance` mm.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvfaceCamera {
    pub image_width: u32,
    pub image_height: u32,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub face_distance: f64,
}

impl From<InvfaceCamera> for CameraSpec {
    fn from(c: InvfaceCamera) -> Self {
        CameraSpec {
            image_width: c.image_width as usize,
            image_height: c.image_height as usize,
            vertical_fov: c.vertical_fov,
            face_distance: c.face_distance,
        }
    }
}

/// Opaque face model handle.
pub struct InvfaceModel(FaceModel);

impl InvfaceModel {
    /// Parameter layout of the wrapped model, for Rust callers mixing both APIs.
    pub fn param_layout(&self) -> invface::params::ParamLayout {
        self.0.layout()
    }
}

/// Opaque trained regressor handle.
pub struct InvfaceRegressor(RegressorState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> InvfaceStatus {
    match e {
        Error::Io(_) => InvfaceStatus::Io,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated(_)
        | Error::Malformed { .. }
        | Error::Json(_) => InvfaceStatus::Format,
        Error::DimensionMismatch { .. } => InvfaceStatus::DimensionMismatch,
        Error::BehindCamera(_) => InvfaceStatus::Render,
        _ => InvfaceStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (InvfaceStatus, String)>) -> InvfaceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InvfaceStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            InvfaceStatus::Panic
        }
    }
}

fn lib<T>(r: invface::Result<T>) -> Result<T, (InvfaceStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (InvfaceStatus, String) {
    (InvfaceStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (InvfaceStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (InvfaceStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), (InvfaceStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Description of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn invface_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn invface_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The default 128x128 camera.
#[no_mangle]
pub extern "C" fn invface_camera_default() -> InvfaceCamera {
    let c = CameraSpec::default();
    InvfaceCamera {
        image_width: c.image_width as u32,
        image_height: c.image_height as u32,
        vertical_fov: c.vertical_fov,
        face_distance: c.face_distance,
    }
}

/// Generates a procedural face model.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn invface_model_generate(
    n_shape: u32,
    n_expr: u32,
    n_refl: u32,
    grid_rows: u32,
    grid_cols: u32,
    seed: u64,
    out: *mut *mut InvfaceModel,
) -> InvfaceStatus {
    guard(|| {
        let spec = ModelSpec {
            n_shape: n_shape as usize,
            n_expr: n_expr as usize,
            n_refl: n_refl as usize,
            mesh_grid: (grid_rows as usize, grid_cols as usize),
            rng_seed: seed,
        };
        out_arg(out, InvfaceModel(lib(generate_model(&spec))?))
    })
}

/// Loads a model file (`IFNM`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`invface_model_generate`].
#[no_mangle]
pub unsafe extern "C" fn invface_model_load(path: *const c_char, out: *mut *mut InvfaceModel) -> InvfaceStatus {
    guard(|| {
        let p = path_arg(path)?;
        let model = FaceModel::load(&p).map_err(|e| (status_of(&e), format!("{}: {e}", p.display())))?;
        out_arg(out, InvfaceModel(model))
    })
}

/// Writes a model file (`IFNM`).
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn invface_model_save(model: *const InvfaceModel, path: *const c_char) -> InvfaceStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let p = path_arg(path)?;
        model
            .0
            .save(&p)
            .map_err(|e| (status_of(&e), format!("{}: {e}", p.display())))
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn invface_model_free(model: *mut InvfaceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the parameter vector the model consumes, or 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn invface_model_param_count(model: *const InvfaceModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.layout().len())
}

/// Number of mesh vertices, or 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn invface_model_vertex_count(model: *const InvfaceModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_vertices())
}

/// Renders `params` (rotation, shape, expression, reflectance, illumination)
/// into `rgb_out` (width * height * 3 bytes, row-major RGB) and optionally
/// `mask_out` (width * height bytes, 255 inside the face).
///
/// # Safety
/// `params` must point to `n_params` floats; the output buffers must be large
/// enough for the camera's image size.
#[no_mangle]
pub unsafe extern "C" fn invface_render(
    model: *const InvfaceModel,
    camera: InvfaceCamera,
    params: *const f32,
    n_params: usize,
    rgb_out: *mut u8,
    mask_out: *mut u8,
) -> InvfaceStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if params.is_null() {
            return Err(null("params"));
        }
        if rgb_out.is_null() {
            return Err(null("rgb_out"));
        }
        let values = std::slice::from_raw_parts(params, n_params);
        let theta = lib(ParameterVector::from_f32(model.0.layout(), values))?;
        let sample = lib(render(&model.0, &camera.into(), &theta))?;
        ptr::copy_nonoverlapping(sample.image.data.as_ptr(), rgb_out, sample.image.data.len());
        if !mask_out.is_null() {
            for (i, &b) in sample.mask.bits.iter().enumerate() {
                *mask_out.add(i) = if b { 255 } else { 0 };
            }
        }
        Ok(())
    })
}

/// Loads a trained regressor (`IFNW`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn invface_regressor_load(
    path: *const c_char,
    out: *mut *mut InvfaceRegressor,
) -> InvfaceStatus {
    guard(|| {
        let p = path_arg(path)?;
        let state = RegressorState::load(&p).map_err(|e| (status_of(&e), format!("{}: {e}", p.display())))?;
        out_arg(out, InvfaceRegressor(state))
    })
}

/// Releases a regressor. Null is ignored.
///
/// # Safety
/// `reg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn invface_regressor_free(reg: *mut InvfaceRegressor) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

/// Number of parameters the regressor predicts, or 0 for null.
///
/// # Safety
/// `reg` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn invface_regressor_param_count(reg: *const InvfaceRegressor) -> usize {
    reg.as_ref().map_or(0, |r| r.0.output_dim())
}

/// Predicts parameters for a `width x height` RGB8 image into `out`
/// (`out_len` must equal [`invface_regressor_param_count`]).
///
/// # Safety
/// `rgb` must point to `width * height * 3` bytes and `out` to `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn invface_regressor_infer(
    reg: *const InvfaceRegressor,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut f32,
    out_len: usize,
) -> InvfaceStatus {
    guard(|| {
        let reg = reg.as_ref().ok_or_else(|| null("regressor"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != reg.0.output_dim() {
            return lib(Err(Error::DimensionMismatch {
                what: "output buffer",
                expected: reg.0.output_dim(),
                actual: out_len,
            }));
        }
        let (w, h) = (width as usize, height as usize);
        let data = std::slice::from_raw_parts(rgb, w * h * 3).to_vec();
        let image = lib(RgbImage::from_raw(w, h, data))?;
        let row = lib(reg.0.predict_one(&image))?;
        ptr::copy_nonoverlapping(row.as_ptr(), out, row.len());
        Ok(())
    })
}
