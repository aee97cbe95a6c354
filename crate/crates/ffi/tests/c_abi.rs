use std::ffi::{CStr, CString};
use std::ptr;

use invface::regressor::{NetworkSpec, RegressorState};
use invface_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(invface_last_error()) }.to_string_lossy().into_owned()
}

fn small_model() -> *mut InvfaceModel {
    let mut model = ptr::null_mut();
    let status = unsafe { invface_model_generate(4, 3, 2, 24, 24, 7, &mut model) };
    assert_eq!(status, InvfaceStatus::Ok, "{}", last_error());
    assert!(!model.is_null());
    model
}

fn neutral_params(n: usize) -> Vec<f32> {
    let mut p = vec![0.0f32; n];
    // DC illumination of 0.8 per channel; coefficients are band-major
    let illum = n - 27;
    p[illum..illum + 3].fill(0.8);
    p
}

#[test]
fn model_generate_render_and_counts() {
    let model = small_model();
    unsafe {
        assert_eq!(invface_model_param_count(model), 3 + 4 + 3 + 2 + 27);
        assert_eq!(invface_model_vertex_count(model), 24 * 24);
        let mut cam = invface_camera_default();
        cam.image_width = 32;
        cam.image_height = 32;
        let params = neutral_params(invface_model_param_count(model));
        let mut rgb = vec![0u8; 32 * 32 * 3];
        let mut mask = vec![0u8; 32 * 32];
        let status = invface_render(model, cam, params.as_ptr(), params.len(), rgb.as_mut_ptr(), mask.as_mut_ptr());
        assert_eq!(status, InvfaceStatus::Ok, "{}", last_error());
        assert!(mask.contains(&255));
        assert!(mask.iter().all(|&m| m == 0 || m == 255));
        assert!(rgb.iter().any(|&v| v > 0));
        invface_model_free(model);
    }
}

#[test]
fn render_matches_library() {
    let model = small_model();
    unsafe {
        let cam = invface_camera_default();
        let params = neutral_params(invface_model_param_count(model));
        let n = cam.image_width as usize * cam.image_height as usize;
        let mut rgb = vec![0u8; n * 3];
        assert_eq!(
            invface_render(model, cam, params.as_ptr(), params.len(), rgb.as_mut_ptr(), ptr::null_mut()),
            InvfaceStatus::Ok
        );
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
        assert_eq!(invface_model_save(model, path.as_ptr()), InvfaceStatus::Ok);
        let lib_model = invface::face_model::FaceModel::load(dir.path().join("m.bin")).unwrap();
        let theta = invface::params::ParameterVector::from_f32(lib_model.layout(), &params).unwrap();
        let sample = invface::renderer::render(&lib_model, &cam.into(), &theta).unwrap();
        assert_eq!(sample.image.data, rgb);
        invface_model_free(model);
    }
}

#[test]
fn wrong_param_count_is_dimension_mismatch() {
    let model = small_model();
    unsafe {
        let cam = invface_camera_default();
        let params = [0.0f32; 5];
        let mut rgb = vec![0u8; 128 * 128 * 3];
        let status = invface_render(model, cam, params.as_ptr(), params.len(), rgb.as_mut_ptr(), ptr::null_mut());
        assert_eq!(status, InvfaceStatus::DimensionMismatch);
        assert!(!last_error().is_empty());
        invface_model_free(model);
    }
}

#[test]
fn null_and_missing_inputs() {
    unsafe {
        assert_eq!(
            invface_model_generate(4, 3, 2, 24, 24, 7, ptr::null_mut()),
            InvfaceStatus::NullPointer
        );
        let mut model = ptr::null_mut();
        assert_eq!(invface_model_load(ptr::null(), &mut model), InvfaceStatus::NullPointer);
        let missing = CString::new("/nonexistent/model.bin").unwrap();
        assert_eq!(invface_model_load(missing.as_ptr(), &mut model), InvfaceStatus::Io);
        assert!(last_error().contains("/nonexistent/model.bin"));
        assert!(model.is_null());
        assert_eq!(invface_model_param_count(ptr::null()), 0);
        invface_model_free(ptr::null_mut());
        invface_regressor_free(ptr::null_mut());
    }
}

#[test]
fn garbage_file_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk.bin");
    std::fs::write(&file, b"not a model").unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { invface_model_load(path.as_ptr(), &mut model) }, InvfaceStatus::Format);
    let mut reg = ptr::null_mut();
    assert_eq!(unsafe { invface_regressor_load(path.as_ptr(), &mut reg) }, InvfaceStatus::Format);
}

#[test]
fn regressor_infer_matches_library() {
    let model = small_model();
    let layout = unsafe { &(*model) }.param_layout();
    let mut spec = NetworkSpec::desk(layout);
    spec.input_resolution = 32;
    let state = RegressorState::new(spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("net.bin");
    state.save(&file).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    unsafe {
        let mut reg = ptr::null_mut();
        assert_eq!(invface_regressor_load(path.as_ptr(), &mut reg), InvfaceStatus::Ok, "{}", last_error());
        let m = invface_regressor_param_count(reg);
        assert_eq!(m, invface_model_param_count(model));

        let cam = invface_camera_default();
        let params = neutral_params(m);
        let mut rgb = vec![0u8; 128 * 128 * 3];
        invface_render(model, cam, params.as_ptr(), m, rgb.as_mut_ptr(), ptr::null_mut());

        let mut out = vec![0.0f32; m];
        assert_eq!(
            invface_regressor_infer(reg, rgb.as_ptr(), 128, 128, out.as_mut_ptr(), m),
            InvfaceStatus::Ok,
            "{}",
            last_error()
        );
        let image = invface::image::RgbImage::from_raw(128, 128, rgb.clone()).unwrap();
        assert_eq!(out, state.predict_one(&image).unwrap());

        let mut short = vec![0.0f32; m - 1];
        assert_eq!(
            invface_regressor_infer(reg, rgb.as_ptr(), 128, 128, short.as_mut_ptr(), m - 1),
            InvfaceStatus::DimensionMismatch
        );
        invface_regressor_free(reg);
        invface_model_free(model);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/invface.h")).unwrap();
    for name in [
        "invface_last_error",
        "invface_version",
        "invface_camera_default",
        "invface_model_generate",
        "invface_model_load",
        "invface_model_save",
        "invface_model_free",
        "invface_model_param_count",
        "invface_model_vertex_count",
        "invface_render",
        "invface_regressor_load",
        "invface_regressor_free",
        "invface_regressor_param_count",
        "invface_regressor_infer",
        "INVFACE_STATUS_DIMENSION_MISMATCH",
        "typedef struct InvfaceModel InvfaceModel",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    let version = unsafe { CStr::from_ptr(invface_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}
