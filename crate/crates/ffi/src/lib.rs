//! C ABI over the cathlab engine.
//!
//! Every function returns a [`CathlabStatus`]; on failure the message is
//! available from [`cathlab_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cathlab::drr::{build_octree, render_drr, EmptySpaceOctree};
use cathlab::geometry::{project_point, projection_matrix, CArmPose};
use cathlab::hemo::{load_mesh_sequence, mesh_volume, report_from_mesh_cycle, EcgTrace};
use cathlab::image::Image2D;
use cathlab::metrics::curve_mte;
use cathlab::service::{Config, RenderRequest, Scene};
use cathlab::volume::{load_mesh, load_volume, AttenuationVolume};
use cathlab::Error;
use nalgebra::{Point3, Vector3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CathlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidPose = 3,
    Io = 4,
    Format = 5,
    DimensionMismatch = 6,
    BufferTooSmall = 7,
    Degenerate = 8,
    Numerical = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CathlabStatus {
    match e {
        Error::InvalidPose(_) | Error::DegeneratePose => CathlabStatus::InvalidPose,
        Error::InvalidParameter(_) | Error::Bounds(_) | Error::IndexOutOfRange { .. } => CathlabStatus::InvalidArgument,
        Error::Io { .. } => CathlabStatus::Io,
        Error::Format(_) | Error::Json(_) => CathlabStatus::Format,
        Error::DimensionMismatch(_) | Error::SizeMismatch { .. } => CathlabStatus::DimensionMismatch,
        Error::Numerical(_) => CathlabStatus::Numerical,
        _ => CathlabStatus::Degenerate,
    }
}

struct Failure(CathlabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: CathlabStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CathlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CathlabStatus::Ok
        }
        Ok(Err(Failure(s, m))) => {
            set_error(&m);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            CathlabStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(CathlabStatus::NullPointer, format!("{what} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CathlabStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(CathlabStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn copy_image(img: &Image2D, out: *mut f32, out_len: usize) -> Result<(), Failure> {
    nonnull(out, "output buffer")?;
    let px = img.pixels();
    if out_len < px.len() {
        return Err(fail(
            CathlabStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, image needs {}", px.len()),
        ));
    }
    // SAFETY: caller guarantees `out` points to `out_len` writable floats
    unsafe { ptr::copy_nonoverlapping(px.as_ptr(), out, px.len()) };
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cathlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn cathlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// C-arm pose with angles in degrees.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CathlabPose {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub sid_mm: f64,
    pub spd_mm: f64,
    /// Detector diagonal.
    pub fd_mm: f64,
    pub n_u: u32,
    pub n_v: u32,
    pub table_mm: [f64; 3],
}

impl From<&CathlabPose> for CArmPose {
    fn from(p: &CathlabPose) -> Self {
        CArmPose {
            alpha: p.alpha_deg.to_radians(),
            beta: p.beta_deg.to_radians(),
            sid_mm: p.sid_mm,
            spd_mm: p.spd_mm,
            fd_mm: p.fd_mm,
            n_u: p.n_u as usize,
            n_v: p.n_v as usize,
            table_mm: Vector3::from(p.table_mm),
        }
    }
}

/// The default pose: SID 1200 mm, SPD 800 mm, 512 x 512 detector.
#[no_mangle]
pub extern "C" fn cathlab_pose_default() -> CathlabPose {
    let p = CArmPose::default();
    CathlabPose {
        alpha_deg: 0.0,
        beta_deg: 0.0,
        sid_mm: p.sid_mm,
        spd_mm: p.spd_mm,
        fd_mm: p.fd_mm,
        n_u: p.n_u as u32,
        n_v: p.n_v as u32,
        table_mm: p.table_mm.into(),
    }
}

/// Check a pose without using it.
///
/// # Safety
/// `pose` must be null or point to a valid `CathlabPose`.
#[no_mangle]
pub unsafe extern "C" fn cathlab_pose_validate(pose: *const CathlabPose) -> CathlabStatus {
    guard(|| {
        nonnull(pose, "pose")?;
        Ok(CArmPose::from(&*pose).validate()?)
    })
}

/// Project a world point (mm) to detector pixel coordinates.
///
/// # Safety
/// `pose` must point to a pose, `xyz` to 3 doubles and `uv` to 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cathlab_project_point(pose: *const CathlabPose, xyz: *const f64, uv: *mut f64) -> CathlabStatus {
    guard(|| {
        nonnull(pose, "pose")?;
        nonnull(xyz, "xyz")?;
        nonnull(uv, "uv")?;
        let pose = CArmPose::from(&*pose);
        pose.validate()?;
        let x = std::slice::from_raw_parts(xyz, 3);
        let p = project_point(&projection_matrix(&pose), &Point3::new(x[0], x[1], x[2]))?;
        *uv = p.x;
        *uv.add(1) = p.y;
        Ok(())
    })
}

/// Attenuation volume with an optional empty-space octree.
pub struct CathlabVolume {
    volume: AttenuationVolume,
    octree: Option<EmptySpaceOctree>,
}

fn out_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    nonnull(out, "output handle")?;
    // SAFETY: checked non-null; caller provides a writable slot
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Load a raw float32 volume with its JSON sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cathlab_volume_load(path: *const c_char, out: *mut *mut CathlabVolume) -> CathlabStatus {
    guard(|| {
        nonnull(out, "output handle")?;
        let volume = load_volume(path_arg(path, "path")?)?;
        out_handle(out, CathlabVolume { volume, octree: None })
    })
}

/// Wrap a copy of `nx * ny * nz` x-fastest values.
///
/// # Safety
/// `data` must point to `nx * ny * nz` floats, `spacing_mm` and `origin_mm`
/// to 3 doubles each, and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cathlab_volume_from_data(
    nx: usize,
    ny: usize,
    nz: usize,
    spacing_mm: *const f64,
    origin_mm: *const f64,
    data: *const f32,
    out: *mut *mut CathlabVolume,
) -> CathlabStatus {
    guard(|| {
        nonnull(spacing_mm, "spacing_mm")?;
        nonnull(origin_mm, "origin_mm")?;
        nonnull(data, "data")?;
        nonnull(out, "output handle")?;
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| fail(CathlabStatus::InvalidArgument, "volume size overflows"))?;
        let s = std::slice::from_raw_parts(spacing_mm, 3);
        let o = std::slice::from_raw_parts(origin_mm, 3);
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let volume = AttenuationVolume::new([nx, ny, nz], Vector3::new(s[0], s[1], s[2]), Point3::new(o[0], o[1], o[2]), values)?;
        out_handle(out, CathlabVolume { volume, octree: None })
    })
}

/// Build (or rebuild) the empty-space octree used by later renders.
///
/// # Safety
/// `vol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cathlab_volume_build_octree(vol: *mut CathlabVolume, empty_threshold: f32) -> CathlabStatus {
    guard(|| {
        nonnull(vol, "volume")?;
        let v = &mut *vol;
        v.octree = Some(build_octree(&v.volume, empty_threshold));
        Ok(())
    })
}

/// Grid dimensions.
///
/// # Safety
/// `vol` must be a live handle and `dims` point to 3 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn cathlab_volume_dims(vol: *const CathlabVolume, dims: *mut usize) -> CathlabStatus {
    guard(|| {
        nonnull(vol, "volume")?;
        nonnull(dims, "dims")?;
        let d = (*vol).volume.dims();
        ptr::copy_nonoverlapping(d.as_ptr(), dims, 3);
        Ok(())
    })
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cathlab_volume_free(vol: *mut CathlabVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Render line integrals into `out` (`n_u * n_v` floats, row-major).
///
/// # Safety
/// `vol` must be a live handle, `pose` valid, `out` writable for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cathlab_render_drr(vol: *const CathlabVolume, pose: *const CathlabPose, out: *mut f32, out_len: usize) -> CathlabStatus {
    guard(|| {
        nonnull(vol, "volume")?;
        nonnull(pose, "pose")?;
        let v = &*vol;
        let pose = CArmPose::from(&*pose);
        pose.validate()?;
        let need = pose.n_u * pose.n_v;
        if out_len < need {
            return Err(fail(CathlabStatus::BufferTooSmall, format!("output buffer holds {out_len} values, image needs {need}")));
        }
        let img = render_drr(&v.volume, &pose, v.octree.as_ref())?;
        copy_image(&img, out, out_len)
    })
}

/// A loaded scene directory plus the configuration it renders with.
pub struct CathlabScene {
    scene: Scene,
    config: Config,
}

/// Open a scene directory. `config_path` may be null for defaults.
///
/// # Safety
/// Strings must be NUL-terminated; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cathlab_scene_open(dir: *const c_char, config_path: *const c_char, out: *mut *mut CathlabScene) -> CathlabStatus {
    guard(|| {
        nonnull(out, "output handle")?;
        let dir = path_arg(dir, "dir")?;
        let config = if config_path.is_null() {
            Config::default()
        } else {
            Config::load(path_arg(config_path, "config_path")?)?
        };
        let scene = Scene::load(dir, &config.renderer)?;
        out_handle(out, CathlabScene { scene, config })
    })
}

/// Detector size of a render at the given width/height (0 keeps the scene
/// default).
///
/// # Safety
/// `scene` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn cathlab_scene_detector(scene: *const CathlabScene, width: *mut u32, height: *mut u32) -> CathlabStatus {
    guard(|| {
        nonnull(scene, "scene")?;
        nonnull(width, "width")?;
        nonnull(height, "height")?;
        let p = (*scene).scene.manifest.pose;
        *width = p.n_u as u32;
        *height = p.n_v as u32;
        Ok(())
    })
}

/// Render the scene at an ECG phase in [0, 1]. `width`/`height` of 0 use
/// the scene's detector.
///
/// # Safety
/// `scene` must be a live handle and `out` writable for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cathlab_scene_render(
    scene: *const CathlabScene,
    alpha_deg: f64,
    beta_deg: f64,
    phase: f64,
    enhance: bool,
    width: u32,
    height: u32,
    out: *mut f32,
    out_len: usize,
) -> CathlabStatus {
    guard(|| {
        nonnull(scene, "scene")?;
        let s = &*scene;
        let req = RenderRequest {
            alpha_deg,
            beta_deg,
            phase,
            enhance,
            width: (width > 0).then_some(width as usize),
            height: (height > 0).then_some(height as usize),
        };
        let pose = s.scene.pose_for(&req)?;
        if out_len < pose.n_u * pose.n_v {
            return Err(fail(
                CathlabStatus::BufferTooSmall,
                format!("output buffer holds {out_len} values, image needs {}", pose.n_u * pose.n_v),
            ));
        }
        let img = s.scene.render(&req, &s.config)?;
        copy_image(&img, out, out_len)
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cathlab_scene_free(scene: *mut CathlabScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Enclosed volume (ml) of a closed OBJ surface in mm.
///
/// # Safety
/// `path` must be NUL-terminated and `out_ml` writable.
#[no_mangle]
pub unsafe extern "C" fn cathlab_mesh_volume(path: *const c_char, out_ml: *mut f64) -> CathlabStatus {
    guard(|| {
        nonnull(out_ml, "out_ml")?;
        *out_ml = mesh_volume(&load_mesh(path_arg(path, "path")?)?)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CathlabHemoReport {
    pub edv_ml: f64,
    pub esv_ml: f64,
    pub sv_ml: f64,
    pub ef_pct: f64,
    pub co_l_min: f64,
    pub per_ml_s: f64,
    pub pfr_ml_s: f64,
    pub t_avo_s: f64,
    pub t_avc_s: f64,
    pub rv_ml: f64,
    pub sv_eff_ml: f64,
    pub mean_hr_bpm: f64,
}

/// Hemodynamics of a directory of OBJ meshes sampling one cycle, timed by
/// an ECG CSV, with default options.
///
/// # Safety
/// Strings must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cathlab_hemodynamics(meshes_dir: *const c_char, ecg_csv: *const c_char, out: *mut CathlabHemoReport) -> CathlabStatus {
    guard(|| {
        nonnull(out, "out")?;
        let meshes = load_mesh_sequence(&path_arg(meshes_dir, "meshes_dir")?)?;
        let ecg = EcgTrace::load_csv(path_arg(ecg_csv, "ecg_csv")?)?;
        let r = report_from_mesh_cycle(&meshes, &ecg, &Default::default())?;
        *out = CathlabHemoReport {
            edv_ml: r.edv_ml,
            esv_ml: r.esv_ml,
            sv_ml: r.sv_ml,
            ef_pct: r.ef_pct,
            co_l_min: r.co_l_min,
            per_ml_s: r.per_ml_s,
            pfr_ml_s: r.pfr_ml_s,
            t_avo_s: r.t_avo_s,
            t_avc_s: r.t_avc_s,
            rv_ml: r.rv_ml,
            sv_eff_ml: r.sv_eff_ml,
            mean_hr_bpm: r.mean_hr_bpm,
        };
        Ok(())
    })
}

/// Mean trajectory error between two polylines (`n_p` and `n_q` xyz
/// triples) after resampling both to `stations` points.
///
/// # Safety
/// `p` and `q` must point to `3 * n_p` and `3 * n_q` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cathlab_trajectory_error(
    p: *const f64,
    n_p: usize,
    q: *const f64,
    n_q: usize,
    stations: usize,
    out: *mut f64,
) -> CathlabStatus {
    guard(|| {
        nonnull(p, "p")?;
        nonnull(q, "q")?;
        nonnull(out, "out")?;
        let pts = |x: *const f64, n: usize| -> Vec<Point3<f64>> {
            std::slice::from_raw_parts(x, 3 * n).chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
        };
        *out = curve_mte(&pts(p, n_p), &pts(q, n_q), stations)?;
        Ok(())
    })
}
