//! C ABI over `avatar-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_open`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`AvatarStatus`]; the message of the last failure on the calling
//! thread is available from [`avatar_last_error`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use avatar_core::body_model::{bone_transforms, deform_points, generate_template, BodyModel, Pose, NUM_JOINTS};
use avatar_core::guidance::{RemoteGuidance, ScoreModel};
use avatar_core::math::Vec3;
use avatar_core::rasterizer::render_densepose;
use avatar_core::tet_field::{Skinner, SurfaceMesh};
use avatar_core::trainer::{load_run, run, FineModel, PromptSpec, ReferenceAvatar, TrainConfig};
use avatar_core::volume_renderer::{Camera, CameraSpec};
use avatar_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AvatarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    DegeneratePose = 4,
    EmptyGeometry = 5,
    Guidance = 6,
    Checkpoint = 7,
    Io = 8,
    Aborted = 9,
    Panic = 10,
}

impl From<&Error> for AvatarStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::WeightSum { .. } | Error::ShapeMismatch(_) => Self::InvalidArgument,
            Error::DegeneratePose { .. } => Self::DegeneratePose,
            Error::EmptyGeometry => Self::EmptyGeometry,
            Error::Timeout(_) | Error::Protocol(_) | Error::Transport(_) | Error::Server { .. } => Self::Guidance,
            Error::Checkpoint(_) | Error::Json(_) => Self::Checkpoint,
            Error::Io(_) | Error::Image(_) => Self::Io,
            Error::Aborted(_) => Self::Aborted,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: AvatarStatus, msg: impl Into<String>) -> AvatarStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), AvatarStatus>) -> AvatarStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AvatarStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(AvatarStatus::Panic, msg)
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, AvatarStatus>;
}

impl<T> OrStatus<T> for avatar_core::Result<T> {
    fn or_status(self) -> Result<T, AvatarStatus> {
        self.map_err(|e| fail(AvatarStatus::from(&e), e.to_string()))
    }
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, AvatarStatus> {
    // SAFETY: callers pass pointers obtained from this library or valid C objects.
    unsafe { p.as_ref() }.ok_or_else(|| fail(AvatarStatus::NullPointer, format!("{name} is null")))
}

fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, name: &str) -> Result<&'a mut [T], AvatarStatus> {
    if p.is_null() {
        return Err(fail(AvatarStatus::NullPointer, format!("{name} is null")));
    }
    if len < needed {
        return Err(fail(AvatarStatus::BufferTooSmall, format!("{name} holds {len}, need {needed}")));
    }
    // SAFETY: the caller guarantees `p` points to at least `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, needed) })
}

fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, AvatarStatus> {
    if p.is_null() {
        return Err(fail(AvatarStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(AvatarStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn avatar_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: `buf` has room for `len` bytes and `n < len`.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

const _: () = assert!(NUM_JOINTS == 24);

/// Body pose: 24 axis-angle joint rotations (radians), root offset (meters)
/// and per-joint bone scale.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AvatarPose {
    pub joint_rot: [[f64; 3]; 24],
    pub root_translation: [f64; 3],
    pub bone_scale: [f64; 24],
}

impl From<&AvatarPose> for Pose {
    fn from(p: &AvatarPose) -> Self {
        let mut pose = Pose::canonical();
        for j in 0..NUM_JOINTS {
            pose.joint_rot[j] = Vec3::from(p.joint_rot[j]);
        }
        pose.root_translation = Vec3::from(p.root_translation);
        pose.bone_scale = p.bone_scale;
        pose
    }
}

/// Orbit camera: distance, elevation and azimuth in degrees, vertical field
/// of view in degrees, image size and target point.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AvatarCamera {
    pub radius: f64,
    pub elevation: f64,
    pub azimuth: f64,
    pub fov: f64,
    pub width: u32,
    pub height: u32,
    pub look_at: [f64; 3],
}

impl From<&AvatarCamera> for CameraSpec {
    fn from(c: &AvatarCamera) -> Self {
        CameraSpec {
            radius: c.radius,
            elevation: c.elevation,
            azimuth: c.azimuth,
            fov: c.fov,
            width: c.width as usize,
            height: c.height as usize,
            look_at: Vec3::from(c.look_at),
        }
    }
}

/// Writes the rest pose (arms lowered into an A shape) to `out`.
///
/// # Safety
/// `out` must be null or point to a writable `AvatarPose`.
#[no_mangle]
pub unsafe extern "C" fn avatar_pose_canonical(out: *mut AvatarPose) -> AvatarStatus {
    guard(|| {
        let out = out_slice(out, 1, 1, "out")?;
        let p = Pose::canonical();
        out[0] = AvatarPose {
            joint_rot: p.joint_rot.map(|r| [r.x, r.y, r.z]),
            root_translation: [p.root_translation.x, p.root_translation.y, p.root_translation.z],
            bone_scale: p.bone_scale,
        };
        Ok(())
    })
}

/// Parametric body with skinning weights and part labels.
pub struct AvatarBody {
    model: BodyModel,
}

/// Creates the built-in template body at subdivision `level` (0 to 3).
///
/// # Safety
/// `out` must point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn avatar_body_template(level: u32, out: *mut *mut AvatarBody) -> AvatarStatus {
    guard(|| {
        let out = out_slice(out, 1, 1, "out")?;
        if level > 3 {
            return Err(fail(AvatarStatus::InvalidArgument, "level must be in 0..=3"));
        }
        out[0] = Box::into_raw(Box::new(AvatarBody {
            model: generate_template(level),
        }));
        Ok(())
    })
}

/// Releases a body. Null is ignored.
///
/// # Safety
/// `body` must be null or a handle from [`avatar_body_template`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn avatar_body_free(body: *mut AvatarBody) {
    if !body.is_null() {
        // SAFETY: the handle came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(body) });
    }
}

/// Number of body vertices, or 0 for a null handle.
///
/// # Safety
/// `body` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn avatar_body_vertex_count(body: *const AvatarBody) -> usize {
    // SAFETY: see above.
    unsafe { body.as_ref() }.map_or(0, |b| b.model.vertex_count())
}

/// Poses the body with linear blend skinning; writes `3 × vertex_count` floats.
///
/// # Safety
/// Pointers must be valid; `out_xyz` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn avatar_body_deform(
    body: *const AvatarBody,
    pose: *const AvatarPose,
    out_xyz: *mut f64,
    len: usize,
) -> AvatarStatus {
    guard(|| {
        let b = &non_null(body, "body")?.model;
        let pose = Pose::from(non_null(pose, "pose")?);
        pose.validate().or_status()?;
        let out = out_slice(out_xyz, len, 3 * b.vertex_count(), "out_xyz")?;
        let v = deform_points(&b.vertices, &b.skin_weights, &bone_transforms(b, &pose)).or_status()?;
        for (o, p) in out.chunks_exact_mut(3).zip(&v) {
            o.copy_from_slice(&[p.x, p.y, p.z]);
        }
        Ok(())
    })
}

/// Renders the part map of the posed body: one part id per pixel (0 is
/// background) and, if `out_uv` is non-null, two surface coordinates per pixel.
///
/// # Safety
/// Pointers must be valid; `out_part` holds `width × height` bytes and
/// `out_uv` (if given) `2 × width × height` doubles.
#[no_mangle]
pub unsafe extern "C" fn avatar_body_densepose(
    body: *const AvatarBody,
    pose: *const AvatarPose,
    camera: *const AvatarCamera,
    out_part: *mut u8,
    out_uv: *mut f64,
) -> AvatarStatus {
    guard(|| {
        let b = &non_null(body, "body")?.model;
        let pose = Pose::from(non_null(pose, "pose")?);
        let spec = CameraSpec::from(non_null(camera, "camera")?);
        let cam = Camera::from_spec(&spec).or_status()?;
        let (iuv, _) = render_densepose(b, &pose, &cam).or_status()?;
        let n = spec.width * spec.height;
        out_slice(out_part, n, n, "out_part")?.copy_from_slice(&iuv.part);
        if !out_uv.is_null() {
            let uv = out_slice(out_uv, 2 * n, 2 * n, "out_uv")?;
            for (o, v) in uv.chunks_exact_mut(2).zip(&iuv.uv) {
                o.copy_from_slice(v);
            }
        }
        Ok(())
    })
}

/// A trained avatar loaded from a run directory.
pub struct AvatarModel {
    body: BodyModel,
    fine: FineModel,
    surface: SurfaceMesh,
    skinner: Skinner,
    binding: Vec<usize>,
}

impl AvatarModel {
    fn open(dir: PathBuf) -> avatar_core::Result<Self> {
        let (_, body, fine) = load_run(&dir)?;
        let surface = fine.surface()?;
        let skinner = Skinner::new(&body);
        let binding = skinner.bind(&body, &surface.mesh.vertices);
        Ok(Self {
            body,
            fine,
            surface,
            skinner,
            binding,
        })
    }
}

/// Runs the full optimization for `prompt` into `out_dir`. A null `endpoint`
/// uses the built-in mock guidance; otherwise requests go to that server.
/// `config_json` may be null (desk configuration) or a JSON training config.
///
/// # Safety
/// String arguments must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn avatar_generate(
    prompt: *const c_char,
    config_json: *const c_char,
    endpoint: *const c_char,
    out_dir: *const c_char,
) -> AvatarStatus {
    guard(|| {
        let prompt = c_str(prompt, "prompt")?;
        let out = PathBuf::from(c_str(out_dir, "out_dir")?);
        let cfg = if config_json.is_null() {
            TrainConfig::desk()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?)
                .map_err(|e| fail(AvatarStatus::InvalidArgument, e.to_string()))?
        };
        let body = Arc::new(generate_template(cfg.template_level));
        let model: Box<dyn ScoreModel> = if endpoint.is_null() {
            Box::new(ReferenceAvatar::new(body.clone()).into_guidance())
        } else {
            Box::new(RemoteGuidance::new(c_str(endpoint, "endpoint")?, Duration::from_secs(120)))
        };
        run(&cfg, &PromptSpec::named(prompt), model.as_ref(), &body, &out).or_status()?;
        Ok(())
    })
}

/// Loads the result of [`avatar_generate`] from `run_dir`.
///
/// # Safety
/// `run_dir` must be NUL-terminated; `out` must point to storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn avatar_model_open(run_dir: *const c_char, out: *mut *mut AvatarModel) -> AvatarStatus {
    guard(|| {
        let out = out_slice(out, 1, 1, "out")?;
        let dir = PathBuf::from(c_str(run_dir, "run_dir")?);
        out[0] = Box::into_raw(Box::new(AvatarModel::open(dir).or_status()?));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`avatar_model_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn avatar_model_free(model: *mut AvatarModel) {
    if !model.is_null() {
        // SAFETY: the handle came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Vertex and triangle counts of the avatar mesh.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn avatar_model_mesh_size(
    model: *const AvatarModel,
    vertices: *mut usize,
    triangles: *mut usize,
) -> AvatarStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        out_slice(vertices, 1, 1, "vertices")?[0] = m.surface.mesh.vertices.len();
        out_slice(triangles, 1, 1, "triangles")?[0] = m.surface.mesh.faces.len();
        Ok(())
    })
}

/// Writes the avatar mesh in `pose`: `3 × vertices` positions, `3 × triangles`
/// indices, and (if `out_rgb` is non-null) `3 × vertices` colors.
///
/// # Safety
/// Pointers must be valid and sized as given by [`avatar_model_mesh_size`].
#[no_mangle]
pub unsafe extern "C" fn avatar_model_posed_mesh(
    model: *const AvatarModel,
    pose: *const AvatarPose,
    out_xyz: *mut f64,
    xyz_len: usize,
    out_faces: *mut u32,
    faces_len: usize,
    out_rgb: *mut f64,
) -> AvatarStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let pose = Pose::from(non_null(pose, "pose")?);
        pose.validate().or_status()?;
        let mesh = &m.surface.mesh;
        let xyz = out_slice(out_xyz, xyz_len, 3 * mesh.vertices.len(), "out_xyz")?;
        let faces = out_slice(out_faces, faces_len, 3 * mesh.faces.len(), "out_faces")?;
        let posed = m
            .skinner
            .pose(&m.body, &bone_transforms(&m.body, &pose), &mesh.vertices, &m.binding);
        for (o, p) in xyz.chunks_exact_mut(3).zip(&posed) {
            o.copy_from_slice(&[p.x, p.y, p.z]);
        }
        for (o, f) in faces.chunks_exact_mut(3).zip(&mesh.faces) {
            o.copy_from_slice(f);
        }
        if !out_rgb.is_null() {
            let rgb = out_slice(out_rgb, 3 * mesh.vertices.len(), 3 * mesh.vertices.len(), "out_rgb")?;
            for (o, c) in rgb.chunks_exact_mut(3).zip(&m.surface.colors) {
                o.copy_from_slice(c);
            }
        }
        Ok(())
    })
}

/// Renders the posed avatar into `out_rgb` (`3 × width × height` doubles in [0, 1]).
///
/// # Safety
/// Pointers must be valid; `out_rgb` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn avatar_model_render(
    model: *const AvatarModel,
    pose: *const AvatarPose,
    camera: *const AvatarCamera,
    out_rgb: *mut f64,
    len: usize,
) -> AvatarStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let pose = Pose::from(non_null(pose, "pose")?);
        let spec = CameraSpec::from(non_null(camera, "camera")?);
        let out = out_slice(out_rgb, len, 3 * spec.width * spec.height, "out_rgb")?;
        let img = m.fine.render(&m.body, &m.skinner, &pose, &spec).or_status()?.image;
        out.copy_from_slice(&img.data);
        Ok(())
    })
}
