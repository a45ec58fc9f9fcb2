use super::{FineModel, ReferenceAvatar};
use crate::body_model::{joint_index, BodyModel, Pose};
use crate::math::Vec3;
use crate::error::Result;
use crate::metrics::{densepose_part_iou, mean_present_iou, mesh_audit, psnr, EvalReport};
use crate::rasterizer::render_densepose;
use crate::tet_field::Skinner;
use crate::volume_renderer::{Camera, CameraSpec};

/// A pose seen from one camera.
#[derive(Clone, Debug)]
pub struct View {
    pub pose: Pose,
    pub camera: CameraSpec,
}

fn orbit(body: &BodyModel, resolution: usize, elevation: f64, azimuth: f64) -> CameraSpec {
    CameraSpec {
        radius: 1.8,
        elevation,
        azimuth,
        fov: 60.0,
        width: resolution,
        height: resolution,
        look_at: body.bounds().center(),
    }
}

/// Four fixed cameras around the A-pose, off the azimuths a front/side/back
/// prompt would name.
pub fn held_out_cameras(body: &BodyModel, resolution: usize) -> Vec<View> {
    [30.0, 120.0, 210.0, 300.0]
        .map(|az| View {
            pose: Pose::canonical(),
            camera: orbit(body, resolution, 15.0, az),
        })
        .to_vec()
}

/// A pose outside the training library: right arm raised and bent, left leg
/// stepping forward, head turned.
pub fn held_out_pose() -> Pose {
    let mut pose = Pose::canonical();
    let set = |pose: &mut Pose, name: &str, r: [f64; 3]| {
        pose.joint_rot[joint_index(name).expect("known joint")] = Vec3::from(r);
    };
    set(&mut pose, "right_shoulder", [0.0, 0.3, -1.2]);
    set(&mut pose, "right_elbow", [0.0, 0.9, 0.0]);
    set(&mut pose, "left_hip", [-0.35, 0.0, 0.05]);
    set(&mut pose, "left_knee", [0.5, 0.0, 0.0]);
    set(&mut pose, "head", [0.1, 0.35, 0.0]);
    pose
}

pub fn held_out_pose_view(body: &BodyModel, resolution: usize) -> View {
    View {
        pose: held_out_pose(),
        camera: orbit(body, resolution, 10.0, 20.0),
    }
}

/// Held-out cameras followed by the held-out pose.
pub fn held_out_views(body: &BodyModel, resolution: usize) -> Vec<View> {
    let mut v = held_out_cameras(body, resolution);
    v.push(held_out_pose_view(body, resolution));
    v
}

/// PSNR against the reference renders over `psnr_views`, and part IoU of the
/// avatar's part map against the body's own over `iou_views`.
pub fn evaluate(
    fine: &FineModel,
    body: &BodyModel,
    reference: &ReferenceAvatar,
    psnr_views: &[View],
    iou_views: &[View],
) -> Result<EvalReport> {
    let skinner = Skinner::new(body);
    let mut report = EvalReport::default();
    for v in psnr_views {
        let ours = fine.render(body, &skinner, &v.pose, &v.camera)?.image;
        report.psnr.push(psnr(&ours, &reference.render(&v.pose, &v.camera)?)?);
    }
    let mut ious = Vec::new();
    for v in iou_views {
        let pred = fine.densepose(body, &skinner, &v.pose, &v.camera)?;
        let (truth, _) = render_densepose(body, &v.pose, &Camera::from_spec(&v.camera)?)?;
        let per_part = densepose_part_iou(&pred, &truth)?;
        ious.push(mean_present_iou(&per_part, &truth));
        for (k, iou) in per_part {
            *report.part_iou.entry(k).or_insert(0.0) += iou / iou_views.len() as f64;
        }
    }
    report.mean_psnr = report.psnr.iter().sum::<f64>() / report.psnr.len().max(1) as f64;
    report.mean_part_iou = ious.iter().sum::<f64>() / ious.len().max(1) as f64;
    report.mesh = mesh_audit(&fine.surface()?.mesh);
    Ok(report)
}
